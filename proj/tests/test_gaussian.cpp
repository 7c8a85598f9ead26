#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecmvae/gaussian.hpp"
#include "ecmvae/param_store.hpp"

using namespace ecmvae;

namespace {

DiagGaussian random_gaussian(Rng& rng, std::vector<int64_t> shape, double mu_range = 2.0,
                             double lv_range = 1.5) {
  Tensor mu(shape), lv(shape);
  for (auto& v : mu.data) v = rng.uniform(-mu_range, mu_range);
  for (auto& v : lv.data) v = rng.uniform(-lv_range, lv_range);
  return DiagGaussian(std::move(mu), std::move(lv));
}

DiagGaussian scalar_gaussian(double mu, double var) {
  return DiagGaussian(Tensor::scalar(mu), Tensor::scalar(std::log(var)));
}

}  // namespace

TEST_CASE("logvar is clamped at construction") {
  DiagGaussian d(Tensor::scalar(0.0), Tensor::scalar(25.0));
  CHECK(d.logvar[0] == kLogvarHi);
  DiagGaussian d2(Tensor::scalar(0.0), Tensor::scalar(-25.0));
  CHECK(d2.logvar[0] == kLogvarLo);
}

TEST_CASE("reparam with zero noise returns mu exactly") {
  Tape t;
  Tensor mu = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  DiagGaussianVar d = make_gaussian(t, t.input(mu), t.input(Tensor({2, 3}, 0.7)));
  Var s = reparam_sample(t, d, Tensor({2, 3}, 0.0));
  CHECK(t.val(s) == mu);
}

TEST_CASE("reparam sample moments, standard normal") {
  Rng rng(42);
  DiagGaussian d(Tensor({1, 1}, 0.0), Tensor({1, 1}, 0.0));
  const int64_t n = 1000000;
  double s = 0, s2 = 0;
  for (int64_t i = 0; i < n; ++i) {
    Tensor z = reparam_sample(d, rng);
    s += z[0];
    s2 += z[0] * z[0];
  }
  const double mean = s / double(n);
  const double var = s2 / double(n) - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(double(n)));
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("gradient of mean(sample) w.r.t. mu is 1/(T*L)") {
  ParamStore store;
  store.add("mu", Tensor({2, 4}, 0.3));
  store.add("lv", Tensor({2, 4}, -0.2));
  Rng rng(5);
  Tensor noise({2, 4});
  for (auto& v : noise.data) v = rng.normal();
  forward_backward(store, [&](Tape& t, ParamBinder& p) {
    DiagGaussianVar d = make_gaussian(t, p("mu"), p("lv"));
    return t.mean(reparam_sample(t, d, noise));
  });
  for (int64_t i = 0; i < 8; ++i) CHECK(store.grad("mu")[i] == doctest::Approx(1.0 / 8.0));
}

TEST_CASE("closed-form KL hand values") {
  CHECK(kl_closed_form(scalar_gaussian(0, 1), scalar_gaussian(0, 1)) == doctest::Approx(0.0));
  CHECK(kl_closed_form(scalar_gaussian(1, 1), scalar_gaussian(0, 1)) == doctest::Approx(0.5));
  CHECK(kl_closed_form(scalar_gaussian(0, 1), scalar_gaussian(0, std::exp(1.0))) ==
        doctest::Approx(0.5 + 0.5 * std::exp(-1.0) - 0.5).epsilon(1e-9));
}

TEST_CASE("KL nonnegative, zero iff equal, on 1000 random pairs") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    Rng r = rng.fork(uint64_t(i));
    DiagGaussian q = random_gaussian(r, {2, 3});
    DiagGaussian p = random_gaussian(r, {2, 3});
    CHECK(kl_closed_form(q, p) >= 0.0);
    CHECK(kl_closed_form(q, q) == doctest::Approx(0.0).epsilon(1e-12));
  }
  DiagGaussian q = scalar_gaussian(0.1, 1.0), p = scalar_gaussian(0.0, 1.0);
  CHECK(kl_closed_form(q, p) > 1e-12);
}

TEST_CASE("log_prob hand value and mode") {
  DiagGaussian d = scalar_gaussian(0, 1);
  CHECK(log_prob(d, Tensor::scalar(0.0)) == doctest::Approx(-0.5 * kLn2Pi));
  const double at_mu = log_prob(d, Tensor::scalar(0.0));
  for (double x : {-2.0, -0.5, 0.3, 1.7}) CHECK(log_prob(d, Tensor::scalar(x)) < at_mu);
}

TEST_CASE("exp(log_prob) integrates to 1 (importance check, 1 dim)") {
  DiagGaussian d = scalar_gaussian(0.7, 0.6);
  DiagGaussian prop = scalar_gaussian(0.7, 2.4);
  Rng rng(11);
  const int64_t n = 200000;
  double s = 0, s2 = 0;
  for (int64_t i = 0; i < n; ++i) {
    Tensor x = reparam_sample(prop, rng);
    const double w = std::exp(log_prob(d, x) - log_prob(prop, x));
    s += w;
    s2 += w * w;
  }
  const double mean = s / double(n);
  const double se = std::sqrt((s2 / double(n) - mean * mean) / double(n));
  CHECK(std::abs(mean - 1.0) < 3.0 * se + 1e-4);
}

TEST_CASE("mc_kl agrees with the closed form") {
  Rng rng(13);
  DiagGaussian q = random_gaussian(rng, {2, 3});
  DiagGaussian p = random_gaussian(rng, {2, 3});
  const double exact = kl_closed_form(q, p);
  McEstimate e = mc_kl(q, p, 200000, rng);
  CHECK(std::abs(e.mean - exact) < 3.0 * e.se);
  McEstimate z = mc_kl(q, q, 50000, rng);
  CHECK(std::abs(z.mean) < 3.0 * z.se + 1e-12);
}

TEST_CASE("mc_kl standard error shrinks like 1/sqrt(n)") {
  Rng rng(17);
  DiagGaussian q = random_gaussian(rng, {1, 2});
  DiagGaussian p = random_gaussian(rng, {1, 2});
  Rng r1 = rng.fork(1), r2 = rng.fork(2);
  McEstimate a = mc_kl(q, p, 50000, r1);
  McEstimate b = mc_kl(q, p, 200000, r2);
  CHECK(a.se / b.se == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("KL and reparam gradients pass grad_check") {
  Rng rng(19);
  ParamStore store;
  Tensor mq({2, 3}), lq({2, 3}), mp({2, 3}), lp({2, 3});
  for (auto* t : {&mq, &lq, &mp, &lp})
    for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
  store.add("mu_q", mq);
  store.add("lv_q", lq);
  store.add("mu_p", mp);
  store.add("lv_p", lp);
  auto kl_fn = [](Tape& t, ParamBinder& p) {
    DiagGaussianVar q = make_gaussian(t, p("mu_q"), p("lv_q"));
    DiagGaussianVar pr = make_gaussian(t, p("mu_p"), p("lv_p"));
    return kl_closed_form(t, q, pr);
  };
  GradCheckReport rep = grad_check(store, kl_fn, 1e-5, 1e-4);
  INFO("worst ", rep.worst);
  CHECK(rep.pass);

  Tensor noise({2, 3});
  for (auto& v : noise.data) v = rng.normal();
  auto rs_fn = [noise](Tape& t, ParamBinder& p) {
    DiagGaussianVar q = make_gaussian(t, p("mu_q"), p("lv_q"));
    return t.sum(t.square(reparam_sample(t, q, noise)));
  };
  CHECK(grad_check(store, rs_fn, 1e-5, 1e-4).pass);
}

TEST_CASE("graph KL and log_prob match the plain versions") {
  Rng rng(23);
  DiagGaussian q = random_gaussian(rng, {3, 2});
  DiagGaussian p = random_gaussian(rng, {3, 2});
  Tensor x({3, 2});
  for (auto& v : x.data) v = rng.normal();
  Tape t;
  CHECK(t.scalar(kl_closed_form(t, lift(t, q), lift(t, p))) ==
        doctest::Approx(kl_closed_form(q, p)).epsilon(1e-12));
  CHECK(t.scalar(log_prob(t, lift(t, q), t.input(x))) ==
        doctest::Approx(log_prob(q, x)).epsilon(1e-12));
}

TEST_CASE("shape mismatch raises") {
  DiagGaussian a = scalar_gaussian(0, 1);
  DiagGaussian b(Tensor({2}, 0.0), Tensor({2}, 0.0));
  CHECK_THROWS_AS(kl_closed_form(a, b), std::invalid_argument);
  CHECK_THROWS_AS(log_prob(a, Tensor({3}, 0.0)), std::invalid_argument);
}
