#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ecmvae/experts.hpp"
#include "ecmvae/param_store.hpp"

using namespace ecmvae;

namespace {

DiagGaussian scalar_gaussian(double mu, double var) {
  return DiagGaussian(Tensor::scalar(mu), Tensor::scalar(std::log(var)));
}

DiagGaussian random_gaussian(Rng& rng, std::vector<int64_t> shape) {
  Tensor mu(shape), lv(shape);
  for (auto& v : mu.data) v = rng.uniform(-2.0, 2.0);
  for (auto& v : lv.data) v = rng.uniform(-1.5, 1.5);
  return DiagGaussian(std::move(mu), std::move(lv));
}

}  // namespace

TEST_CASE("expert set validation") {
  CHECK_THROWS_AS(make_expert_set({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(make_expert_set({scalar_gaussian(0, 1)}, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(make_expert_set({scalar_gaussian(0, 1), scalar_gaussian(0, 1)}, {1.5, -0.5}),
                  std::invalid_argument);
}

TEST_CASE("poe: single expert unchanged") {
  DiagGaussian g = scalar_gaussian(0.8, 1.7);
  DiagGaussian out = poe_combine(make_expert_set({g}));
  CHECK(out.mu[0] == doctest::Approx(g.mu[0]).epsilon(1e-12));
  CHECK(out.logvar[0] == doctest::Approx(g.logvar[0]).epsilon(1e-12));
}

TEST_CASE("poe hand values") {
  {
    DiagGaussian out = poe_combine(make_expert_set({scalar_gaussian(0, 1), scalar_gaussian(0, 1)}));
    CHECK(out.mu[0] == doctest::Approx(0.0));
    CHECK(std::exp(out.logvar[0]) == doctest::Approx(0.5));
  }
  {
    DiagGaussian out =
        poe_combine(make_expert_set({scalar_gaussian(1, 1), scalar_gaussian(-1, 1)}));
    CHECK(out.mu[0] == doctest::Approx(0.0));
    CHECK(std::exp(out.logvar[0]) == doctest::Approx(0.5));
  }
}

TEST_CASE("poe matches the analytic two-Gaussian product on 1000 random pairs") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    Rng r = rng.fork(uint64_t(i));
    DiagGaussian a = random_gaussian(r, {1, 2});
    DiagGaussian b = random_gaussian(r, {1, 2});
    DiagGaussian out = poe_combine(make_expert_set({a, b}));
    for (int64_t j = 0; j < 2; ++j) {
      const double va = std::exp(a.logvar[j]), vb = std::exp(b.logvar[j]);
      const double v = 1.0 / (1.0 / va + 1.0 / vb);
      const double m = v * (a.mu[j] / va + b.mu[j] / vb);
      CHECK(out.mu[j] == doctest::Approx(m).epsilon(1e-12));
      CHECK(std::exp(out.logvar[j]) == doctest::Approx(v).epsilon(1e-12));
    }
  }
}

TEST_CASE("graph poe matches plain poe and is differentiable") {
  Rng rng(5);
  DiagGaussian a = random_gaussian(rng, {2, 2});
  DiagGaussian b = random_gaussian(rng, {2, 2});
  Tape t;
  DiagGaussianVar g = poe_combine(t, make_expert_set(t, {lift(t, a), lift(t, b)}));
  DiagGaussian plain = poe_combine(make_expert_set({a, b}));
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(t.val(g.mu)[i] == doctest::Approx(plain.mu[i]).epsilon(1e-12));
    CHECK(t.val(g.logvar)[i] == doctest::Approx(plain.logvar[i]).epsilon(1e-12));
  }

  ParamStore store;
  store.add("mu1", a.mu);
  store.add("lv1", a.logvar);
  store.add("mu2", b.mu);
  store.add("lv2", b.logvar);
  auto fn = [](Tape& tp, ParamBinder& p) {
    auto s = make_expert_set(tp, {make_gaussian(tp, p("mu1"), p("lv1")),
                                  make_gaussian(tp, p("mu2"), p("lv2"))});
    DiagGaussianVar g2 = poe_combine(tp, s);
    return tp.add(tp.sum(tp.square(g2.mu)), tp.sum(tp.square(g2.logvar)));
  };
  CHECK(grad_check(store, fn, 1e-5, 1e-4).pass);
}

TEST_CASE("moe_sample: K=1 identical to reparam_sample") {
  DiagGaussian g = scalar_gaussian(2.0, 0.5);
  Rng r1(9), r2(9);
  Tensor a = moe_sample(make_expert_set({g}), r1);
  Tensor b = reparam_sample(g, r2);
  CHECK(a == b);
}

TEST_CASE("moe_sample: degenerate weights always pick expert 0") {
  ExpertSet s = make_expert_set({scalar_gaussian(100, 1e-6), scalar_gaussian(-100, 1e-6)},
                                {1.0, 0.0});
  Rng rng(11);
  for (int i = 0; i < 200; ++i) CHECK(moe_sample(s, rng)[0] > 0.0);
}

TEST_CASE("moe_sample mean for separated components") {
  ExpertSet s = make_expert_set({scalar_gaussian(-5, 1), scalar_gaussian(5, 1)});
  Rng rng(13);
  const int64_t n = 100000;
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += moe_sample(s, rng)[0];
  const double mean = acc / double(n);
  const double se = std::sqrt(26.0 / double(n));  // mixture variance = 1 + 25
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("mixture_log_prob collapses and hand value") {
  DiagGaussian g = scalar_gaussian(0.4, 1.3);
  Tensor x = Tensor::scalar(-0.2);
  CHECK(mixture_log_prob(make_expert_set({g}), x) == doctest::Approx(log_prob(g, x)));
  CHECK(mixture_log_prob(make_expert_set({g, g}), x) ==
        doctest::Approx(log_prob(g, x)).epsilon(1e-12));
  // two components N(+-5, 1) at x=0: ln pdf_{N(5,1)}(0) = -0.5 ln(2pi) - 12.5
  ExpertSet m = make_expert_set({scalar_gaussian(-5, 1), scalar_gaussian(5, 1)});
  CHECK(mixture_log_prob(m, Tensor::scalar(0.0)) ==
        doctest::Approx(-0.5 * kLn2Pi - 12.5).epsilon(1e-9));
}

TEST_CASE("graph mixture_log_prob matches plain") {
  Rng rng(15);
  ExpertSet m = make_expert_set({random_gaussian(rng, {2, 2}), random_gaussian(rng, {2, 2})},
                                {0.3, 0.7});
  Tensor x({2, 2});
  for (auto& v : x.data) v = rng.normal();
  Tape t;
  ExpertSetVar mv = make_expert_set(t, {lift(t, m.experts[0]), lift(t, m.experts[1])}, {0.3, 0.7});
  CHECK(t.scalar(mixture_log_prob(t, mv, t.input(x))) ==
        doctest::Approx(mixture_log_prob(m, x)).epsilon(1e-12));
}

TEST_CASE("moe_kl_upper hand values and error paths") {
  ExpertSet q = make_expert_set({scalar_gaussian(1, 1), scalar_gaussian(0, 1)});
  ExpertSet p = make_expert_set({scalar_gaussian(0, 1), scalar_gaussian(0, std::exp(1.0))});
  // per-modal KLs 0.5 and 0.18394; equal weights give 0.34197
  const double kl1 = kl_closed_form(q.experts[0], p.experts[0]);
  const double kl2 = kl_closed_form(q.experts[1], p.experts[1]);
  CHECK(kl1 == doctest::Approx(0.5));
  CHECK(kl2 == doctest::Approx(0.18394).epsilon(1e-4));
  CHECK(moe_kl_upper(q, p) == doctest::Approx(0.5 * kl1 + 0.5 * kl2));
  CHECK(moe_kl_upper(q, q) == doctest::Approx(0.0));
  ExpertSet p1 = make_expert_set({scalar_gaussian(0, 1)});
  CHECK_THROWS_AS(moe_kl_upper(q, p1), std::invalid_argument);
}

TEST_CASE("moe_kl_upper dominates the MC mixture KL (Jensen direction)") {
  Rng rng(17);
  for (int i = 0; i < 10; ++i) {
    Rng r = rng.fork(uint64_t(i));
    ExpertSet q = make_expert_set({random_gaussian(r, {1, 2}), random_gaussian(r, {1, 2})});
    ExpertSet p = make_expert_set({random_gaussian(r, {1, 2}), random_gaussian(r, {1, 2})});
    McEstimate mc = mc_mixture_kl(q, p, 20000, r);
    CHECK(moe_kl_upper(q, p) >= mc.mean - 3.0 * mc.se);
  }
}

TEST_CASE("jsd: identical components give zero") {
  DiagGaussian g = scalar_gaussian(0.3, 1.1);
  ExpertSet q = make_expert_set({g, g});
  Rng rng(19);
  McEstimate e = jsd_dynamic_prior(q, q, 20000, rng);
  CHECK(std::abs(e.mean) < 3.0 * e.se + 1e-12);
}

TEST_CASE("jsd: symmetric under swapping q and p with mirrored pi") {
  Rng rng(21);
  ExpertSet q = make_expert_set({random_gaussian(rng, {1, 1})});
  ExpertSet p = make_expert_set({random_gaussian(rng, {1, 1})});
  Rng r1(77), r2(77);
  McEstimate a = jsd_dynamic_prior(q, p, 50000, r1, {0.25, 0.75});
  McEstimate b = jsd_dynamic_prior(p, q, 50000, r2, {0.75, 0.25});
  CHECK(std::abs(a.mean - b.mean) < 3.0 * (a.se + b.se));
}

TEST_CASE("jsd saturates to ln 2 for disjoint components") {
  ExpertSet q = make_expert_set({scalar_gaussian(-20, 1)});
  ExpertSet p = make_expert_set({scalar_gaussian(20, 1)});
  Rng rng(23);
  McEstimate e = jsd_dynamic_prior(q, p, 100000, rng);
  CHECK(e.mean == doctest::Approx(std::log(2.0)).epsilon(0.02));
}

TEST_CASE("jsd stays within [0, ln(2K)] for uniform pi") {
  Rng rng(25);
  for (int i = 0; i < 20; ++i) {
    Rng r = rng.fork(uint64_t(i));
    ExpertSet q = make_expert_set({random_gaussian(r, {1, 2}), random_gaussian(r, {1, 2})});
    ExpertSet p = make_expert_set({random_gaussian(r, {1, 2}), random_gaussian(r, {1, 2})});
    McEstimate e = jsd_dynamic_prior(q, p, 5000, r);
    CHECK(e.mean > -3.0 * e.se);
    CHECK(e.mean < std::log(4.0) + 3.0 * e.se);
  }
}

TEST_CASE("graph jsd agrees with the plain estimator and is differentiable") {
  Rng rng(27);
  DiagGaussian qa = random_gaussian(rng, {1, 2});
  DiagGaussian qv = random_gaussian(rng, {1, 2});
  DiagGaussian pa = random_gaussian(rng, {1, 2});
  DiagGaussian pv = random_gaussian(rng, {1, 2});

  // value agreement at matched sample counts via separate seeds
  ExpertSet q = make_expert_set({qa, qv});
  ExpertSet p = make_expert_set({pa, pv});
  Rng rp(101);
  McEstimate plain = jsd_dynamic_prior(q, p, 40000, rp);
  Tape t;
  Rng rg(202);
  Var g = jsd_dynamic_prior(t, make_expert_set(t, {lift(t, qa), lift(t, qv)}),
                            make_expert_set(t, {lift(t, pa), lift(t, pv)}), 4000, rg);
  // both estimate the same quantity; tolerance from the plain SE
  CHECK(std::abs(t.scalar(g) - plain.mean) < 10.0 * plain.se + 0.02);

  // gradients flow into all four experts (posteriors and priors)
  ParamStore store;
  store.add("qa_mu", qa.mu);
  store.add("qa_lv", qa.logvar);
  store.add("pa_mu", pa.mu);
  store.add("pa_lv", pa.logvar);
  auto fn = [&](Tape& tp, ParamBinder& pb) {
    auto qset = make_expert_set(
        tp, {make_gaussian(tp, pb("qa_mu"), pb("qa_lv")), lift(tp, qv)});
    auto pset = make_expert_set(
        tp, {make_gaussian(tp, pb("pa_mu"), pb("pa_lv")), lift(tp, pv)});
    Rng fr(555);  // frozen noise: same draws on every rebuild
    return jsd_dynamic_prior(tp, qset, pset, 8, fr);
  };
  GradCheckReport rep = grad_check(store, fn, 1e-5, 1e-4);
  INFO("worst ", rep.worst, " err ", rep.max_rel_err);
  CHECK(rep.pass);
  store.zero_grads();
  forward_backward(store, fn);
  double pa_grad_norm = 0.0;
  for (double v : store.grad("pa_mu").data) pa_grad_norm += v * v;
  CHECK(pa_grad_norm > 0.0);  // prior experts receive gradient too
}

TEST_CASE("divergence mode parsing") {
  CHECK(divergence_from_string("js") == DivergenceMode::JS);
  CHECK(divergence_from_string("PoE") == DivergenceMode::PoE);
  CHECK(divergence_from_string("MOE") == DivergenceMode::MoE);
  CHECK(divergence_from_string("kl") == DivergenceMode::KL);
  CHECK_THROWS_AS(divergence_from_string("wasserstein"), std::invalid_argument);
  CHECK(to_string(DivergenceMode::JS) == "JS");
}
