#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "ecmvae/checkpoint.hpp"
#include "ecmvae/param_store.hpp"

using namespace ecmvae;

TEST_CASE("zero gradient leaves parameters unchanged") {
  ParamStore store;
  store.add("w", Tensor({3}, 1.5));
  Adam adam;
  adam.step(store);
  for (int i = 0; i < 3; ++i) CHECK(store.value("w")[i] == 1.5);
}

TEST_CASE("first Adam step moves by ~lr against the gradient") {
  ParamStore store;
  store.add("w", Tensor::scalar(0.0));
  store.grad("w")[0] = 1.0;
  Adam adam(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  adam.step(store);
  // bias-corrected first step: lr * g/(|g| + eps)
  CHECK(store.value("w")[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(store.grad("w")[0] == 0.0);  // grads zeroed afterwards
}

TEST_CASE("repeated identical gradients move monotonically") {
  ParamStore store;
  store.add("w", Tensor::scalar(0.0));
  Adam adam(AdamConfig{0.05, 0.9, 0.999, 1e-8});
  double prev = 0.0;
  for (int i = 0; i < 10; ++i) {
    store.grad("w")[0] = 2.0;
    adam.step(store);
    CHECK(store.value("w")[0] < prev);
    prev = store.value("w")[0];
  }
  CHECK(adam.step_count() == 10);
}

TEST_CASE("grad_check flags a corrupted gradient") {
  ParamStore store;
  store.add("w", Tensor({4}, 0.3));
  // correct function
  auto good = [](Tape& t, ParamBinder& p) { return t.sum(t.square(p("w"))); };
  CHECK(grad_check(store, good, 1e-5, 1e-4).pass);
  // corrupted: 1.1*sum(w^2) minus a constant recomputed from the current
  // values, so the value equals sum(w^2) everywhere but the tape gradient is
  // 1.1x the true one
  auto corrupted = [&](Tape& t, ParamBinder& p) {
    Var w = p("w");
    double c = 0.0;
    for (double x : t.val(w).data) c += 0.1 * x * x;
    return t.add_scalar(t.mul_scalar(t.sum(t.square(w)), 1.1), -c);
  };
  CHECK_FALSE(grad_check(store, corrupted, 1e-5, 1e-4).pass);
}

TEST_CASE("grad_check linear function is exact") {
  ParamStore store;
  store.add("w", Tensor({5}, 0.7));
  auto fn = [](Tape& t, ParamBinder& p) { return t.mul_scalar(t.sum(p("w")), 3.0); };
  GradCheckReport rep = grad_check(store, fn, 1e-3, 1e-4);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("grad_check composed MLP loss") {
  Rng rng(8);
  ParamStore store;
  Tensor w1({6, 4}), w2({4, 1});
  for (auto& v : w1.data) v = rng.normal(0, 0.5);
  for (auto& v : w2.data) v = rng.normal(0, 0.5);
  store.add("w1", w1);
  store.add("w2", w2);
  store.add("b", Tensor({4}, 0.1));
  Tensor x({2, 6});
  for (auto& v : x.data) v = rng.normal();
  auto fn = [x](Tape& t, ParamBinder& p) {
    Var h = t.tanh(t.add_rowwise(t.matmul(t.input(x), p("w1")), p("b")));
    return t.mean(t.sigmoid(t.matmul(h, p("w2"))));
  };
  GradCheckReport rep = grad_check(store, fn, 1e-5, 1e-4);
  INFO("worst ", rep.worst, " err ", rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  namespace fs = std::filesystem;
  Rng rng(31);
  ParamStore store;
  Tensor a({3, 5}), b({7});
  for (auto& v : a.data) v = rng.normal();
  for (auto& v : b.data) v = rng.normal();
  store.add("net.a", a);
  store.add("net.b", b);
  Adam adam(AdamConfig{0.01, 0.9, 0.999, 1e-8});
  store.grad("net.a").fill(0.5);
  store.grad("net.b").fill(-0.25);
  adam.step(store);

  fs::path dir = fs::temp_directory_path() / "ecmvae_ckpt_test";
  fs::create_directories(dir);
  std::string base = (dir / "ck").string();
  save_checkpoint(base, store, &adam, R"({"note":"test"})");

  ParamStore loaded;
  Adam adam2;
  std::string cfg;
  load_checkpoint(base, loaded, &adam2, &cfg);
  CHECK(loaded.value("net.a") == store.value("net.a"));
  CHECK(loaded.value("net.b") == store.value("net.b"));
  CHECK(adam2.step_count() == 1);
  CHECK(adam2.m().at("net.a") == adam.m().at("net.a"));
  CHECK(adam2.v().at("net.b") == adam.v().at("net.b"));
  CHECK(cfg.find("note") != std::string::npos);

  // re-saving the loaded state reproduces identical bytes
  std::string base2 = (dir / "ck2").string();
  save_checkpoint(base2, loaded, &adam2, cfg);
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(base + ".bin") == slurp(base2 + ".bin"));

  // corrupted magic -> version mismatch error
  {
    std::fstream f(base + ".bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XX", 2);
  }
  ParamStore junk;
  CHECK_THROWS_AS(load_checkpoint(base, junk, nullptr, nullptr), IoError);
  fs::remove_all(dir);
}

TEST_CASE("duplicate parameter names are rejected") {
  ParamStore store;
  store.add("w", Tensor({2}, 0.0));
  CHECK_THROWS_AS(store.add("w", Tensor({2}, 0.0)), std::invalid_argument);
}
