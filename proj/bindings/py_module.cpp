// pybind11 surface over the core operations: divergences, the factorization
// losses, the MI oracle, segmentation metrics and corpus generation.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ecmvae/experts.hpp"
#include "ecmvae/factorization.hpp"
#include "ecmvae/metrics.hpp"
#include "ecmvae/mi.hpp"
#include "ecmvae/objective.hpp"
#include "ecmvae/synth.hpp"
#include "ecmvae/trainer.hpp"

namespace py = pybind11;
using namespace ecmvae;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[size_t(i)] = a.shape(i);
  Tensor t(shape);
  std::memcpy(t.data.data(), a.data(), sizeof(double) * t.data.size());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::memcpy(a.mutable_data(), t.data.data(), sizeof(double) * t.data.size());
  return a;
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

DiagGaussian gaussian_from(const Arr& mu, const Arr& logvar) {
  return DiagGaussian(tensor_from_array(mu), tensor_from_array(logvar));
}

ExpertSet experts_from(const std::vector<std::pair<Arr, Arr>>& pairs,
                       const std::vector<double>& weights) {
  std::vector<DiagGaussian> experts;
  for (const auto& [mu, lv] : pairs) experts.push_back(gaussian_from(mu, lv));
  return make_expert_set(std::move(experts), weights);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ECMVAE core operations";

  m.def(
      "kl_closed_form",
      [](const Arr& mu_q, const Arr& lv_q, const Arr& mu_p, const Arr& lv_p) {
        return kl_closed_form(gaussian_from(mu_q, lv_q), gaussian_from(mu_p, lv_p));
      },
      py::arg("mu_q"), py::arg("logvar_q"), py::arg("mu_p"), py::arg("logvar_p"),
      "closed-form KL between diagonal Gaussians, summed over dims");

  m.def(
      "gaussian_log_prob",
      [](const Arr& mu, const Arr& lv, const Arr& x) {
        return log_prob(gaussian_from(mu, lv), tensor_from_array(x));
      },
      py::arg("mu"), py::arg("logvar"), py::arg("x"));

  m.def(
      "mc_kl",
      [](const Arr& mu_q, const Arr& lv_q, const Arr& mu_p, const Arr& lv_p, int64_t n,
         uint64_t seed) {
        Rng rng(seed);
        McEstimate e = mc_kl(gaussian_from(mu_q, lv_q), gaussian_from(mu_p, lv_p), n, rng);
        return py::make_tuple(e.mean, e.se);
      },
      py::arg("mu_q"), py::arg("logvar_q"), py::arg("mu_p"), py::arg("logvar_p"),
      py::arg("n_samples") = 10000, py::arg("seed") = 1,
      "Monte-Carlo KL estimate; returns (mean, standard_error)");

  m.def(
      "poe_combine",
      [](const std::vector<std::pair<Arr, Arr>>& experts, const std::vector<double>& weights) {
        DiagGaussian g = poe_combine(experts_from(experts, weights));
        return py::make_tuple(array_from_tensor(g.mu), array_from_tensor(g.logvar));
      },
      py::arg("experts"), py::arg("weights") = std::vector<double>{},
      "product of experts over (mu, logvar) pairs; returns (mu, logvar)");

  m.def(
      "moe_kl_upper",
      [](const std::vector<std::pair<Arr, Arr>>& q, const std::vector<std::pair<Arr, Arr>>& p,
         const std::vector<double>& weights) {
        return moe_kl_upper(experts_from(q, weights), experts_from(p, weights));
      },
      py::arg("q_experts"), py::arg("p_experts"), py::arg("weights") = std::vector<double>{});

  m.def(
      "jsd_dynamic_prior",
      [](const std::vector<std::pair<Arr, Arr>>& q, const std::vector<std::pair<Arr, Arr>>& p,
         int64_t n_per_component, uint64_t seed) {
        Rng rng(seed);
        McEstimate e = jsd_dynamic_prior(experts_from(q, {}), experts_from(p, {}),
                                         n_per_component, rng);
        return py::make_tuple(e.mean, e.se);
      },
      py::arg("q_experts"), py::arg("p_experts"), py::arg("n_per_component") = 10000,
      py::arg("seed") = 1, "JS regularizer estimate; returns (mean, standard_error)");

  m.def(
      "difference_loss",
      [](const Arr& c, const Arr& s_a, const Arr& s_v) {
        return difference_loss(tensor_from_array(c), tensor_from_array(s_a),
                               tensor_from_array(s_v));
      },
      py::arg("c"), py::arg("s_a"), py::arg("s_v"),
      "sum of squared Frobenius norms of the three cross-Gram matrices");

  m.def("gaussian_mi_oracle", &gaussian_mi_oracle, py::arg("rho"),
        "analytic MI of a correlated Gaussian pair, nats per dimension");

  m.def(
      "miou",
      [](const Arr& pred, const Arr& gt) {
        return miou(tensor_from_array(pred), tensor_from_array(gt));
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "fscore",
      [](const Arr& pred, const Arr& gt, double beta_sq, double threshold) {
        return fscore(tensor_from_array(pred), tensor_from_array(gt), beta_sq, threshold);
      },
      py::arg("pred"), py::arg("gt"), py::arg("beta_sq") = 0.3, py::arg("threshold") = 0.5);

  py::class_<SynClip>(m, "SynClip")
      .def_property_readonly("frames", [](const SynClip& c) { return array_from_tensor(c.frames); })
      .def_property_readonly("audio", [](const SynClip& c) { return array_from_tensor(c.audio); })
      .def_property_readonly("masks", [](const SynClip& c) { return array_from_tensor(c.masks); })
      .def_readonly("id", &SynClip::id)
      .def_readonly("source_class", &SynClip::source_class)
      .def_readonly("source_class2", &SynClip::source_class2);

  m.def(
      "generate_corpus",
      [](int n_clips, int n_classes, bool multi_source, uint64_t seed) {
        DatasetSpec spec;
        spec.n_clips = n_clips;
        spec.n_classes = n_classes;
        spec.multi_source = multi_source;
        spec.seed = seed;
        Corpus c = generate(spec);
        return py::make_tuple(c.clips, c.train_idx, c.val_idx, c.test_idx);
      },
      py::arg("n_clips") = 80, py::arg("n_classes") = 4, py::arg("multi_source") = false,
      py::arg("seed") = 1, "returns (clips, train_idx, val_idx, test_idx)");

  m.def(
      "train_tiny",
      [](int n_clips, int epochs, uint64_t seed, const std::string& out_dir) {
        DatasetSpec spec;
        spec.n_clips = n_clips;
        spec.seed = seed;
        Corpus corpus = generate(spec);
        TrainConfig cfg;
        cfg.mode = "ms3";
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.out_dir = out_dir;
        RunRecord rec = train(cfg, corpus);
        return py::make_tuple(rec.steps, rec.final_test.miou, rec.checkpoint_base);
      },
      py::arg("n_clips") = 16, py::arg("epochs") = 1, py::arg("seed") = 1, py::arg("out_dir"),
      "smoke-test training run; returns (steps, test_miou, checkpoint_base)");
}
