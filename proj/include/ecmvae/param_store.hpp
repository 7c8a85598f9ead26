#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ecmvae/autodiff.hpp"
#include "ecmvae/rng.hpp"
#include "ecmvae/tensor.hpp"

namespace ecmvae {

// Named parameter collection with matching gradient buffers. Ordered map so
// iteration (Adam, checkpoints, gradient reduction) is deterministic.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  Tensor& add(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;

  void zero_grads();
  int64_t param_count() const;
  std::vector<std::string> names() const;

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

// Leafs ParamStore entries onto a tape on demand and can push the tape's
// gradients back (or hand them out for ordered cross-thread reduction).
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

  Var operator()(const std::string& name);

  // store.grad += tape grads for every bound param
  void accumulate_into_store();
  // collect tape grads into `out` (missing keys created as zeros)
  void collect(std::map<std::string, Tensor>& out) const;

  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape* tape_;
  ParamStore* store_;
  std::map<std::string, Var> bound_;
};

using GraphFn = std::function<Var(Tape&, ParamBinder&)>;

// Builds the graph, checks the output is scalar and finite, runs the reverse
// sweep and accumulates gradients into the store. Returns the loss.
double forward_backward(ParamStore& store, const GraphFn& fn);
// Value only; no reverse sweep, no gradient writes.
double forward_value(ParamStore& store, const GraphFn& fn);

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::string worst;  // "param[idx]" of the worst coordinate
  int64_t coords_checked = 0;
};

// Central finite differences against the analytic gradients of fn.
// coords_per_param < 0 checks every coordinate; otherwise that many random
// coordinates per parameter. Coordinates with |analytic|+|numeric| < 1e-8
// fall back to absolute error.
GradCheckReport grad_check(ParamStore& store, const GraphFn& fn, double h, double tol,
                           int64_t coords_per_param = -1, Rng* rng = nullptr);

// same, but sampling n_coords (param, index) pairs uniformly over the whole
// store rather than per parameter
GradCheckReport grad_check_sampled(ParamStore& store, const GraphFn& fn, double h, double tol,
                                   int64_t n_coords, Rng& rng);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are created on first step and
// keyed by parameter name; grads are zeroed after each update.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& store);

  int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }

  // checkpoint access
  std::map<std::string, Tensor>& m() { return m_; }
  std::map<std::string, Tensor>& v() { return v_; }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

// He-style init helpers; the stream is derived from (seed, name) so layout
// does not depend on registration order.
Tensor normal_init(const std::vector<int64_t>& shape, double stddev, uint64_t seed,
                   const std::string& name);

}  // namespace ecmvae
