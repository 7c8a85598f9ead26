#include "ecmvae/param_store.hpp"

#include <cmath>

namespace ecmvae {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (has(name)) throw std::invalid_argument("ParamStore::add: duplicate name '" + name + "'");
  Entry e;
  e.grad = Tensor(init.shape, 0.0);
  e.value = std::move(init);
  auto [it, ok] = entries_.emplace(name, std::move(e));
  (void)ok;
  return it->second.value;
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no param '" + name + "'");
  return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no param '" + name + "'");
  return it->second.value;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no param '" + name + "'");
  return it->second.grad;
}

const Tensor& ParamStore::grad(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: no param '" + name + "'");
  return it->second.grad;
}

void ParamStore::zero_grads() {
  for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_->param(store_->value(name));
  bound_.emplace(name, v);
  return v;
}

void ParamBinder::accumulate_into_store() {
  for (const auto& [name, var] : bound_) store_->grad(name).add_scaled(tape_->grad_of(var), 1.0);
}

void ParamBinder::collect(std::map<std::string, Tensor>& out) const {
  for (const auto& [name, var] : bound_) {
    Tensor g = tape_->grad_of(var);
    auto it = out.find(name);
    if (it == out.end())
      out.emplace(name, std::move(g));
    else
      it->second.add_scaled(g, 1.0);
  }
}

double forward_backward(ParamStore& store, const GraphFn& fn) {
  Tape tape;
  ParamBinder bind(tape, store);
  Var loss = fn(tape, bind);
  double v = tape.scalar(loss);
  tape.backward(loss);
  bind.accumulate_into_store();
  return v;
}

double forward_value(ParamStore& store, const GraphFn& fn) {
  Tape tape;
  ParamBinder bind(tape, store);
  Var loss = fn(tape, bind);
  return tape.scalar(loss);
}

GradCheckReport grad_check(ParamStore& store, const GraphFn& fn, double h, double tol,
                           int64_t coords_per_param, Rng* rng) {
  if (h <= 0 || tol <= 0) throw std::invalid_argument("grad_check: h and tol must be positive");
  store.zero_grads();
  forward_backward(store, fn);
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, e] : store.entries()) analytic.emplace(name, e.grad);
  store.zero_grads();

  GradCheckReport rep;
  rep.pass = true;
  for (auto& [name, e] : store.entries()) {
    const int64_t n = e.value.numel();
    std::vector<int64_t> coords;
    if (coords_per_param < 0 || coords_per_param >= n) {
      coords.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) coords[size_t(i)] = i;
    } else {
      if (!rng) throw std::invalid_argument("grad_check: sampled coordinates need an rng");
      for (int64_t i = 0; i < coords_per_param; ++i) coords.push_back(rng->uniform_int(n));
    }
    for (int64_t idx : coords) {
      const double orig = e.value[idx];
      e.value[idx] = orig + h;
      const double fp = forward_value(store, fn);
      e.value[idx] = orig - h;
      const double fm = forward_value(store, fn);
      e.value[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.at(name)[idx];
      const double denom = std::abs(a) + std::abs(numeric);
      double err;
      if (denom < 1e-8)
        err = std::abs(a - numeric);  // absolute fallback near zero
      else
        err = std::abs(a - numeric) / denom;
      ++rep.coords_checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst = name + "[" + std::to_string(idx) + "]";
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

GradCheckReport grad_check_sampled(ParamStore& store, const GraphFn& fn, double h, double tol,
                                   int64_t n_coords, Rng& rng) {
  if (h <= 0 || tol <= 0) throw std::invalid_argument("grad_check: h and tol must be positive");
  store.zero_grads();
  forward_backward(store, fn);
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, e] : store.entries()) analytic.emplace(name, e.grad);
  store.zero_grads();

  // flat view over all coordinates
  std::vector<std::pair<std::string, int64_t>> layout;
  for (const auto& [name, e] : store.entries()) layout.emplace_back(name, e.value.numel());
  int64_t total = 0;
  for (const auto& [name, n] : layout) total += n;

  GradCheckReport rep;
  rep.pass = true;
  for (int64_t c = 0; c < n_coords; ++c) {
    int64_t flat = rng.uniform_int(total);
    std::string name;
    int64_t idx = 0;
    for (const auto& [pname, n] : layout) {
      if (flat < n) {
        name = pname;
        idx = flat;
        break;
      }
      flat -= n;
    }
    Tensor& v = store.value(name);
    const double orig = v[idx];
    v[idx] = orig + h;
    const double fp = forward_value(store, fn);
    v[idx] = orig - h;
    const double fm = forward_value(store, fn);
    v[idx] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.at(name)[idx];
    const double denom = std::abs(a) + std::abs(numeric);
    const double err = denom < 1e-8 ? std::abs(a - numeric) : std::abs(a - numeric) / denom;
    ++rep.coords_checked;
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst = name + "[" + std::to_string(idx) + "]";
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

void Adam::step(ParamStore& store) {
  ++step_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(step_));
  const double bc2 = 1.0 - std::pow(b2, double(step_));
  for (auto& [name, e] : store.entries()) {
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor(e.value.shape, 0.0)).first;
      v_.emplace(name, Tensor(e.value.shape, 0.0));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    if (!m.same_shape(e.value))
      throw std::invalid_argument("Adam: moment/param shape mismatch for '" + name + "'");
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      const double g = e.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      e.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    e.grad.fill(0.0);
  }
}

Tensor normal_init(const std::vector<int64_t>& shape, double stddev, uint64_t seed,
                   const std::string& name) {
  uint64_t k = seed;
  for (char c : name) k = Rng::mix(k, uint64_t(uint8_t(c)) + 0x100);
  Rng rng(Rng::mix(k, streams::kModelInit));
  Tensor t(shape);
  for (auto& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace ecmvae
