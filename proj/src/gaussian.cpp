#include "ecmvae/gaussian.hpp"

#include <cmath>

namespace ecmvae {

DiagGaussian::DiagGaussian(Tensor mu_, Tensor logvar_) : mu(std::move(mu_)), logvar(std::move(logvar_)) {
  require_same_shape(mu, logvar, "DiagGaussian");
  for (auto& v : logvar.data) v = v < kLogvarLo ? kLogvarLo : (v > kLogvarHi ? kLogvarHi : v);
}

Tensor reparam_sample(const DiagGaussian& d, Rng& rng) {
  Tensor out(d.mu.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = d.mu[i] + std::exp(0.5 * d.logvar[i]) * rng.normal();
  return out;
}

double kl_closed_form(const DiagGaussian& q, const DiagGaussian& p) {
  require_same_shape(q.mu, p.mu, "kl_closed_form");
  double acc = 0.0;
  for (int64_t i = 0; i < q.mu.numel(); ++i) {
    const double dm = q.mu[i] - p.mu[i];
    acc += 0.5 * (p.logvar[i] - q.logvar[i]) +
           (std::exp(q.logvar[i]) + dm * dm) / (2.0 * std::exp(p.logvar[i])) - 0.5;
  }
  return acc;
}

double log_prob(const DiagGaussian& d, const Tensor& x) {
  require_same_shape(d.mu, x, "log_prob");
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double dm = x[i] - d.mu[i];
    acc += -0.5 * (kLn2Pi + d.logvar[i] + dm * dm * std::exp(-d.logvar[i]));
  }
  return acc;
}

McEstimate mc_kl(const DiagGaussian& q, const DiagGaussian& p, int64_t n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("mc_kl: n_samples must be >= 1");
  double acc = 0.0, acc2 = 0.0;
  for (int64_t s = 0; s < n_samples; ++s) {
    Tensor z = reparam_sample(q, rng);
    const double v = log_prob(q, z) - log_prob(p, z);
    acc += v;
    acc2 += v * v;
  }
  McEstimate e;
  e.n = n_samples;
  e.mean = acc / double(n_samples);
  const double var = std::max(0.0, acc2 / double(n_samples) - e.mean * e.mean);
  e.se = std::sqrt(var / double(n_samples));
  return e;
}

DiagGaussianVar make_gaussian(Tape& t, Var mu, Var raw_logvar) {
  require_same_shape(t.val(mu), t.val(raw_logvar), "make_gaussian");
  return DiagGaussianVar{mu, t.clamp(raw_logvar, kLogvarLo, kLogvarHi)};
}

Var reparam_sample(Tape& t, const DiagGaussianVar& d, const Tensor& noise) {
  require_same_shape(t.val(d.mu), noise, "reparam_sample");
  Var std_dev = t.exp(t.mul_scalar(d.logvar, 0.5));
  return t.add(d.mu, t.mul(std_dev, t.input(noise)));
}

Var reparam_sample(Tape& t, const DiagGaussianVar& d, Rng& rng) {
  Tensor noise(t.val(d.mu).shape);
  for (auto& v : noise.data) v = rng.normal();
  return reparam_sample(t, d, noise);
}

Var kl_closed_form(Tape& t, const DiagGaussianVar& q, const DiagGaussianVar& p) {
  require_same_shape(t.val(q.mu), t.val(p.mu), "kl_closed_form");
  Var dm = t.sub(q.mu, p.mu);
  Var inv_var_p = t.exp(t.mul_scalar(p.logvar, -1.0));
  Var num = t.add(t.exp(q.logvar), t.square(dm));
  Var term = t.add(t.mul_scalar(t.sub(p.logvar, q.logvar), 0.5),
                   t.mul_scalar(t.mul(num, inv_var_p), 0.5));
  return t.sum(t.add_scalar(term, -0.5));
}

Var log_prob(Tape& t, const DiagGaussianVar& d, Var x) {
  require_same_shape(t.val(d.mu), t.val(x), "log_prob");
  Var dm = t.sub(x, d.mu);
  Var quad = t.mul(t.square(dm), t.exp(t.mul_scalar(d.logvar, -1.0)));
  Var per_dim = t.add_scalar(t.add(d.logvar, quad), kLn2Pi);
  return t.mul_scalar(t.sum(per_dim), -0.5);
}

DiagGaussian value_of(const Tape& t, const DiagGaussianVar& d) {
  return DiagGaussian(t.val(d.mu), t.val(d.logvar));
}

DiagGaussianVar lift(Tape& t, const DiagGaussian& d) {
  return DiagGaussianVar{t.input(d.mu), t.input(d.logvar)};
}

}  // namespace ecmvae
