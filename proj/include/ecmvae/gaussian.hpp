#pragma once

#include "ecmvae/autodiff.hpp"
#include "ecmvae/rng.hpp"
#include "ecmvae/tensor.hpp"

namespace ecmvae {

inline constexpr double kLogvarLo = -10.0;
inline constexpr double kLogvarHi = 10.0;
inline constexpr double kLn2Pi = 1.8378770664093454835606594728112;

// ------------------------------------------------------------- plain values

// Diagonal Gaussian over an arbitrary-shape tensor (typically T x L).
// logvar is clamped to [-10, 10] at construction.
struct DiagGaussian {
  Tensor mu;
  Tensor logvar;

  DiagGaussian() = default;
  DiagGaussian(Tensor mu_, Tensor logvar_);
};

Tensor reparam_sample(const DiagGaussian& d, Rng& rng);
// sum over all dims of the per-dim closed-form KL(q || p)
double kl_closed_form(const DiagGaussian& q, const DiagGaussian& p);
// sum over all dims of per-dim Gaussian log densities
double log_prob(const DiagGaussian& d, const Tensor& x);

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
  int64_t n = 0;
};

// Monte-Carlo KL(q || p) with standard error; oracle for the closed form.
McEstimate mc_kl(const DiagGaussian& q, const DiagGaussian& p, int64_t n_samples, Rng& rng);

// ------------------------------------------------------------- graph values

struct DiagGaussianVar {
  Var mu;
  Var logvar;  // already clamped
};

// clamps raw_logvar into the valid range
DiagGaussianVar make_gaussian(Tape& t, Var mu, Var raw_logvar);
// mu + exp(0.5*logvar) * noise, with the noise supplied by the caller so the
// graph stays deterministic under differentiation
Var reparam_sample(Tape& t, const DiagGaussianVar& d, const Tensor& noise);
Var reparam_sample(Tape& t, const DiagGaussianVar& d, Rng& rng);
Var kl_closed_form(Tape& t, const DiagGaussianVar& q, const DiagGaussianVar& p);
Var log_prob(Tape& t, const DiagGaussianVar& d, Var x);

DiagGaussian value_of(const Tape& t, const DiagGaussianVar& d);
DiagGaussianVar lift(Tape& t, const DiagGaussian& d);  // as constants

}  // namespace ecmvae
