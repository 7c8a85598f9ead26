#pragma once

#include "ecmvae/autodiff.hpp"

namespace ecmvae {

// weight on the soft-IoU term relative to summed-per-pixel BCE; keeps the
// overlap term visible next to the (much larger) BCE sum
inline constexpr double kRecIouWeight = 128.0;

struct LossWeights {
  double beta = 0.1;
  double alpha1 = 0.5;
  double alpha2 = 0.5;
  double lambda1 = 0.001;
  double lambda2 = 0.01;
  double lambda3 = 0.5;
  void validate() const;
};

// Per-step component breakdown. `total` always equals the weighted
// recombination of the parts (checked to 1e-9 in tests).
struct LossReport {
  double total = 0.0;
  double rec_posterior = 0.0;
  double rec_prior = 0.0;
  double kl_s_a = 0.0;
  double kl_s_v = 0.0;
  double c_term = 0.0;  // KL / PoE-KL / MoE bound / JSD on the shared code
  double diff = 0.0;
  double sic = 0.0;
  double avm = 0.0;

  double recombine(const LossWeights& w) const;
  static const char* csv_header();  // component columns, no step/epoch
  std::string csv_row() const;
  void accumulate(const LossReport& o, double scale);
};

// pixel-wise losses; logits/targets are (T,1,h,w), targets binary
Var bce_with_logits(Tape& t, Var logits, Var targets);        // summed over pixels
Var soft_iou_loss(Tape& t, Var logits, Var targets);          // summed over frames
Var rec_loss_single(Tape& t, Var logits, Var targets);        // bce + kRecIouWeight * iou
// Eq-style two-path reconstruction: sum over the sc_a and sc_v decodes
Var rec_loss(Tape& t, Var logits_a, Var logits_v, Var targets);

// loss = rec + beta * (kl_sa + kl_sv + c_term); the negative ELBO-hat
Var elbo_hat_loss(Tape& t, Var rec, Var kl_sa, Var kl_sv, Var c_term, double beta);
double elbo_hat_loss(double rec, double kl_sa, double kl_sv, double c_term, double beta);

// hybrid: alpha1 * elbo_hat_loss + (1-alpha1) * rec_prior
Var helbo_loss(Tape& t, Var elbo_hat, Var rec_prior, double alpha1);
double helbo_loss(double elbo_hat, double rec_prior, double alpha1);

// total = helbo + l1*diff + l2*sic + l3*avm; scalar form validates finiteness
// per component and names the offender
Var total_loss(Tape& t, Var helbo, Var diff, Var sic, Var avm, const LossWeights& w);
double total_loss(double helbo, double diff, double sic, double avm, const LossWeights& w);

void require_binary(const Tensor& t, const char* where);

}  // namespace ecmvae
