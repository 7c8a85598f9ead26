#pragma once

#include <string>
#include <vector>

#include "ecmvae/gaussian.hpp"

namespace ecmvae {

// How the shared latent's posterior/prior pair is regularized (and sampled).
enum class DivergenceMode { KL, PoE, MoE, JS };
std::string to_string(DivergenceMode m);
DivergenceMode divergence_from_string(const std::string& s);

// K per-modality experts with positive weights summing to 1.
struct ExpertSet {
  std::vector<DiagGaussian> experts;
  std::vector<double> weights;
};
struct ExpertSetVar {
  std::vector<DiagGaussianVar> experts;
  std::vector<double> weights;
};

ExpertSet make_expert_set(std::vector<DiagGaussian> experts, std::vector<double> weights = {});
ExpertSetVar make_expert_set(Tape& t, std::vector<DiagGaussianVar> experts,
                             std::vector<double> weights = {});

// ------------------------------------------------------------- plain values

// precision-weighted product of Gaussians
DiagGaussian poe_combine(const ExpertSet& s);
// log sum_k w_k N_k(x), max-shifted
double mixture_log_prob(const ExpertSet& m, const Tensor& x);
Tensor moe_sample(const ExpertSet& s, Rng& rng);
// sum_k w_k KL(q_k || p_k); upper-bounds KL(mix_q || mix_p)
double moe_kl_upper(const ExpertSet& q, const ExpertSet& p);
// MC estimate of KL(mix_q || mix_p)
McEstimate mc_mixture_kl(const ExpertSet& q, const ExpertSet& p, int64_t n_samples, Rng& rng);
// MC estimate of sum_k pi_k KL(component_k || f) over the 2K components of
// (q, p), with f the equal-weight mixture of all of them. pi defaults to
// uniform over 2K and must sum to 1.
McEstimate jsd_dynamic_prior(const ExpertSet& q, const ExpertSet& p, int64_t n_per_component,
                             Rng& rng, const std::vector<double>& pi = {});

// ------------------------------------------------------------- graph values

DiagGaussianVar poe_combine(Tape& t, const ExpertSetVar& s);
Var mixture_log_prob(Tape& t, const ExpertSetVar& m, Var x);
Var moe_kl_upper(Tape& t, const ExpertSetVar& q, const ExpertSetVar& p);
Var jsd_dynamic_prior(Tape& t, const ExpertSetVar& q, const ExpertSetVar& p,
                      int n_per_component, Rng& rng, const std::vector<double>& pi = {});

struct MoeDraw {
  Var sample;
  int component = -1;
};
MoeDraw moe_sample(Tape& t, const ExpertSetVar& s, Rng& rng);
// one reparameterized sample per component, for weight-averaged losses
std::vector<Var> moe_sample_stratified(Tape& t, const ExpertSetVar& s, Rng& rng);

}  // namespace ecmvae
