#pragma once

#include "ecmvae/param_store.hpp"

namespace ecmvae {

// Variational conditional q(sc_a | sc_v) = N(sc_a | mu(sc_v), sigma^2(sc_v) I).
// Mean and log-variance heads are each two fully-connected layers with a tanh
// in between; parameters live in a ParamStore under `prefix`.
struct MiCritic {
  std::string prefix;
  int width = 0;   // input/output size (2L for fused codes)
  int hidden = 0;  // defaults to width
};

MiCritic init_mi_critic(ParamStore& store, const std::string& prefix, int width, int hidden,
                        uint64_t seed);

// Mean over rows of log N(sc_a | mu(sc_v), sigma^2(sc_v)); rows act as the
// sample dimension. This is the I_ba bound with the constant entropy term
// dropped.
Var i_ba_surrogate(Tape& t, ParamBinder& bind, const MiCritic& critic, Var sc_a, Var sc_v);

// -alpha2 * I_po - (1-alpha2) * I_pr, as graph and scalar forms
Var sic_loss(Tape& t, Var surrogate_po, Var surrogate_pr, double alpha2);
double sic_loss(double surrogate_po, double surrogate_pr, double alpha2);

// analytic MI (nats per dimension) of a jointly Gaussian pair with
// correlation rho; |rho| < 1
double gaussian_mi_oracle(double rho);

}  // namespace ecmvae
