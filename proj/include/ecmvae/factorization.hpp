#pragma once

#include "ecmvae/gaussian.hpp"

namespace ecmvae {

// Sampled factorized codes for one clip plus the distributions behind them.
// sc_a = [s_a ; c] and sc_v = [s_v ; c] along the latent axis.
struct LatentBundleVar {
  Var c, s_a, s_v;     // T x L
  Var sc_a, sc_v;      // T x 2L
  DiagGaussianVar d_c, d_sa, d_sv;
};

struct FusedPair {
  Var sc_a, sc_v;
};

// concatenation order is (specific, shared): downstream decoders and the MI
// nets rely on this layout
FusedPair fuse(Tape& t, Var c, Var s_a, Var s_v);

// || c^T s_a ||_F^2 + || c^T s_v ||_F^2 + || s_a^T s_v ||_F^2 on T x L codes
Var difference_loss(Tape& t, Var c, Var s_a, Var s_v);
double difference_loss(const Tensor& c, const Tensor& s_a, const Tensor& s_v);
// the three cross-Gram norms individually: (c,s_a), (c,s_v), (s_a,s_v)
std::vector<double> cross_gram_norms(const Tensor& c, const Tensor& s_a, const Tensor& s_v);

// tiles each row of code (T x C) over an h x w grid and adds N(0, sigma^2)
// noise; sigma = 0 is pure tiling
Var expand_to_map(Tape& t, Var code, int h, int w, double sigma_tile, Rng& rng);

LatentBundleVar build_bundle(Tape& t, const DiagGaussianVar& c, const DiagGaussianVar& s_a,
                             const DiagGaussianVar& s_v, Rng& rng, bool stochastic = true);

// latent CSV row block for one clip: (clip_id, t, code_type, dim_0..dim_{L-1})
std::string latent_csv_header(int latent_dim);
void append_latent_csv_rows(std::string& out, int clip_id, const Tensor& c, const Tensor& s_a,
                            const Tensor& s_v);

}  // namespace ecmvae
