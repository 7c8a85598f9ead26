#include "ecmvae/factorization.hpp"

#include <cmath>
#include <cstdio>

namespace ecmvae {

FusedPair fuse(Tape& t, Var c, Var s_a, Var s_v) {
  const Tensor& tc = t.val(c);
  require_same_shape(tc, t.val(s_a), "fuse");
  require_same_shape(tc, t.val(s_v), "fuse");
  if (tc.ndim() != 2) throw std::invalid_argument("fuse: codes must be (T,L)");
  return FusedPair{t.concat({s_a, c}, 1), t.concat({s_v, c}, 1)};
}

Var difference_loss(Tape& t, Var c, Var s_a, Var s_v) {
  const Tensor& tc = t.val(c);
  require_same_shape(tc, t.val(s_a), "difference_loss");
  require_same_shape(tc, t.val(s_v), "difference_loss");
  if (tc.ndim() != 2) throw std::invalid_argument("difference_loss: codes must be (T,L)");
  Var ct = t.transpose(c);
  Var sat = t.transpose(s_a);
  Var g1 = t.sum(t.square(t.matmul(ct, s_a)));
  Var g2 = t.sum(t.square(t.matmul(ct, s_v)));
  Var g3 = t.sum(t.square(t.matmul(sat, s_v)));
  return t.add(t.add(g1, g2), g3);
}

static double gram_sq_norm(const Tensor& a, const Tensor& b) {
  // || a^T b ||_F^2 for (T,L) inputs
  const int64_t T = a.shape[0], L = a.shape[1];
  double acc = 0.0;
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < L; ++j) {
      double g = 0.0;
      for (int64_t k = 0; k < T; ++k) g += a.at2(k, i) * b.at2(k, j);
      acc += g * g;
    }
  return acc;
}

std::vector<double> cross_gram_norms(const Tensor& c, const Tensor& s_a, const Tensor& s_v) {
  return {gram_sq_norm(c, s_a), gram_sq_norm(c, s_v), gram_sq_norm(s_a, s_v)};
}

double difference_loss(const Tensor& c, const Tensor& s_a, const Tensor& s_v) {
  auto n = cross_gram_norms(c, s_a, s_v);
  return n[0] + n[1] + n[2];
}

Var expand_to_map(Tape& t, Var code, int h, int w, double sigma_tile, Rng& rng) {
  if (h < 1 || w < 1) throw std::invalid_argument("expand_to_map: h,w must be >= 1");
  Var tiled = t.tile_hw(code, h, w);
  if (sigma_tile == 0.0) return tiled;
  Tensor noise(t.val(tiled).shape);
  for (auto& v : noise.data) v = rng.normal(0.0, sigma_tile);
  return t.add(tiled, t.input(noise));
}

LatentBundleVar build_bundle(Tape& t, const DiagGaussianVar& c, const DiagGaussianVar& s_a,
                             const DiagGaussianVar& s_v, Rng& rng, bool stochastic) {
  LatentBundleVar b;
  b.d_c = c;
  b.d_sa = s_a;
  b.d_sv = s_v;
  if (stochastic) {
    b.c = reparam_sample(t, c, rng);
    b.s_a = reparam_sample(t, s_a, rng);
    b.s_v = reparam_sample(t, s_v, rng);
  } else {
    b.c = c.mu;
    b.s_a = s_a.mu;
    b.s_v = s_v.mu;
  }
  FusedPair f = fuse(t, b.c, b.s_a, b.s_v);
  b.sc_a = f.sc_a;
  b.sc_v = f.sc_v;
  return b;
}

std::string latent_csv_header(int latent_dim) {
  std::string s = "clip_id,t,code_type";
  for (int i = 0; i < latent_dim; ++i) s += ",dim_" + std::to_string(i);
  s += "\n";
  return s;
}

static void append_rows(std::string& out, int clip_id, const char* type, const Tensor& code) {
  char buf[64];
  for (int64_t ts = 0; ts < code.shape[0]; ++ts) {
    out += std::to_string(clip_id) + "," + std::to_string(ts) + "," + type;
    for (int64_t j = 0; j < code.shape[1]; ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", code.at2(ts, j));
      out += buf;
    }
    out += "\n";
  }
}

void append_latent_csv_rows(std::string& out, int clip_id, const Tensor& c, const Tensor& s_a,
                            const Tensor& s_v) {
  append_rows(out, clip_id, "c", c);
  append_rows(out, clip_id, "s_a", s_a);
  append_rows(out, clip_id, "s_v", s_v);
}

}  // namespace ecmvae
