#pragma once

#include <optional>

#include "ecmvae/experts.hpp"
#include "ecmvae/factorization.hpp"
#include "ecmvae/mi.hpp"
#include "ecmvae/objective.hpp"
#include "ecmvae/param_store.hpp"
#include "ecmvae/synth.hpp"

namespace ecmvae {

struct EncoderConfig {
  std::vector<int64_t> conv_channels = {4, 8, 16, 16, 32};  // five stride-2 stages
  int64_t fc_width = 32;
  int64_t audio_fc_width = 32;
  double leaky_slope = 0.01;
};

struct ModelConfig {
  int64_t latent_dim = 16;
  DivergenceMode divergence = DivergenceMode::JS;
  bool factorized = true;
  bool vae = true;          // false: deterministic codes, no divergence terms
  bool use_audio = true;    // false: video-only conditional VAE
  bool shared_decoder = true;
  bool mi_shared_critic = true;
  int jsd_samples = 8;
  double tile_sigma = 0.1;
  EncoderConfig enc;
  std::vector<int64_t> det_channels = {8, 16, 12};  // fusion pyramid, 32 -> 4
  int64_t audio_embed_dim = 4;
  std::vector<int64_t> dec_channels = {16, 8, 4};   // 4 -> 8 -> 16 -> 32
  int64_t T = 5, h = 32, w = 32, d_audio = 16;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& s);
  void validate() const;
};

// Prior or posterior encoder outputs for one clip. The fused head is the
// late-fusion joint distribution (used by the KL mode and exposed as "the"
// shared-code distribution); c_experts holds the per-modality experts the
// PoE/MoE/JS machinery consumes.
struct EncodedDists {
  std::optional<DiagGaussianVar> s_a, s_v;
  DiagGaussianVar c_fused;
  ExpertSetVar c_experts;
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);
  explicit Model(ModelConfig cfg);  // parameters to be loaded from a checkpoint

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int64_t param_count() const { return params_.param_count(); }

  EncodedDists encode_priors(Tape& t, ParamBinder& p, const SynClip& clip) const;
  EncodedDists encode_posteriors(Tape& t, ParamBinder& p, const SynClip& clip,
                                 const Tensor& y) const;

  // deterministic conv pyramid over frames, fused with a broadcast audio
  // embedding (cross-attention stand-in); shape (T, det_dim(), 4, 4)
  Var det_features(Tape& t, ParamBinder& p, const SynClip& clip) const;
  int64_t det_dim() const;

  // expand_to_map + channel concat with det features + conv head -> logits
  Var decode(Tape& t, ParamBinder& p, Var det, Var sc, Rng& rng, bool noisy,
             bool audio_path) const;

  struct ClipLoss {
    Var total;
    LossReport report;
  };
  ClipLoss clip_loss(Tape& t, ParamBinder& p, const SynClip& clip, const Tensor& y,
                     const LossWeights& w, Rng clip_rng) const;

  // deterministic prediction: prior mean codes, no tile noise, average of the
  // two decode paths' probabilities
  Tensor predict_probs(const SynClip& clip) const;
  struct PathProbs {
    Tensor averaged, audio_path, visual_path;
  };
  PathProbs predict_paths(const SynClip& clip) const;

  struct Codes {
    Tensor c, s_a, s_v;
  };
  Codes prior_mean_codes(const SynClip& clip) const;
  Codes posterior_sample_codes(const SynClip& clip, const Tensor& y, Rng rng) const;

 private:
  struct SharedDraw {
    Var code;
    std::optional<DiagGaussianVar> dist;
  };
  SharedDraw sample_shared(Tape& t, const EncodedDists& d, Rng& rng, bool stochastic) const;
  Var shared_regularizer(Tape& t, const EncodedDists& po, const EncodedDists& pr,
                         Rng& rng) const;

  Var visual_trunk(Tape& t, ParamBinder& p, const std::string& prefix, Var x) const;
  Var audio_trunk(Tape& t, ParamBinder& p, const std::string& prefix, Var a) const;
  DiagGaussianVar heads(Tape& t, ParamBinder& p, const std::string& prefix, Var feat) const;
  Var frames_input(Tape& t, const SynClip& clip, const Tensor* y) const;
  Var audio_input(Tape& t, const SynClip& clip, const Tensor* y) const;
  EncodedDists encode(Tape& t, ParamBinder& p, const SynClip& clip, const Tensor* y) const;

  void init_params(uint64_t seed);

  ModelConfig cfg_;
  ParamStore params_;
  MiCritic critic_;
};

}  // namespace ecmvae
