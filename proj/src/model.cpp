#include "ecmvae/model.hpp"

#include <cmath>

#include <json.hpp>

namespace ecmvae {

using nlohmann::json;

namespace {
constexpr int kMapSize = 4;      // spatial size where latents meet det features
constexpr int kPoolK = 8;        // mask pooling for the audio posterior input
constexpr uint64_t kStreamPosterior = 1, kStreamPrior = 2, kStreamJsd = 3, kStreamTile = 4;
}  // namespace

void ModelConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("ModelConfig: latent_dim must be >= 1");
  if (enc.conv_channels.size() != 5)
    throw std::invalid_argument("ModelConfig: need exactly five conv stages");
  if (det_channels.size() != 3 || dec_channels.size() != 3)
    throw std::invalid_argument("ModelConfig: det/dec pyramids are three stages");
  if (h != 32 || w != 32) throw std::invalid_argument("ModelConfig: frames must be 32x32");
  if (jsd_samples < 1) throw std::invalid_argument("ModelConfig: jsd_samples must be >= 1");
  if (tile_sigma < 0) throw std::invalid_argument("ModelConfig: tile_sigma must be >= 0");
  if (!use_audio && factorized)
    throw std::invalid_argument("ModelConfig: the video-only model must be unfactorized");
}

std::string ModelConfig::to_json() const {
  json j;
  j["latent_dim"] = latent_dim;
  j["divergence"] = to_string(divergence);
  j["factorized"] = factorized;
  j["vae"] = vae;
  j["use_audio"] = use_audio;
  j["shared_decoder"] = shared_decoder;
  j["mi_shared_critic"] = mi_shared_critic;
  j["jsd_samples"] = jsd_samples;
  j["tile_sigma"] = tile_sigma;
  j["conv_channels"] = enc.conv_channels;
  j["fc_width"] = enc.fc_width;
  j["audio_fc_width"] = enc.audio_fc_width;
  j["leaky_slope"] = enc.leaky_slope;
  j["det_channels"] = det_channels;
  j["audio_embed_dim"] = audio_embed_dim;
  j["dec_channels"] = dec_channels;
  j["T"] = T;
  j["h"] = h;
  j["w"] = w;
  j["d_audio"] = d_audio;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
  json j = json::parse(s);
  ModelConfig c;
  c.latent_dim = j.at("latent_dim");
  c.divergence = divergence_from_string(j.at("divergence"));
  c.factorized = j.at("factorized");
  c.vae = j.at("vae");
  c.use_audio = j.at("use_audio");
  c.shared_decoder = j.at("shared_decoder");
  c.mi_shared_critic = j.at("mi_shared_critic");
  c.jsd_samples = j.at("jsd_samples");
  c.tile_sigma = j.at("tile_sigma");
  c.enc.conv_channels = j.at("conv_channels").get<std::vector<int64_t>>();
  c.enc.fc_width = j.at("fc_width");
  c.enc.audio_fc_width = j.at("audio_fc_width");
  c.enc.leaky_slope = j.at("leaky_slope");
  c.det_channels = j.at("det_channels").get<std::vector<int64_t>>();
  c.audio_embed_dim = j.at("audio_embed_dim");
  c.dec_channels = j.at("dec_channels").get<std::vector<int64_t>>();
  c.T = j.at("T");
  c.h = j.at("h");
  c.w = j.at("w");
  c.d_audio = j.at("d_audio");
  return c;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  critic_.prefix = "mi";
  critic_.width = int(2 * cfg_.latent_dim);
  critic_.hidden = int(2 * cfg_.latent_dim);
}

Model::Model(ModelConfig cfg, uint64_t init_seed) : Model(std::move(cfg)) {
  init_params(init_seed);
}

// ------------------------------------------------------------ param layout

namespace {

void add_linear(ParamStore& s, const std::string& prefix, int64_t in, int64_t out, uint64_t seed,
                double scale = -1.0) {
  const double stddev = scale > 0 ? scale : std::sqrt(2.0 / double(in));
  s.add(prefix + ".w", normal_init({in, out}, stddev, seed, prefix + ".w"));
  s.add(prefix + ".b", Tensor({out}, 0.0));
}

void add_conv(ParamStore& s, const std::string& prefix, int64_t co, int64_t ci, uint64_t seed) {
  const double stddev = std::sqrt(2.0 / double(ci * 9));
  s.add(prefix + ".w", normal_init({co, ci, 3, 3}, stddev, seed, prefix + ".w"));
  s.add(prefix + ".b", Tensor({co}, 0.0));
}

// distribution heads start near N(0, 1): small weights, zero bias
void add_heads(ParamStore& s, const std::string& prefix, int64_t in, int64_t L, uint64_t seed) {
  const double stddev = 0.1 * std::sqrt(1.0 / double(in));
  add_linear(s, prefix + ".mu", in, L, seed, stddev);
  add_linear(s, prefix + ".lv", in, L, seed, stddev);
}

}  // namespace

void Model::init_params(uint64_t seed) {
  const auto& cc = cfg_.enc.conv_channels;
  const int64_t L = cfg_.latent_dim;
  const int64_t fw = cfg_.enc.fc_width;
  const int64_t aw = cfg_.enc.audio_fc_width;
  const int64_t pooled = (cfg_.h / kPoolK) * (cfg_.w / kPoolK);

  auto add_visual_trunk = [&](const std::string& prefix, int64_t in_ch) {
    int64_t ci = in_ch;
    for (size_t i = 0; i < cc.size(); ++i) {
      add_conv(params_, prefix + ".conv" + std::to_string(i + 1), cc[i], ci, seed);
      ci = cc[i];
    }
    add_linear(params_, prefix + ".fc1", cc.back(), fw, seed);
  };
  auto add_audio_trunk = [&](const std::string& prefix, int64_t in_dim) {
    add_linear(params_, prefix + ".fc1", in_dim, aw, seed);
  };

  for (const bool posterior : {false, true}) {
    if (!cfg_.vae && posterior) continue;  // AE variants never see y
    const std::string side = posterior ? "posterior" : "prior";
    const int64_t vis_in = posterior ? 2 : 1;
    const int64_t aud_in = posterior ? cfg_.d_audio + pooled : cfg_.d_audio;
    if (cfg_.factorized) {
      add_visual_trunk(side + ".sv", vis_in);
      add_heads(params_, side + ".sv", fw, L, seed);
      add_audio_trunk(side + ".sa", aud_in);
      add_heads(params_, side + ".sa", aw, L, seed);
    }
    // shared-code encoder: per-modality trunks + expert heads + fused head
    add_visual_trunk(side + ".c.v", vis_in);
    add_heads(params_, side + ".c.expert_v", fw, L, seed);
    if (cfg_.use_audio) {
      add_audio_trunk(side + ".c.a", aud_in);
      add_heads(params_, side + ".c.expert_a", aw, L, seed);
      add_linear(params_, side + ".c.fused.fc", fw + aw, fw, seed);
    } else {
      add_linear(params_, side + ".c.fused.fc", fw, fw, seed);
    }
    add_heads(params_, side + ".c.fused", fw, L, seed);
  }

  // fusion stand-in: det pyramid + audio embedding
  const auto& dc = cfg_.det_channels;
  add_conv(params_, "fusion.det.conv1", dc[0], 1, seed);
  add_conv(params_, "fusion.det.conv2", dc[1], dc[0], seed);
  add_conv(params_, "fusion.det.conv3", dc[2], dc[1], seed);
  if (cfg_.use_audio) add_linear(params_, "fusion.audio.fc", cfg_.d_audio, cfg_.audio_embed_dim, seed);

  const int64_t sc_dim = cfg_.factorized ? 2 * L : L;
  auto add_decoder = [&](const std::string& prefix) {
    const auto& k = cfg_.dec_channels;
    add_conv(params_, prefix + ".conv1", k[0], det_dim() + sc_dim, seed);
    add_conv(params_, prefix + ".conv2", k[1], k[0], seed);
    add_conv(params_, prefix + ".conv3", k[2], k[1], seed);
    add_conv(params_, prefix + ".out", 1, k[2], seed);
  };
  add_decoder("dec");
  if (!cfg_.shared_decoder && cfg_.factorized) add_decoder("dec_a");

  if (cfg_.factorized) {
    critic_ = init_mi_critic(params_, "mi", int(2 * L), int(2 * L), seed);
    if (!cfg_.mi_shared_critic) init_mi_critic(params_, "mi_pr", int(2 * L), int(2 * L), seed);
  }
}

int64_t Model::det_dim() const {
  return cfg_.det_channels[2] + (cfg_.use_audio ? cfg_.audio_embed_dim : 0);
}

// -------------------------------------------------------------- sub-graphs

namespace {
Var linear(Tape& t, ParamBinder& p, const std::string& prefix, Var x) {
  return t.add_rowwise(t.matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}
Var conv(Tape& t, ParamBinder& p, const std::string& prefix, Var x, int stride) {
  return t.conv2d(x, p(prefix + ".w"), p(prefix + ".b"), stride, 1);
}
}  // namespace

Var Model::visual_trunk(Tape& t, ParamBinder& p, const std::string& prefix, Var x) const {
  const double slope = cfg_.enc.leaky_slope;
  Var h = x;
  for (int i = 1; i <= 5; ++i)
    h = t.leaky_relu(conv(t, p, prefix + ".conv" + std::to_string(i), h, 2), slope);
  h = t.reshape(h, {cfg_.T, cfg_.enc.conv_channels.back()});
  return t.leaky_relu(linear(t, p, prefix + ".fc1", h), slope);
}

Var Model::audio_trunk(Tape& t, ParamBinder& p, const std::string& prefix, Var a) const {
  return t.leaky_relu(linear(t, p, prefix + ".fc1", a), cfg_.enc.leaky_slope);
}

DiagGaussianVar Model::heads(Tape& t, ParamBinder& p, const std::string& prefix, Var feat) const {
  return make_gaussian(t, linear(t, p, prefix + ".mu", feat), linear(t, p, prefix + ".lv", feat));
}

Var Model::frames_input(Tape& t, const SynClip& clip, const Tensor* y) const {
  Var f = t.input(clip.frames);
  if (!y) return f;
  return t.concat({f, t.input(*y)}, 1);
}

Var Model::audio_input(Tape& t, const SynClip& clip, const Tensor* y) const {
  Var a = t.input(clip.audio);
  if (!y) return a;
  Var pooled = t.avg_pool(t.input(*y), kPoolK);
  const int64_t d = (cfg_.h / kPoolK) * (cfg_.w / kPoolK);
  return t.concat({a, t.reshape(pooled, {cfg_.T, d})}, 1);
}

EncodedDists Model::encode(Tape& t, ParamBinder& p, const SynClip& clip, const Tensor* y) const {
  const std::string side = y ? "posterior" : "prior";
  EncodedDists out;
  Var frames = frames_input(t, clip, y);
  if (cfg_.factorized) {
    out.s_v = heads(t, p, side + ".sv", visual_trunk(t, p, side + ".sv", frames));
    out.s_a = heads(t, p, side + ".sa", audio_trunk(t, p, side + ".sa", audio_input(t, clip, y)));
  }
  Var vis_feat = visual_trunk(t, p, side + ".c.v", frames);
  std::vector<DiagGaussianVar> experts;
  Var fused_feat = vis_feat;
  if (cfg_.use_audio) {
    Var aud_feat = audio_trunk(t, p, side + ".c.a", audio_input(t, clip, y));
    experts.push_back(heads(t, p, side + ".c.expert_a", aud_feat));
    experts.push_back(heads(t, p, side + ".c.expert_v", vis_feat));
    fused_feat = t.concat({vis_feat, aud_feat}, 1);
  } else {
    experts.push_back(heads(t, p, side + ".c.expert_v", vis_feat));
  }
  Var fc = t.leaky_relu(linear(t, p, side + ".c.fused.fc", fused_feat), cfg_.enc.leaky_slope);
  out.c_fused = heads(t, p, side + ".c.fused", fc);
  out.c_experts = make_expert_set(t, std::move(experts));
  return out;
}

EncodedDists Model::encode_priors(Tape& t, ParamBinder& p, const SynClip& clip) const {
  return encode(t, p, clip, nullptr);
}

EncodedDists Model::encode_posteriors(Tape& t, ParamBinder& p, const SynClip& clip,
                                      const Tensor& y) const {
  if (!cfg_.vae) throw std::logic_error("encode_posteriors: AE variant has no posterior encoders");
  require_binary(y, "encode_posteriors");
  return encode(t, p, clip, &y);
}

Var Model::det_features(Tape& t, ParamBinder& p, const SynClip& clip) const {
  const double slope = cfg_.enc.leaky_slope;
  Var h = t.input(clip.frames);
  h = t.leaky_relu(conv(t, p, "fusion.det.conv1", h, 2), slope);  // 16
  h = t.leaky_relu(conv(t, p, "fusion.det.conv2", h, 2), slope);  // 8
  h = t.leaky_relu(conv(t, p, "fusion.det.conv3", h, 2), slope);  // 4
  if (!cfg_.use_audio) return h;
  Var emb = t.leaky_relu(linear(t, p, "fusion.audio.fc", t.input(clip.audio)), slope);
  return t.concat({h, t.tile_hw(emb, kMapSize, kMapSize)}, 1);
}

Var Model::decode(Tape& t, ParamBinder& p, Var det, Var sc, Rng& rng, bool noisy,
                  bool audio_path) const {
  const double slope = cfg_.enc.leaky_slope;
  const std::string prefix =
      (!cfg_.shared_decoder && cfg_.factorized && audio_path) ? "dec_a" : "dec";
  Var lat = expand_to_map(t, sc, kMapSize, kMapSize, noisy ? cfg_.tile_sigma : 0.0, rng);
  Var h = t.concat({det, lat}, 1);
  h = t.leaky_relu(conv(t, p, prefix + ".conv1", h, 1), slope);
  h = t.upsample2x(h);
  h = t.leaky_relu(conv(t, p, prefix + ".conv2", h, 1), slope);
  h = t.upsample2x(h);
  h = t.leaky_relu(conv(t, p, prefix + ".conv3", h, 1), slope);
  h = t.upsample2x(h);
  return conv(t, p, prefix + ".out", h, 1);
}

// --------------------------------------------------------- shared-code draw

Model::SharedDraw Model::sample_shared(Tape& t, const EncodedDists& d, Rng& rng,
                                       bool stochastic) const {
  SharedDraw out;
  if (!cfg_.vae) {  // deterministic feature codes
    out.code = d.c_fused.mu;
    out.dist = d.c_fused;
    return out;
  }
  switch (cfg_.divergence) {
    case DivergenceMode::KL: {
      out.dist = d.c_fused;
      break;
    }
    case DivergenceMode::PoE: {
      out.dist = poe_combine(t, d.c_experts);
      break;
    }
    case DivergenceMode::MoE:
    case DivergenceMode::JS: {
      if (stochastic) {
        MoeDraw draw = moe_sample(t, d.c_experts, rng);
        out.code = draw.sample;
        out.dist = d.c_experts.experts[size_t(draw.component)];
        return out;
      }
      // deterministic evaluation: mixture mean
      Var acc;
      for (size_t k = 0; k < d.c_experts.experts.size(); ++k) {
        Var term = t.mul_scalar(d.c_experts.experts[k].mu, d.c_experts.weights[k]);
        acc = (k == 0) ? term : t.add(acc, term);
      }
      out.code = acc;
      return out;
    }
  }
  out.code = stochastic ? reparam_sample(t, *out.dist, rng) : out.dist->mu;
  return out;
}

Var Model::shared_regularizer(Tape& t, const EncodedDists& po, const EncodedDists& pr,
                              Rng& rng) const {
  switch (cfg_.divergence) {
    case DivergenceMode::KL:
      return kl_closed_form(t, po.c_fused, pr.c_fused);
    case DivergenceMode::PoE:
      return kl_closed_form(t, poe_combine(t, po.c_experts), poe_combine(t, pr.c_experts));
    case DivergenceMode::MoE:
      return moe_kl_upper(t, po.c_experts, pr.c_experts);
    case DivergenceMode::JS:
      return jsd_dynamic_prior(t, po.c_experts, pr.c_experts, cfg_.jsd_samples, rng);
  }
  throw std::logic_error("unknown divergence mode");
}

// ---------------------------------------------------------------- clip loss

Model::ClipLoss Model::clip_loss(Tape& t, ParamBinder& p, const SynClip& clip, const Tensor& y,
                                 const LossWeights& w, Rng clip_rng) const {
  w.validate();
  require_same_shape(y, clip.masks, "clip_loss");
  Rng rng_po = clip_rng.fork(kStreamPosterior);
  Rng rng_pr = clip_rng.fork(kStreamPrior);
  Rng rng_jsd = clip_rng.fork(kStreamJsd);
  Rng rng_tile = clip_rng.fork(kStreamTile);

  Var target = t.input(y);
  Var det = det_features(t, p, clip);
  Var zero = t.input(Tensor::scalar(0.0));

  EncodedDists pr = encode_priors(t, p, clip);
  std::optional<EncodedDists> po;
  if (cfg_.vae) po = encode_posteriors(t, p, clip, y);
  const EncodedDists& gen = cfg_.vae ? *po : pr;  // codes driving the posterior-path decode

  // posterior-path bundle (for AE: the deterministic codes)
  SharedDraw c_po = sample_shared(t, gen, rng_po, /*stochastic=*/cfg_.vae);
  Var rec_po, diff = zero, sic = zero;
  Var kl_sa = zero, kl_sv = zero, c_term = zero;
  Var rec_pr;

  if (cfg_.factorized) {
    Var sa_po = cfg_.vae ? reparam_sample(t, *gen.s_a, rng_po) : gen.s_a->mu;
    Var sv_po = cfg_.vae ? reparam_sample(t, *gen.s_v, rng_po) : gen.s_v->mu;
    FusedPair f_po = fuse(t, c_po.code, sa_po, sv_po);
    Var logits_a = decode(t, p, det, f_po.sc_a, rng_tile, /*noisy=*/true, /*audio_path=*/true);
    Var logits_v = decode(t, p, det, f_po.sc_v, rng_tile, true, false);
    rec_po = rec_loss(t, logits_a, logits_v, target);
    diff = difference_loss(t, c_po.code, sa_po, sv_po);

    // prior-path (GSNN) bundle
    SharedDraw c_pr = sample_shared(t, pr, rng_pr, cfg_.vae);
    Var sa_pr = cfg_.vae ? reparam_sample(t, *pr.s_a, rng_pr) : pr.s_a->mu;
    Var sv_pr = cfg_.vae ? reparam_sample(t, *pr.s_v, rng_pr) : pr.s_v->mu;
    FusedPair f_pr = fuse(t, c_pr.code, sa_pr, sv_pr);
    Var logits_a_pr = decode(t, p, det, f_pr.sc_a, rng_tile, true, true);
    Var logits_v_pr = decode(t, p, det, f_pr.sc_v, rng_tile, true, false);
    rec_pr = rec_loss(t, logits_a_pr, logits_v_pr, target);

    Var i_po = i_ba_surrogate(t, p, critic_, f_po.sc_a, f_po.sc_v);
    MiCritic pr_critic = critic_;
    if (!cfg_.mi_shared_critic) pr_critic.prefix = "mi_pr";
    Var i_pr = i_ba_surrogate(t, p, pr_critic, f_pr.sc_a, f_pr.sc_v);
    sic = sic_loss(t, i_po, i_pr, w.alpha2);

    if (cfg_.vae) {
      kl_sa = kl_closed_form(t, *gen.s_a, *pr.s_a);
      kl_sv = kl_closed_form(t, *gen.s_v, *pr.s_v);
      c_term = shared_regularizer(t, *po, pr, rng_jsd);
    }
  } else {
    Var logits = decode(t, p, det, c_po.code, rng_tile, true, false);
    rec_po = rec_loss_single(t, logits, target);
    SharedDraw c_pr = sample_shared(t, pr, rng_pr, cfg_.vae);
    Var logits_pr = decode(t, p, det, c_pr.code, rng_tile, true, false);
    rec_pr = rec_loss_single(t, logits_pr, target);
    if (cfg_.vae) c_term = shared_regularizer(t, *po, pr, rng_jsd);
  }

  Var avm = zero;  // audio-visual mapping hook: zero by default
  Var elbo = elbo_hat_loss(t, rec_po, kl_sa, kl_sv, c_term, w.beta);
  Var helbo = helbo_loss(t, elbo, rec_pr, w.alpha1);
  Var total = total_loss(t, helbo, diff, sic, avm, w);

  ClipLoss out;
  out.total = total;
  out.report.total = t.scalar(total);
  out.report.rec_posterior = t.scalar(rec_po);
  out.report.rec_prior = t.scalar(rec_pr);
  out.report.kl_s_a = t.scalar(kl_sa);
  out.report.kl_s_v = t.scalar(kl_sv);
  out.report.c_term = t.scalar(c_term);
  out.report.diff = t.scalar(diff);
  out.report.sic = t.scalar(sic);
  out.report.avm = t.scalar(avm);
  return out;
}

// --------------------------------------------------------------- inference

Model::PathProbs Model::predict_paths(const SynClip& clip) const {
  Tape t;
  ParamBinder p(t, const_cast<ParamStore&>(params_));
  Rng dummy(0);
  EncodedDists pr = encode_priors(t, p, clip);
  Var det = det_features(t, p, clip);
  SharedDraw c = sample_shared(t, pr, dummy, /*stochastic=*/false);
  PathProbs out;
  if (cfg_.factorized) {
    FusedPair f = fuse(t, c.code, pr.s_a->mu, pr.s_v->mu);
    Var pa = t.sigmoid(decode(t, p, det, f.sc_a, dummy, /*noisy=*/false, true));
    Var pv = t.sigmoid(decode(t, p, det, f.sc_v, dummy, false, false));
    out.audio_path = t.val(pa);
    out.visual_path = t.val(pv);
    out.averaged = t.val(t.mul_scalar(t.add(pa, pv), 0.5));
  } else {
    Var pz = t.sigmoid(decode(t, p, det, c.code, dummy, false, false));
    out.audio_path = out.visual_path = out.averaged = t.val(pz);
  }
  return out;
}

Tensor Model::predict_probs(const SynClip& clip) const { return predict_paths(clip).averaged; }

Model::Codes Model::prior_mean_codes(const SynClip& clip) const {
  Tape t;
  ParamBinder p(t, const_cast<ParamStore&>(params_));
  Rng dummy(0);
  EncodedDists pr = encode_priors(t, p, clip);
  SharedDraw c = sample_shared(t, pr, dummy, false);
  Codes out;
  out.c = t.val(c.code);
  if (cfg_.factorized) {
    out.s_a = t.val(pr.s_a->mu);
    out.s_v = t.val(pr.s_v->mu);
  }
  return out;
}

Model::Codes Model::posterior_sample_codes(const SynClip& clip, const Tensor& y, Rng rng) const {
  if (!cfg_.vae || !cfg_.factorized)
    throw std::logic_error("posterior_sample_codes: needs the factorized VAE variant");
  Tape t;
  ParamBinder p(t, const_cast<ParamStore&>(params_));
  Rng rng_po = rng.fork(kStreamPosterior);
  EncodedDists po = encode_posteriors(t, p, clip, y);
  SharedDraw c = sample_shared(t, po, rng_po, true);
  Codes out;
  out.c = t.val(c.code);
  out.s_a = t.val(reparam_sample(t, *po.s_a, rng_po));
  out.s_v = t.val(reparam_sample(t, *po.s_v, rng_po));
  return out;
}

}  // namespace ecmvae
