#include "ecmvae/metrics.hpp"

#include <json.hpp>

namespace ecmvae {

using nlohmann::json;

Tensor binarize(const Tensor& soft, double threshold) {
  Tensor out(soft.shape);
  for (int64_t i = 0; i < soft.numel(); ++i) out[i] = soft[i] > threshold ? 1.0 : 0.0;
  return out;
}

double miou(const Tensor& pred, const Tensor& gt) {
  require_same_shape(pred, gt, "miou");
  if (pred.ndim() != 4) throw std::invalid_argument("miou: need (T,1,h,w)");
  const int64_t T = pred.shape[0];
  const int64_t frame = pred.numel() / T;
  double acc = 0.0;
  for (int64_t t = 0; t < T; ++t) {
    int64_t inter = 0, uni = 0;
    const double* p = &pred.data[size_t(t * frame)];
    const double* g = &gt.data[size_t(t * frame)];
    for (int64_t i = 0; i < frame; ++i) {
      const bool bp = p[i] != 0.0, bg = g[i] != 0.0;
      inter += bp && bg;
      uni += bp || bg;
    }
    acc += uni == 0 ? 1.0 : double(inter) / double(uni);
  }
  return acc / double(T);
}

double fscore(const Tensor& pred_soft, const Tensor& gt, double beta_sq, double threshold) {
  require_same_shape(pred_soft, gt, "fscore");
  if (pred_soft.ndim() != 4) throw std::invalid_argument("fscore: need (T,1,h,w)");
  const int64_t T = pred_soft.shape[0];
  const int64_t frame = pred_soft.numel() / T;
  double acc = 0.0;
  for (int64_t t = 0; t < T; ++t) {
    int64_t tp = 0, fp = 0, fn = 0;
    const double* p = &pred_soft.data[size_t(t * frame)];
    const double* g = &gt.data[size_t(t * frame)];
    for (int64_t i = 0; i < frame; ++i) {
      const bool bp = p[i] > threshold, bg = g[i] != 0.0;
      tp += bp && bg;
      fp += bp && !bg;
      fn += !bp && bg;
    }
    if (tp + fp == 0 || tp + fn == 0) {
      // no positive predictions or no positive truth: define P/R pieces as 0
      acc += 0.0;
      continue;
    }
    const double prec = double(tp) / double(tp + fp);
    const double rec = double(tp) / double(tp + fn);
    const double denom = beta_sq * prec + rec;
    acc += denom == 0.0 ? 0.0 : (1.0 + beta_sq) * prec * rec / denom;
  }
  return acc / double(T);
}

std::string EvalResult::to_json() const {
  json j;
  j["miou"] = miou;
  j["fscore"] = fscore;
  j["n_frames"] = n_frames;
  json pc = json::array();
  for (const auto& c : per_clip) {
    pc.push_back({{"clip_id", c.clip_id}, {"miou", c.miou}, {"fscore", c.fscore}});
  }
  j["per_clip"] = pc;
  return j.dump(2);
}

EvalResult EvalResult::from_json(const std::string& s) {
  json j = json::parse(s);
  EvalResult r;
  r.miou = j.at("miou");
  r.fscore = j.at("fscore");
  r.n_frames = j.at("n_frames");
  for (const auto& c : j.at("per_clip")) {
    r.per_clip.push_back({c.at("clip_id"), c.at("miou"), c.at("fscore")});
  }
  return r;
}

}  // namespace ecmvae
