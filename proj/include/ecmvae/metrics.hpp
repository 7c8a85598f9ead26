#pragma once

#include <string>
#include <vector>

#include "ecmvae/tensor.hpp"

namespace ecmvae {

// mean over frames of |pred & gt| / |pred | gt|; frames where both are empty
// score 1. pred and gt are binary (T,1,h,w).
double miou(const Tensor& pred, const Tensor& gt);

// F-beta at threshold 0.5 on a soft prediction map in [0,1]; beta_sq = 0.3.
// Frames with a zero denominator score 0.
double fscore(const Tensor& pred_soft, const Tensor& gt, double beta_sq = 0.3,
              double threshold = 0.5);

Tensor binarize(const Tensor& soft, double threshold = 0.5);

struct EvalResult {
  double miou = 0.0;
  double fscore = 0.0;
  int64_t n_frames = 0;
  struct PerClip {
    int clip_id = 0;
    double miou = 0.0;
    double fscore = 0.0;
  };
  std::vector<PerClip> per_clip;

  std::string to_json() const;
  static EvalResult from_json(const std::string& s);
};

}  // namespace ecmvae
