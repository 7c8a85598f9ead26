#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ecmvae/checkpoint.hpp"
#include "ecmvae/rng.hpp"
#include "ecmvae/tensor.hpp"

namespace ecmvae {

// One synthetic clip: T grayscale frames with one (or two) sound sources plus
// distractor shapes, T audio vectors carrying the class signature of whatever
// is currently active, and exact per-frame masks of the active source(s).
struct SynClip {
  int id = 0;
  Tensor frames;  // (T,1,h,w) in [0,1]
  Tensor audio;   // (T,d_a)
  Tensor masks;   // (T,1,h,w) binary
  // generating factors
  int source_class = 0;
  int source_class2 = -1;  // second source in multi-source clips
  Tensor positions;        // (T,2) row/col of the primary source
  Tensor positions2;       // (T,2) or empty
  std::vector<double> visual_style;
  std::vector<double> audio_timbre;
  std::vector<uint8_t> active;   // per-frame activity of source 1
  std::vector<uint8_t> active2;  // per-frame activity of source 2
};

struct DatasetSpec {
  int n_clips = 800;
  double train_frac = 0.75;
  double val_frac = 0.125;
  double test_frac = 0.125;
  int n_classes = 4;
  bool multi_source = false;
  uint64_t seed = 1;
  int T = 5;
  int h = 32;
  int w = 32;
  int d_audio = 16;
  void validate() const;
};

struct Corpus {
  DatasetSpec spec;
  std::vector<SynClip> clips;
  std::vector<int> train_idx, val_idx, test_idx;

  const std::vector<int>& split(const std::string& name) const;
};

Corpus generate(const DatasetSpec& spec);
// regenerate a single clip with an overridden style vector; used to verify
// the audio stream is independent of visual style
SynClip generate_clip(const DatasetSpec& spec, int clip_index,
                      const std::vector<double>* style_override = nullptr);

// <base>.json manifest + <base>.bin little-endian payload, bit-exact round-trip
void save_corpus(const Corpus& corpus, const std::string& base_path);
Corpus load_corpus(const std::string& base_path);

// S4-style training target: ground truth of the first frame repeated T times.
// Multi-source clips keep their full per-frame masks.
Tensor s4_label_mask(const SynClip& clip, bool multi_source_corpus);

// all-background mIoU of a clip list (useful as an untrained-model baseline)
double background_miou(const Corpus& corpus, const std::vector<int>& idx);

// One-vs-rest single-feature threshold classifier on audio frame features;
// the oracle that shows audio carries the class.
struct AudioStumpOracle {
  struct Stump {
    int dim = 0;
    double threshold = 0.0;
    int sign = 1;  // +1: fire when x > thr
  };
  std::vector<Stump> per_class;
  int predict(const Tensor& audio) const;  // majority over frames
};
AudioStumpOracle fit_audio_stumps(const Corpus& corpus, const std::vector<int>& idx);
double audio_stump_accuracy(const AudioStumpOracle& oracle, const Corpus& corpus,
                            const std::vector<int>& idx);

}  // namespace ecmvae
