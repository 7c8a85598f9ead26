#include "ecmvae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ecmvae {

using nlohmann::json;

namespace {

constexpr int kTimbreDim = 6;
constexpr double kClassGain = 3.0;  // strength of the one-hot class signal
constexpr double kTimbreStd = 0.5;
constexpr double kAudioNoiseStd = 0.05;
constexpr double kBackgroundNoise = 0.08;
constexpr int kShapeMargin = 6;

// class shape templates as (dy,dx) offsets around the centre
std::vector<std::pair<int, int>> shape_template(int cls) {
  std::vector<std::pair<int, int>> px;
  switch (cls % 4) {
    case 0:  // disk
      for (int dy = -4; dy <= 4; ++dy)
        for (int dx = -4; dx <= 4; ++dx)
          if (dy * dy + dx * dx <= 12) px.emplace_back(dy, dx);
      break;
    case 1:  // 7x7 square
      for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) px.emplace_back(dy, dx);
      break;
    case 2:  // triangle, apex up
      for (int dy = -3; dy <= 3; ++dy) {
        const int half = dy + 3;  // width grows downwards
        for (int dx = -half; dx <= half; ++dx) px.emplace_back(dy, dx);
      }
      break;
    default:  // plus sign
      for (int dy = -4; dy <= 4; ++dy)
        for (int dx = -1; dx <= 1; ++dx) px.emplace_back(dy, dx);
      for (int dx = -4; dx <= 4; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
          if (std::abs(dx) > 1) px.emplace_back(dy, dx);
      break;
  }
  return px;
}

void stamp(Tensor& img, int t, int cy, int cx, int cls, double intensity) {
  for (auto [dy, dx] : shape_template(cls)) {
    const int y = cy + dy, x = cx + dx;
    if (y < 0 || y >= img.shape[2] || x < 0 || x >= img.shape[3]) continue;
    img.at4(t, 0, y, x) = intensity;
  }
}

void stamp_mask(Tensor& mask, int t, int cy, int cx, int cls) {
  for (auto [dy, dx] : shape_template(cls)) {
    const int y = cy + dy, x = cx + dx;
    if (y < 0 || y >= mask.shape[2] || x < 0 || x >= mask.shape[3]) continue;
    mask.at4(t, 0, y, x) = 1.0;
  }
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// fixed audio projection, keyed by the corpus seed only
Tensor audio_projection(const DatasetSpec& spec) {
  Rng rng = Rng(spec.seed).fork(streams::kDataProjection);
  Tensor P({spec.d_audio, int64_t(spec.n_classes + kTimbreDim)});
  for (auto& v : P.data) v = rng.normal();
  return P;
}

void add_signature(const Tensor& P, int cls, const double* timbre, double* out, int d_audio,
                   int n_classes) {
  for (int d = 0; d < d_audio; ++d) {
    double acc = P.at2(d, cls) * kClassGain;
    for (int j = 0; j < kTimbreDim; ++j) acc += P.at2(d, n_classes + j) * timbre[j];
    out[d] += acc;
  }
}

struct Layout {
  int cls = 0, cls2 = -1;
  std::vector<std::pair<int, int>> pos, pos2;       // per-frame centres
  std::vector<int> distractor_cls;
  std::vector<std::pair<int, int>> distractor_pos;  // static
  std::vector<uint8_t> active, active2;
};

Layout sample_layout(const DatasetSpec& spec, int clip_index, Rng& layout_rng, Rng& activity_rng) {
  Layout L;
  L.cls = clip_index % spec.n_classes;
  const int lo = kShapeMargin, hi_y = spec.h - 1 - kShapeMargin, hi_x = spec.w - 1 - kShapeMargin;
  auto rand_pos = [&]() {
    return std::pair<int, int>{int(layout_rng.uniform_int(hi_y - lo + 1)) + lo,
                               int(layout_rng.uniform_int(hi_x - lo + 1)) + lo};
  };
  auto walk = [&](std::pair<int, int> start) {
    std::vector<std::pair<int, int>> p(size_t(spec.T));
    const int vy = int(layout_rng.uniform_int(5)) - 2;
    const int vx = int(layout_rng.uniform_int(5)) - 2;
    for (int t = 0; t < spec.T; ++t)
      p[size_t(t)] = {clampi(start.first + vy * t, lo, hi_y),
                      clampi(start.second + vx * t, lo, hi_x)};
    return p;
  };

  std::pair<int, int> p1 = rand_pos();
  L.pos = walk(p1);
  L.active.assign(size_t(spec.T), 1);

  if (spec.multi_source) {
    L.cls2 = (L.cls + 1 + int(layout_rng.uniform_int(spec.n_classes - 1))) % spec.n_classes;
    std::pair<int, int> p2 = rand_pos();
    for (int tries = 0; tries < 40; ++tries) {
      const int dy = p2.first - p1.first, dx = p2.second - p1.second;
      if (dy * dy + dx * dx >= 144) break;
      p2 = rand_pos();
    }
    L.pos2 = walk(p2);
    L.active2.assign(size_t(spec.T), 0);
    // 80%: activity switches from source 1 to source 2 at a random frame;
    // 20%: both sound for the whole clip
    if (activity_rng.uniform() < 0.8) {
      const int k = 1 + int(activity_rng.uniform_int(spec.T - 1));
      for (int t = 0; t < spec.T; ++t) {
        L.active[size_t(t)] = t < k ? 1 : 0;
        L.active2[size_t(t)] = t < k ? 0 : 1;
      }
    } else {
      L.active2.assign(size_t(spec.T), 1);
    }
  }

  const int n_distract = 1 + int(layout_rng.uniform_int(2));
  for (int d = 0; d < n_distract; ++d) {
    int cls;
    do {
      cls = int(layout_rng.uniform_int(spec.n_classes));
    } while (cls == L.cls || cls == L.cls2);
    std::pair<int, int> p = rand_pos();
    for (int tries = 0; tries < 40; ++tries) {
      bool ok = true;
      auto too_close = [&](const std::pair<int, int>& q, int min_d2) {
        const int dy = p.first - q.first, dx = p.second - q.second;
        return dy * dy + dx * dx < min_d2;
      };
      for (const auto& q : L.pos) ok = ok && !too_close(q, 121);
      for (const auto& q : L.pos2) ok = ok && !too_close(q, 121);
      for (const auto& q : L.distractor_pos) ok = ok && !too_close(q, 81);
      if (ok) break;
      p = rand_pos();
    }
    L.distractor_cls.push_back(cls);
    L.distractor_pos.push_back(p);
  }
  return L;
}

}  // namespace

void DatasetSpec::validate() const {
  if (n_clips < 1) throw std::invalid_argument("DatasetSpec: n_clips must be >= 1");
  if (n_classes < 2 || n_classes > 8)
    throw std::invalid_argument("DatasetSpec: n_classes must be in [2,8]");
  if (T < 1 || h < 16 || w < 16 || d_audio < 4)
    throw std::invalid_argument("DatasetSpec: bad tensor dimensions");
  const double total = train_frac + val_frac + test_frac;
  if (train_frac <= 0 || val_frac < 0 || test_frac < 0 || std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("DatasetSpec: split fractions must be >= 0 and sum to 1");
}

SynClip generate_clip(const DatasetSpec& spec, int clip_index,
                      const std::vector<double>* style_override) {
  Rng root(spec.seed);
  Rng layout_rng = root.fork(streams::kDataLayout, uint64_t(clip_index));
  Rng style_rng = root.fork(streams::kDataStyle, uint64_t(clip_index));
  Rng timbre_rng = root.fork(streams::kDataTimbre, uint64_t(clip_index));
  Rng audio_rng = root.fork(streams::kDataAudioNoise, uint64_t(clip_index));
  Rng frame_rng = root.fork(streams::kDataFrameNoise, uint64_t(clip_index));
  Rng activity_rng = root.fork(streams::kDataActivity, uint64_t(clip_index));

  Layout L = sample_layout(spec, clip_index, layout_rng, activity_rng);

  SynClip clip;
  clip.id = clip_index;
  clip.source_class = L.cls;
  clip.source_class2 = L.cls2;
  clip.active = L.active;
  clip.active2 = L.active2;

  // styles: [source1, source2, distractor1, distractor2]
  std::vector<double> style(4);
  for (auto& v : style) v = style_rng.uniform(0.55, 0.95);
  if (style_override) {
    if (style_override->size() != 4)
      throw std::invalid_argument("generate_clip: style override must have 4 entries");
    style = *style_override;
  }
  clip.visual_style = style;

  const int n_timbre = spec.multi_source ? 2 * kTimbreDim : kTimbreDim;
  clip.audio_timbre.resize(size_t(n_timbre));
  for (auto& v : clip.audio_timbre) v = timbre_rng.normal(0.0, kTimbreStd);

  clip.frames = Tensor({spec.T, 1, spec.h, spec.w});
  clip.masks = Tensor({spec.T, 1, spec.h, spec.w}, 0.0);
  clip.audio = Tensor({spec.T, spec.d_audio}, 0.0);
  clip.positions = Tensor({spec.T, 2});
  if (spec.multi_source) clip.positions2 = Tensor({spec.T, 2});

  for (auto& v : clip.frames.data) v = frame_rng.uniform(0.0, kBackgroundNoise);

  const Tensor P = audio_projection(spec);
  for (int t = 0; t < spec.T; ++t) {
    for (size_t d = 0; d < L.distractor_cls.size(); ++d)
      stamp(clip.frames, t, L.distractor_pos[d].first, L.distractor_pos[d].second,
            L.distractor_cls[d], style[2 + d]);
    // sources are rendered whether or not they currently sound
    stamp(clip.frames, t, L.pos[size_t(t)].first, L.pos[size_t(t)].second, L.cls, style[0]);
    clip.positions.at2(t, 0) = L.pos[size_t(t)].first;
    clip.positions.at2(t, 1) = L.pos[size_t(t)].second;
    if (spec.multi_source) {
      stamp(clip.frames, t, L.pos2[size_t(t)].first, L.pos2[size_t(t)].second, L.cls2, style[1]);
      clip.positions2.at2(t, 0) = L.pos2[size_t(t)].first;
      clip.positions2.at2(t, 1) = L.pos2[size_t(t)].second;
    }

    if (L.active[size_t(t)])
      stamp_mask(clip.masks, t, L.pos[size_t(t)].first, L.pos[size_t(t)].second, L.cls);
    if (spec.multi_source && L.active2[size_t(t)])
      stamp_mask(clip.masks, t, L.pos2[size_t(t)].first, L.pos2[size_t(t)].second, L.cls2);

    double* arow = &clip.audio.data[size_t(t * spec.d_audio)];
    if (L.active[size_t(t)])
      add_signature(P, L.cls, clip.audio_timbre.data(), arow, spec.d_audio, spec.n_classes);
    if (spec.multi_source && L.active2[size_t(t)])
      add_signature(P, L.cls2, clip.audio_timbre.data() + kTimbreDim, arow, spec.d_audio,
                    spec.n_classes);
    for (int d = 0; d < spec.d_audio; ++d) arow[d] += audio_rng.normal(0.0, kAudioNoiseStd);
  }
  return clip;
}

Corpus generate(const DatasetSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.spec = spec;
  corpus.clips.reserve(size_t(spec.n_clips));
  for (int i = 0; i < spec.n_clips; ++i) corpus.clips.push_back(generate_clip(spec, i));

  // stratified split: shuffle within each class, then cut by fractions
  Rng split_rng = Rng(spec.seed).fork(streams::kDataSplit);
  std::vector<std::vector<int>> by_class(size_t(spec.n_classes));
  for (int i = 0; i < spec.n_clips; ++i)
    by_class[size_t(corpus.clips[size_t(i)].source_class)].push_back(i);
  for (auto& bucket : by_class) {
    for (size_t i = bucket.size(); i > 1; --i)
      std::swap(bucket[i - 1], bucket[size_t(split_rng.uniform_int(int64_t(i)))]);
    const int n = int(bucket.size());
    const int n_train = int(std::lround(spec.train_frac * n));
    const int n_val = int(std::lround(spec.val_frac * n));
    for (int i = 0; i < n; ++i) {
      if (i < n_train)
        corpus.train_idx.push_back(bucket[size_t(i)]);
      else if (i < n_train + n_val)
        corpus.val_idx.push_back(bucket[size_t(i)]);
      else
        corpus.test_idx.push_back(bucket[size_t(i)]);
    }
  }
  std::sort(corpus.train_idx.begin(), corpus.train_idx.end());
  std::sort(corpus.val_idx.begin(), corpus.val_idx.end());
  std::sort(corpus.test_idx.begin(), corpus.test_idx.end());
  return corpus;
}

const std::vector<int>& Corpus::split(const std::string& name) const {
  if (name == "train") return train_idx;
  if (name == "val") return val_idx;
  if (name == "test") return test_idx;
  throw std::invalid_argument("unknown split '" + name + "' (want train|val|test)");
}

// ------------------------------------------------------------------ storage

static constexpr char kCorpusMagic[8] = {'E', 'C', 'M', 'V', 'A', 'V', 'S', '1'};

static void write_u8(std::ostream& os, const Tensor& t) {
  std::vector<uint8_t> buf(t.data.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = t.data[i] != 0.0 ? 1 : 0;
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

static Tensor read_u8(std::istream& is, std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  std::vector<uint8_t> buf(t.data.size());
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (size_t(is.gcount()) != buf.size()) throw IoError("truncated corpus mask array");
  for (size_t i = 0; i < buf.size(); ++i) t.data[i] = double(buf[i]);
  return t;
}

void save_corpus(const Corpus& corpus, const std::string& base_path) {
  const DatasetSpec& s = corpus.spec;
  std::ofstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + base_path + ".bin for writing");
  bin.write(kCorpusMagic, 8);
  for (const SynClip& c : corpus.clips) {
    write_f64_le(bin, c.frames.data.data(), c.frames.data.size());
    write_f64_le(bin, c.audio.data.data(), c.audio.data.size());
    write_u8(bin, c.masks);
    write_f64_le(bin, c.positions.data.data(), c.positions.data.size());
    if (c.positions2.defined())
      write_f64_le(bin, c.positions2.data.data(), c.positions2.data.size());
    write_f64_le(bin, c.visual_style.data(), c.visual_style.size());
    write_f64_le(bin, c.audio_timbre.data(), c.audio_timbre.size());
  }
  bin.flush();
  if (!bin) throw IoError("write failure on " + base_path + ".bin");

  json manifest;
  manifest["format"] = "ecmvae-corpus";
  manifest["version"] = 1;
  json js;
  js["n_clips"] = s.n_clips;
  js["train_frac"] = s.train_frac;
  js["val_frac"] = s.val_frac;
  js["test_frac"] = s.test_frac;
  js["n_classes"] = s.n_classes;
  js["multi_source"] = s.multi_source;
  js["seed"] = s.seed;
  js["T"] = s.T;
  js["h"] = s.h;
  js["w"] = s.w;
  js["d_audio"] = s.d_audio;
  manifest["spec"] = js;
  manifest["splits"] = {{"train", corpus.train_idx},
                        {"val", corpus.val_idx},
                        {"test", corpus.test_idx}};
  json clips = json::array();
  for (const SynClip& c : corpus.clips) {
    json jc;
    jc["id"] = c.id;
    jc["source_class"] = c.source_class;
    jc["source_class2"] = c.source_class2;
    jc["active"] = c.active;
    jc["active2"] = c.active2;
    jc["n_timbre"] = c.audio_timbre.size();
    clips.push_back(jc);
  }
  manifest["clips"] = clips;
  std::ofstream mf(base_path + ".json");
  if (!mf) throw IoError("cannot open " + base_path + ".json for writing");
  mf << manifest.dump(2) << "\n";
  if (!mf) throw IoError("write failure on " + base_path + ".json");
}

Corpus load_corpus(const std::string& base_path) {
  std::ifstream mf(base_path + ".json");
  if (!mf) throw IoError("cannot open " + base_path + ".json");
  json manifest = json::parse(mf);
  if (manifest.value("format", "") != "ecmvae-corpus" || manifest.value("version", 0) != 1)
    throw IoError("corpus version mismatch in " + base_path + ".json");

  Corpus corpus;
  const auto& js = manifest.at("spec");
  DatasetSpec& s = corpus.spec;
  s.n_clips = js.at("n_clips");
  s.train_frac = js.at("train_frac");
  s.val_frac = js.at("val_frac");
  s.test_frac = js.at("test_frac");
  s.n_classes = js.at("n_classes");
  s.multi_source = js.at("multi_source");
  s.seed = js.at("seed");
  s.T = js.at("T");
  s.h = js.at("h");
  s.w = js.at("w");
  s.d_audio = js.at("d_audio");
  corpus.train_idx = manifest.at("splits").at("train").get<std::vector<int>>();
  corpus.val_idx = manifest.at("splits").at("val").get<std::vector<int>>();
  corpus.test_idx = manifest.at("splits").at("test").get<std::vector<int>>();

  std::ifstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + base_path + ".bin");
  char magic[8];
  bin.read(magic, 8);
  if (bin.gcount() != 8 || std::memcmp(magic, kCorpusMagic, 8) != 0)
    throw IoError("corpus version mismatch: bad magic in " + base_path + ".bin");

  for (const auto& jc : manifest.at("clips")) {
    SynClip c;
    c.id = jc.at("id");
    c.source_class = jc.at("source_class");
    c.source_class2 = jc.at("source_class2");
    c.active = jc.at("active").get<std::vector<uint8_t>>();
    c.active2 = jc.at("active2").get<std::vector<uint8_t>>();
    c.frames = Tensor({s.T, 1, s.h, s.w});
    read_f64_le(bin, c.frames.data.data(), c.frames.data.size());
    c.audio = Tensor({s.T, s.d_audio});
    read_f64_le(bin, c.audio.data.data(), c.audio.data.size());
    c.masks = read_u8(bin, {s.T, 1, s.h, s.w});
    c.positions = Tensor({s.T, 2});
    read_f64_le(bin, c.positions.data.data(), c.positions.data.size());
    if (s.multi_source) {
      c.positions2 = Tensor({s.T, 2});
      read_f64_le(bin, c.positions2.data.data(), c.positions2.data.size());
    }
    c.visual_style.resize(4);
    read_f64_le(bin, c.visual_style.data(), 4);
    c.audio_timbre.resize(jc.at("n_timbre").get<size_t>());
    read_f64_le(bin, c.audio_timbre.data(), c.audio_timbre.size());
    corpus.clips.push_back(std::move(c));
  }
  return corpus;
}

Tensor s4_label_mask(const SynClip& clip, bool multi_source_corpus) {
  if (multi_source_corpus) return clip.masks;  // MS3-style: full supervision
  if (clip.source_class2 >= 0)
    throw std::invalid_argument("s4_label_mask: multi-source clip in S4 mode");
  const int64_t T = clip.masks.shape[0];
  const int64_t frame = clip.masks.numel() / T;
  Tensor out(clip.masks.shape);
  for (int64_t t = 0; t < T; ++t)
    std::memcpy(&out.data[size_t(t * frame)], &clip.masks.data[0], size_t(frame) * 8);
  return out;
}

double background_miou(const Corpus& corpus, const std::vector<int>& idx) {
  double acc = 0.0;
  int64_t frames = 0;
  for (int i : idx) {
    const SynClip& c = corpus.clips[size_t(i)];
    const int64_t T = c.masks.shape[0];
    const int64_t frame = c.masks.numel() / T;
    for (int64_t t = 0; t < T; ++t) {
      double gt = 0.0;
      for (int64_t j = 0; j < frame; ++j) gt += c.masks.data[size_t(t * frame + j)];
      acc += gt == 0.0 ? 1.0 : 0.0;  // empty prediction scores 1 only on empty gt
      ++frames;
    }
  }
  return frames ? acc / double(frames) : 0.0;
}

// ------------------------------------------------------------- audio oracle

AudioStumpOracle fit_audio_stumps(const Corpus& corpus, const std::vector<int>& idx) {
  const int C = corpus.spec.n_classes;
  const int D = corpus.spec.d_audio;
  // per-class per-dim moments of clip-mean audio
  std::vector<std::vector<double>> sum(size_t(C), std::vector<double>(size_t(D), 0.0));
  std::vector<std::vector<double>> sum2(size_t(C), std::vector<double>(size_t(D), 0.0));
  std::vector<int> count(size_t(C), 0);
  for (int i : idx) {
    const SynClip& c = corpus.clips[size_t(i)];
    const int64_t T = c.audio.shape[0];
    count[size_t(c.source_class)]++;
    for (int d = 0; d < D; ++d) {
      double m = 0.0;
      for (int64_t t = 0; t < T; ++t) m += c.audio.at2(t, d);
      m /= double(T);
      sum[size_t(c.source_class)][size_t(d)] += m;
      sum2[size_t(c.source_class)][size_t(d)] += m * m;
    }
  }
  AudioStumpOracle oracle;
  for (int cls = 0; cls < C; ++cls) {
    double best_score = -1.0;
    AudioStumpOracle::Stump best;
    for (int d = 0; d < D; ++d) {
      const double mc = sum[size_t(cls)][size_t(d)] / std::max(1, count[size_t(cls)]);
      double mr = 0.0, vr = 0.0;
      int nr = 0;
      for (int o = 0; o < C; ++o) {
        if (o == cls) continue;
        mr += sum[size_t(o)][size_t(d)];
        vr += sum2[size_t(o)][size_t(d)];
        nr += count[size_t(o)];
      }
      mr /= std::max(1, nr);
      vr = std::max(1e-9, vr / std::max(1, nr) - mr * mr);
      const double vc = std::max(
          1e-9, sum2[size_t(cls)][size_t(d)] / std::max(1, count[size_t(cls)]) - mc * mc);
      const double score = std::abs(mc - mr) / std::sqrt(0.5 * (vc + vr));
      if (score > best_score) {
        best_score = score;
        best.dim = d;
        best.threshold = 0.5 * (mc + mr);
        best.sign = mc > mr ? 1 : -1;
      }
    }
    oracle.per_class.push_back(best);
  }
  return oracle;
}

int AudioStumpOracle::predict(const Tensor& audio) const {
  const int64_t T = audio.shape[0];
  int best = 0;
  double best_margin = -1e300;
  for (size_t cls = 0; cls < per_class.size(); ++cls) {
    const Stump& s = per_class[cls];
    double m = 0.0;
    for (int64_t t = 0; t < T; ++t) m += audio.at2(t, s.dim);
    m /= double(T);
    const double margin = double(s.sign) * (m - s.threshold);
    if (margin > best_margin) {
      best_margin = margin;
      best = int(cls);
    }
  }
  return best;
}

double audio_stump_accuracy(const AudioStumpOracle& oracle, const Corpus& corpus,
                            const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  int hit = 0;
  for (int i : idx)
    hit += oracle.predict(corpus.clips[size_t(i)].audio) == corpus.clips[size_t(i)].source_class;
  return double(hit) / double(idx.size());
}

}  // namespace ecmvae
