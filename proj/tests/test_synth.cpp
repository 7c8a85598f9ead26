#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ecmvae/synth.hpp"

using namespace ecmvae;

namespace {

DatasetSpec small_spec(bool multi = false, uint64_t seed = 5) {
  DatasetSpec s;
  s.n_clips = 80;
  s.multi_source = multi;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("same seed gives bit-identical corpora") {
  Corpus a = generate(small_spec());
  Corpus b = generate(small_spec());
  REQUIRE(a.clips.size() == b.clips.size());
  for (size_t i = 0; i < a.clips.size(); ++i) {
    CHECK(a.clips[i].frames == b.clips[i].frames);
    CHECK(a.clips[i].audio == b.clips[i].audio);
    CHECK(a.clips[i].masks == b.clips[i].masks);
  }
  CHECK(a.train_idx == b.train_idx);
}

TEST_CASE("single-source clips have one source and connected non-empty masks") {
  Corpus c = generate(small_spec());
  for (const SynClip& clip : c.clips) {
    CHECK(clip.source_class2 == -1);
    const int64_t T = clip.masks.shape[0];
    const int64_t frame = clip.masks.numel() / T;
    for (int64_t t = 0; t < T; ++t) {
      double area = 0.0;
      for (int64_t i = 0; i < frame; ++i) area += clip.masks.data[size_t(t * frame + i)];
      CHECK(area > 0.0);
    }
  }
}

TEST_CASE("mask pixels sit on the rendered source (source drawn over them)") {
  Corpus c = generate(small_spec());
  for (const SynClip& clip : c.clips) {
    const int64_t T = clip.masks.shape[0];
    for (int64_t t = 0; t < T; ++t)
      for (int64_t y = 0; y < clip.masks.shape[2]; ++y)
        for (int64_t x = 0; x < clip.masks.shape[3]; ++x)
          if (clip.masks.at4(t, 0, y, x) != 0.0)
            CHECK(clip.frames.at4(t, 0, y, x) == clip.visual_style[0]);
  }
}

TEST_CASE("audio is bitwise independent of visual style") {
  DatasetSpec s = small_spec();
  for (int i : {0, 3, 17}) {
    SynClip base = generate_clip(s, i);
    std::vector<double> swapped = {base.visual_style[2], base.visual_style[3],
                                   base.visual_style[0], base.visual_style[1]};
    SynClip restyled = generate_clip(s, i, &swapped);
    CHECK(restyled.audio == base.audio);
    CHECK(restyled.masks == base.masks);
    CHECK(!(restyled.frames == base.frames));
  }
}

TEST_CASE("multi-source clips switch activity and union masks") {
  Corpus c = generate(small_spec(true, 9));
  int switching = 0;
  for (const SynClip& clip : c.clips) {
    CHECK(clip.source_class2 >= 0);
    CHECK(clip.source_class2 != clip.source_class);
    bool has_switch = false;
    for (size_t t = 0; t < clip.active.size(); ++t) {
      CHECK((clip.active[t] || clip.active2[t]));  // someone always sounds
      if (!clip.active[t]) has_switch = true;
    }
    switching += has_switch;
  }
  CHECK(switching > int(c.clips.size()) / 2);
}

TEST_CASE("class balance within 10 percent across splits") {
  DatasetSpec s;
  s.n_clips = 400;
  s.seed = 11;
  Corpus c = generate(s);
  for (const auto* split : {&c.train_idx, &c.val_idx, &c.test_idx}) {
    std::vector<int> counts(4, 0);
    for (int i : *split) counts[size_t(c.clips[size_t(i)].source_class)]++;
    const double expect = double(split->size()) / 4.0;
    for (int v : counts) CHECK(std::abs(v - expect) <= 0.1 * expect + 1.0);
  }
  // splits are disjoint and cover everything
  std::vector<int> all;
  for (const auto* split : {&c.train_idx, &c.val_idx, &c.test_idx})
    all.insert(all.end(), split->begin(), split->end());
  std::sort(all.begin(), all.end());
  CHECK(int(all.size()) == s.n_clips);
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("audio stump oracle predicts the class above 0.95") {
  DatasetSpec s;
  s.n_clips = 1000;
  s.seed = 21;
  Corpus c = generate(s);
  AudioStumpOracle oracle = fit_audio_stumps(c, c.train_idx);
  const double acc_train = audio_stump_accuracy(oracle, c, c.train_idx);
  const double acc_test = audio_stump_accuracy(oracle, c, c.test_idx);
  INFO("train ", acc_train, " test ", acc_test);
  CHECK(acc_train > 0.95);
  CHECK(acc_test > 0.95);
}

TEST_CASE("corpus round-trip is bitwise exact") {
  namespace fs = std::filesystem;
  DatasetSpec s = small_spec(true, 13);
  s.n_clips = 10;
  Corpus c = generate(s);
  fs::path dir = fs::temp_directory_path() / "ecmvae_corpus_test";
  fs::create_directories(dir);
  const std::string base = (dir / "corpus").string();
  save_corpus(c, base);
  Corpus l = load_corpus(base);
  CHECK(l.spec.seed == s.seed);
  CHECK(l.spec.multi_source == s.multi_source);
  CHECK(l.train_idx == c.train_idx);
  REQUIRE(l.clips.size() == c.clips.size());
  for (size_t i = 0; i < c.clips.size(); ++i) {
    CHECK(l.clips[i].frames == c.clips[i].frames);
    CHECK(l.clips[i].audio == c.clips[i].audio);
    CHECK(l.clips[i].masks == c.clips[i].masks);
    CHECK(l.clips[i].positions == c.clips[i].positions);
    CHECK(l.clips[i].audio_timbre == c.clips[i].audio_timbre);
    CHECK(l.clips[i].active == c.clips[i].active);
  }

  // corrupted magic -> version mismatch
  {
    std::fstream f(base + ".bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("ZZ", 2);
  }
  CHECK_THROWS_AS(load_corpus(base), IoError);
  fs::remove_all(dir);
}

TEST_CASE("saving twice produces identical bytes (checksum equality)") {
  namespace fs = std::filesystem;
  DatasetSpec s = small_spec(false, 7);
  s.n_clips = 6;
  fs::path dir = fs::temp_directory_path() / "ecmvae_corpus_test2";
  fs::create_directories(dir);
  save_corpus(generate(s), (dir / "a").string());
  save_corpus(generate(s), (dir / "b").string());
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp((dir / "a.bin").string()) == slurp((dir / "b.bin").string()));
  CHECK(slurp((dir / "a.json").string()) == slurp((dir / "b.json").string()));
  fs::remove_all(dir);
}

TEST_CASE("s4 label masks: tiled first frame, degradation for moving sources") {
  DatasetSpec s = small_spec(false, 17);
  Corpus c = generate(s);
  bool saw_static_match = false, saw_moving_mismatch = false;
  for (const SynClip& clip : c.clips) {
    Tensor target = s4_label_mask(clip, false);
    const int64_t frame = clip.masks.numel() / clip.masks.shape[0];
    // every target frame equals the first true frame
    for (int64_t t = 0; t < clip.masks.shape[0]; ++t)
      for (int64_t i = 0; i < frame; ++i)
        CHECK(target.data[size_t(t * frame + i)] == clip.masks.data[size_t(i)]);
    const bool moving = clip.positions.at2(0, 0) != clip.positions.at2(4, 0) ||
                        clip.positions.at2(0, 1) != clip.positions.at2(4, 1);
    if (!moving && target == clip.masks) saw_static_match = true;
    if (moving && !(target == clip.masks)) saw_moving_mismatch = true;
  }
  CHECK(saw_static_match);
  CHECK(saw_moving_mismatch);

  // MS3 mode: identity on masks; S4 on a multi-source clip is an error
  Corpus m = generate(small_spec(true, 19));
  CHECK(s4_label_mask(m.clips[0], true) == m.clips[0].masks);
  CHECK_THROWS_AS(s4_label_mask(m.clips[0], false), std::invalid_argument);
}

TEST_CASE("background miou baseline is tiny when sources always sound") {
  Corpus c = generate(small_spec());
  CHECK(background_miou(c, c.test_idx) == 0.0);
}

TEST_CASE("spec validation") {
  DatasetSpec s;
  s.n_clips = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  DatasetSpec s2;
  s2.train_frac = 0.9;
  s2.val_frac = 0.2;
  s2.test_frac = 0.1;
  CHECK_THROWS_AS(s2.validate(), std::invalid_argument);
}
