#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ecmvae/trainer.hpp"

using namespace ecmvae;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Corpus tiny_corpus(bool multi = false, int n = 16, uint64_t seed = 5) {
  DatasetSpec s;
  s.n_clips = n;
  s.multi_source = multi;
  s.seed = seed;
  s.train_frac = 0.5;
  s.val_frac = 0.25;
  s.test_frac = 0.25;
  return generate(s);
}

TrainConfig tiny_config(const fs::path& out, const std::string& mode = "s4") {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.threads = 2;
  cfg.seed = 1;
  cfg.out_dir = out.string();
  return cfg;
}

}  // namespace

TEST_CASE("one-epoch run on a tiny corpus under 60 seconds, artifacts written") {
  const auto t0 = std::chrono::steady_clock::now();
  Corpus corpus = tiny_corpus();
  fs::path dir = fresh_dir("ecmvae_train_tiny");
  TrainConfig cfg = tiny_config(dir / "run");
  RunRecord rec = train(cfg, corpus);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  CHECK(rec.steps == 2);  // 8 train clips / batch 4
  CHECK(!rec.aborted_non_finite);
  CHECK(fs::exists(dir / "run/config.json"));
  CHECK(fs::exists(dir / "run/metrics.csv"));
  CHECK(fs::exists(dir / "run/eval_val_epoch0.json"));
  CHECK(fs::exists(dir / "run/eval_test_final.json"));
  CHECK(fs::exists(dir / "run/checkpoint.json"));
  CHECK(fs::exists(dir / "run/checkpoint.bin"));
  CHECK(fs::exists(dir / "run/run.json"));

  // metrics rows: step,epoch + 9 components
  std::istringstream csv(slurp((dir / "run/metrics.csv").string()));
  std::string line;
  std::getline(csv, line);
  CHECK(line == std::string("step,epoch,") + LossReport::csv_header());
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == rec.steps);
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed give a bit-identical metrics CSV") {
  Corpus corpus = tiny_corpus();
  fs::path dir = fresh_dir("ecmvae_train_det");
  TrainConfig cfg = tiny_config(dir / "a");
  cfg.epochs = 2;
  train(cfg, corpus);
  TrainConfig cfg2 = tiny_config(dir / "b");
  cfg2.epochs = 2;
  train(cfg2, corpus);
  CHECK(slurp((dir / "a/metrics.csv").string()) == slurp((dir / "b/metrics.csv").string()));
  CHECK(slurp((dir / "a/eval_test_final.json").string()) ==
        slurp((dir / "b/eval_test_final.json").string()));
  fs::remove_all(dir);
}

TEST_CASE("rerunning from the embedded config reproduces the metrics CSV") {
  Corpus corpus = tiny_corpus();
  fs::path dir = fresh_dir("ecmvae_train_repro");
  TrainConfig cfg = tiny_config(dir / "orig");
  train(cfg, corpus);
  TrainConfig echoed = TrainConfig::from_json(slurp((dir / "orig/config.json").string()));
  echoed.out_dir = (dir / "replay").string();
  train(echoed, corpus);
  CHECK(slurp((dir / "orig/metrics.csv").string()) == slurp((dir / "replay/metrics.csv").string()));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint reloads into a working model; per-clip mean equals aggregate") {
  Corpus corpus = tiny_corpus();
  fs::path dir = fresh_dir("ecmvae_train_ckpt");
  TrainConfig cfg = tiny_config(dir / "run");
  RunRecord rec = train(cfg, corpus);

  Model loaded = load_model(rec.checkpoint_base);
  EvalResult ev = evaluate_model(loaded, corpus, corpus.test_idx, 2);
  CHECK(ev.miou == doctest::Approx(rec.final_test.miou).epsilon(1e-12));
  double mean = 0.0;
  for (const auto& pc : ev.per_clip) mean += pc.miou;
  mean /= double(ev.per_clip.size());
  CHECK(std::abs(mean - ev.miou) < 1e-9);
  fs::remove_all(dir);
}

TEST_CASE("latent export layout") {
  Corpus corpus = tiny_corpus();
  fs::path dir = fresh_dir("ecmvae_train_latents");
  Model model(ModelConfig{}, 3);
  const std::string csv_path = (dir / "latents.csv").string();
  export_latents(model, corpus, corpus.test_idx, csv_path);
  std::istringstream csv(slurp(csv_path));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "clip_id,t,code_type,dim_0,dim_1,dim_2,dim_3,dim_4,dim_5,dim_6,dim_7,dim_8,"
                "dim_9,dim_10,dim_11,dim_12,dim_13,dim_14,dim_15");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == int(corpus.test_idx.size()) * 5 * 3);
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with a loadable last-good checkpoint") {
  Corpus corpus = tiny_corpus();
  fs::path dir = fresh_dir("ecmvae_train_abort");
  TrainConfig cfg = tiny_config(dir / "run");
  cfg.epochs = 3;
  cfg.lr = 1e14;  // Adam step magnitude ~ lr: parameters explode immediately
  RunRecord rec = train(cfg, corpus);
  CHECK(rec.aborted_non_finite);
  CHECK(rec.checkpoint_base.find("lastgood") != std::string::npos);
  Model loaded = load_model(rec.checkpoint_base);
  CHECK(loaded.param_count() > 0);
  for (const auto& [name, e] : loaded.params().entries()) CHECK(e.value.all_finite());
  fs::remove_all(dir);
}

TEST_CASE("config validation and parsing") {
  TrainConfig cfg;
  cfg.mode = "bogus";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  TrainConfig c2;
  c2.batch_size = 0;
  CHECK_THROWS_AS(c2.validate(), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json("{nope"), ConfigError);

  TrainConfig c3 = TrainConfig::from_json(R"({"mode":"ms3","lr":0.001,"seed":9})");
  CHECK(c3.mode == "ms3");
  CHECK(c3.lr == 0.001);
  CHECK(c3.seed == 9);
  CHECK(c3.effective_epochs() == 30);
  TrainConfig c4;
  CHECK(c4.effective_epochs() == 15);
  // round trip preserves the hash
  TrainConfig c5 = TrainConfig::from_json(c3.to_json());
  CHECK(c5.hash() == c3.hash());
}

TEST_CASE("s4 mode on a multi-source corpus is a config error") {
  Corpus corpus = tiny_corpus(true);
  fs::path dir = fresh_dir("ecmvae_train_badmode");
  TrainConfig cfg = tiny_config(dir / "run", "s4");
  CHECK_THROWS_AS(train(cfg, corpus), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("losses ablation suite: grid rows, stats audited from eval files") {
  Corpus corpus = tiny_corpus(true, 16, 7);
  fs::path dir = fresh_dir("ecmvae_ablate");
  TrainConfig base = tiny_config(dir / "suite", "ms3");
  base.epochs = 1;
  AblationTable table = run_ablation("losses", base, {1, 2, 3}, corpus);
  REQUIRE(table.rows.size() == 4);
  CHECK(table.rows[0].label == "diff:off,sic:off");
  CHECK(table.rows[3].label == "diff:on,sic:on");
  for (const auto& row : table.rows) {
    CHECK(row.test_miou.size() == 3);
    CHECK(audit_row_mean_miou(row) == doctest::Approx(row.mean_miou).epsilon(1e-9));
  }
  CHECK(fs::exists(dir / "suite/ablate_losses.csv"));
  CHECK(fs::exists(dir / "suite/ablate_losses.txt"));
  fs::remove_all(dir);
}

TEST_CASE("factorization suite builds the four structural rows") {
  Corpus corpus = tiny_corpus(true, 16, 9);
  fs::path dir = fresh_dir("ecmvae_ablate_fact");
  TrainConfig base = tiny_config(dir / "suite", "ms3");
  base.epochs = 1;
  AblationTable table = run_ablation("factorization", base, {1, 2, 3}, corpus);
  REQUIRE(table.rows.size() == 4);
  CHECK(table.rows[0].label == "vae-unfact-L16");
  CHECK(table.rows[1].label == "vae-unfact-L48");
  CHECK(table.rows[2].label == "vae-fact-L16");
  CHECK(table.rows[3].label == "ae-fact-L16");
  fs::remove_all(dir);
}
