#pragma once

#include "ecmvae/metrics.hpp"
#include "ecmvae/model.hpp"

namespace ecmvae {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string data;        // corpus base path (without .json/.bin)
  std::string mode = "s4";  // "s4" (first-frame supervision) or "ms3"
  ModelConfig model;
  LossWeights weights;
  int epochs = -1;  // -1: 15 for s4, 30 for ms3
  int batch_size = 4;
  double lr = 1e-4;
  uint64_t seed = 1;
  std::string out_dir;
  int threads = 2;

  void validate() const;
  int effective_epochs() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& s);
  uint64_t hash() const;
};

struct RunRecord {
  TrainConfig config;
  std::string out_dir;
  std::string metrics_csv;      // one row per optimizer step
  std::string checkpoint_base;  // final (or last-good on abort) checkpoint
  EvalResult final_val, final_test;
  int steps = 0;
  double wall_seconds = 0.0;
  bool aborted_non_finite = false;
};

// Full training run; writes config.json, metrics.csv, eval_val_epoch<k>.json,
// eval_{val,test}_final.json, checkpoint.{json,bin} and run.json to out_dir.
RunRecord train(const TrainConfig& cfg, const Corpus& corpus);
RunRecord train(const TrainConfig& cfg);  // loads the corpus from cfg.data

EvalResult evaluate_model(const Model& model, const Corpus& corpus, const std::vector<int>& idx,
                          int threads = 2);

// loads a model (and its config) back from a checkpoint written by train()
Model load_model(const std::string& checkpoint_base);

void export_latents(const Model& model, const Corpus& corpus, const std::vector<int>& idx,
                    const std::string& csv_path);

struct AblationRow {
  std::string label;
  std::vector<uint64_t> seeds;
  std::vector<double> test_miou, test_fscore;  // per seed, re-read from eval files
  std::vector<std::string> run_dirs;
  double mean_miou = 0.0, sd_miou = 0.0, mean_fscore = 0.0, sd_fscore = 0.0;
};

struct AblationTable {
  std::string suite;
  std::vector<AblationRow> rows;
  std::string to_csv() const;
  std::string to_text() const;
};

// suites: "divergence" {KL,PoE,MoE,JS}, "factorization" {unfact L, unfact 3L,
// fact L, AE fact}, "losses" {2x2 grid over lambda1/lambda2 on/off}
AblationTable run_ablation(const std::string& suite, const TrainConfig& base,
                           const std::vector<uint64_t>& seeds, const Corpus& corpus);

// recompute a row's stats from the eval files on disk (consistency audit)
double audit_row_mean_miou(const AblationRow& row);

}  // namespace ecmvae
