#include "ecmvae/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

namespace ecmvae {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (mode != "s4" && mode != "ms3")
    throw ConfigError("mode must be 's4' or 'ms3', got '" + mode + "'");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (epochs == 0 || epochs < -1) throw ConfigError("epochs must be positive (or -1 for default)");
  try {
    model.validate();
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

int TrainConfig::effective_epochs() const {
  if (epochs > 0) return epochs;
  return mode == "ms3" ? 30 : 15;
}

std::string TrainConfig::to_json() const {
  json j;
  j["data"] = data;
  j["mode"] = mode;
  j["model"] = json::parse(model.to_json());
  json w;
  w["beta"] = weights.beta;
  w["alpha1"] = weights.alpha1;
  w["alpha2"] = weights.alpha2;
  w["lambda1"] = weights.lambda1;
  w["lambda2"] = weights.lambda2;
  w["lambda3"] = weights.lambda3;
  j["weights"] = w;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["threads"] = threads;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& s) {
  json j;
  try {
    j = json::parse(s);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }
  TrainConfig c;
  try {
    c.data = j.value("data", "");
    c.mode = j.value("mode", "s4");
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      c.weights.beta = w.value("beta", c.weights.beta);
      c.weights.alpha1 = w.value("alpha1", c.weights.alpha1);
      c.weights.alpha2 = w.value("alpha2", c.weights.alpha2);
      c.weights.lambda1 = w.value("lambda1", c.weights.lambda1);
      c.weights.lambda2 = w.value("lambda2", c.weights.lambda2);
      c.weights.lambda3 = w.value("lambda3", c.weights.lambda3);
    }
    c.epochs = j.value("epochs", -1);
    c.batch_size = j.value("batch_size", 4);
    c.lr = j.value("lr", 1e-4);
    c.seed = j.value("seed", uint64_t(1));
    c.out_dir = j.value("out_dir", "");
    c.threads = j.value("threads", 2);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field failure: ") + e.what());
  }
  return c;
}

uint64_t TrainConfig::hash() const {
  const std::string s = to_json();
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char ch : s) {
    h ^= uint64_t(uint8_t(ch));
    h *= 1099511628211ULL;
  }
  return h;
}

// ------------------------------------------------------------------- train

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << content;
  if (!f) throw IoError("write failure on " + path);
}

struct ClipResult {
  std::map<std::string, Tensor> grads;
  LossReport report;
};

}  // namespace

EvalResult evaluate_model(const Model& model, const Corpus& corpus, const std::vector<int>& idx,
                          int threads) {
  EvalResult result;
  result.per_clip.resize(idx.size());
  const int n_threads = std::max(1, std::min<int>(threads, int(idx.size())));
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t k = next.fetch_add(1); k < idx.size(); k = next.fetch_add(1)) {
      const SynClip& clip = corpus.clips[size_t(idx[k])];
      Tensor probs = model.predict_probs(clip);
      EvalResult::PerClip pc;
      pc.clip_id = clip.id;
      pc.miou = miou(binarize(probs), clip.masks);
      pc.fscore = fscore(probs, clip.masks);
      result.per_clip[k] = pc;
    }
  };
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  const int64_t T = corpus.spec.T;
  for (const auto& pc : result.per_clip) {
    result.miou += pc.miou;
    result.fscore += pc.fscore;
    result.n_frames += T;
  }
  if (!result.per_clip.empty()) {
    result.miou /= double(result.per_clip.size());
    result.fscore /= double(result.per_clip.size());
  }
  return result;
}

RunRecord train(const TrainConfig& cfg_in, const Corpus& corpus) {
  TrainConfig cfg = cfg_in;
  cfg.model.T = corpus.spec.T;
  cfg.model.h = corpus.spec.h;
  cfg.model.w = corpus.spec.w;
  cfg.model.d_audio = corpus.spec.d_audio;
  cfg.validate();
  if (cfg.mode == "s4" && corpus.spec.multi_source)
    throw ConfigError("mode 's4' needs a single-source corpus");
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is required");
  fs::create_directories(cfg.out_dir);

  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = cfg;
  rec.out_dir = cfg.out_dir;
  write_file(cfg.out_dir + "/config.json", cfg.to_json() + "\n");

  Model model(cfg.model, cfg.seed);
  Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng root(cfg.seed);

  // training targets: S4 repeats the first frame's ground truth
  std::vector<int> order = corpus.train_idx;
  const int n_train = int(order.size());
  if (n_train == 0) throw ConfigError("corpus has no training clips");
  const int epochs = cfg.effective_epochs();

  std::string csv = std::string("step,epoch,") + LossReport::csv_header() + "\n";
  rec.metrics_csv = cfg.out_dir + "/metrics.csv";
  rec.checkpoint_base = cfg.out_dir + "/checkpoint";

  int step = 0;
  bool aborted = false;
  for (int epoch = 0; epoch < epochs && !aborted; ++epoch) {
    Rng shuffle_rng = root.fork(streams::kTrainShuffle, uint64_t(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_int(int64_t(i)))]);

    for (int start = 0; start < n_train && !aborted; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_train - start);
      const size_t nb = size_t(bsz);
      std::vector<ClipResult> results(nb);
      std::vector<std::string> errors(nb);
      {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        auto worker = [&]() {
          for (int slot = next.fetch_add(1); slot < bsz; slot = next.fetch_add(1)) {
            try {
              const int clip_idx = order[size_t(start + slot)];
              const SynClip& clip = corpus.clips[size_t(clip_idx)];
              Tensor target = s4_label_mask(clip, corpus.spec.multi_source);
              const uint64_t k = uint64_t(epoch) * uint64_t(n_train) + uint64_t(start + slot);
              Rng clip_rng = root.fork(streams::kTrainClip, k);
              Tape tape;
              ParamBinder bind(tape, model.params());
              Model::ClipLoss cl = model.clip_loss(tape, bind, clip, target, cfg.weights, clip_rng);
              tape.backward(cl.total);
              bind.collect(results[size_t(slot)].grads);
              results[size_t(slot)].report = cl.report;
            } catch (const std::exception& e) {
              errors[size_t(slot)] = e.what();
            }
          }
        };
        const int n_workers = std::max(1, std::min(cfg.threads, bsz));
        for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
      }
      for (const auto& err : errors) {
        if (err.empty()) continue;
        // numerical abort: parameters are still those of the last good step
        aborted = true;
        save_checkpoint(cfg.out_dir + "/checkpoint_lastgood", model.params(), &adam,
                        cfg.to_json());
        rec.checkpoint_base = cfg.out_dir + "/checkpoint_lastgood";
        rec.aborted_non_finite = true;
        break;
      }
      if (aborted) break;

      // fixed-order reduction across the batch
      const double scale = 1.0 / double(bsz);
      LossReport batch_report;
      for (int slot = 0; slot < bsz; ++slot) {
        for (auto& [name, g] : results[size_t(slot)].grads)
          model.params().grad(name).add_scaled(g, scale);
        batch_report.accumulate(results[size_t(slot)].report, scale);
      }
      adam.step(model.params());
      ++step;
      csv += std::to_string(step) + "," + std::to_string(epoch) + "," + batch_report.csv_row() +
             "\n";
    }

    if (!aborted) {
      EvalResult ev = evaluate_model(model, corpus, corpus.val_idx, cfg.threads);
      write_file(cfg.out_dir + "/eval_val_epoch" + std::to_string(epoch) + ".json",
                 ev.to_json() + "\n");
      save_checkpoint(rec.checkpoint_base, model.params(), &adam, cfg.to_json());
    }
  }

  write_file(rec.metrics_csv, csv);
  rec.steps = step;
  if (!aborted) {
    save_checkpoint(rec.checkpoint_base, model.params(), &adam, cfg.to_json());
    rec.final_val = evaluate_model(model, corpus, corpus.val_idx, cfg.threads);
    rec.final_test = evaluate_model(model, corpus, corpus.test_idx, cfg.threads);
    write_file(cfg.out_dir + "/eval_val_final.json", rec.final_val.to_json() + "\n");
    write_file(cfg.out_dir + "/eval_test_final.json", rec.final_test.to_json() + "\n");
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json run;
  run["config"] = json::parse(cfg.to_json());
  run["config_hash"] = cfg.hash();
  run["steps"] = rec.steps;
  run["wall_seconds"] = rec.wall_seconds;
  run["aborted_non_finite"] = rec.aborted_non_finite;
  run["checkpoint"] = rec.checkpoint_base;
  run["param_count"] = model.param_count();
  if (!aborted) {
    run["final_val_miou"] = rec.final_val.miou;
    run["final_test_miou"] = rec.final_test.miou;
    run["final_val_fscore"] = rec.final_val.fscore;
    run["final_test_fscore"] = rec.final_test.fscore;
  }
  write_file(cfg.out_dir + "/run.json", run.dump(2) + "\n");
  return rec;
}

RunRecord train(const TrainConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("data (corpus path) is required");
  Corpus corpus = load_corpus(cfg.data);
  return train(cfg, corpus);
}

Model load_model(const std::string& checkpoint_base) {
  ParamStore probe;
  std::string cfg_json;
  load_checkpoint(checkpoint_base, probe, nullptr, &cfg_json);
  if (cfg_json.empty()) throw IoError("checkpoint has no embedded config: " + checkpoint_base);
  TrainConfig cfg = TrainConfig::from_json(cfg_json);
  Model model(cfg.model);
  for (auto& [name, e] : probe.entries()) model.params().add(name, e.value);
  return model;
}

void export_latents(const Model& model, const Corpus& corpus, const std::vector<int>& idx,
                    const std::string& csv_path) {
  std::string out = latent_csv_header(int(model.config().latent_dim));
  for (int i : idx) {
    const SynClip& clip = corpus.clips[size_t(i)];
    Model::Codes codes = model.prior_mean_codes(clip);
    if (model.config().factorized) {
      append_latent_csv_rows(out, clip.id, codes.c, codes.s_a, codes.s_v);
    } else {
      // unfactorized models only carry the shared code
      Tensor zeros(codes.c.shape, 0.0);
      append_latent_csv_rows(out, clip.id, codes.c, zeros, zeros);
    }
  }
  write_file(csv_path, out);
}

// ---------------------------------------------------------------- ablation

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

double audit_row_mean_miou(const AblationRow& row) {
  std::vector<double> vals;
  for (const std::string& dir : row.run_dirs) {
    std::ifstream f(dir + "/eval_test_final.json");
    if (!f) throw IoError("missing eval file in " + dir);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    vals.push_back(EvalResult::from_json(s).miou);
  }
  return mean_of(vals);
}

AblationTable run_ablation(const std::string& suite, const TrainConfig& base,
                           const std::vector<uint64_t>& seeds, const Corpus& corpus) {
  if (seeds.size() < 3) throw ConfigError("ablation suites need >= 3 seeds");
  struct RowCfg {
    std::string label;
    TrainConfig cfg;
  };
  std::vector<RowCfg> rows;
  auto push = [&rows](const std::string& label, TrainConfig c) {
    rows.push_back({label, std::move(c)});
  };

  if (suite == "divergence") {
    for (DivergenceMode m :
         {DivergenceMode::KL, DivergenceMode::PoE, DivergenceMode::MoE, DivergenceMode::JS}) {
      TrainConfig c = base;
      c.model.divergence = m;
      push(to_string(m), c);
    }
  } else if (suite == "factorization") {
    const int64_t L = base.model.latent_dim;
    TrainConfig u16 = base;
    u16.model.factorized = false;
    u16.model.latent_dim = L;
    u16.weights.lambda1 = 0.0;
    u16.weights.lambda2 = 0.0;
    push("vae-unfact-L" + std::to_string(L), u16);
    TrainConfig u48 = u16;
    u48.model.latent_dim = 3 * L;
    push("vae-unfact-L" + std::to_string(3 * L), u48);
    TrainConfig f16 = base;
    f16.model.factorized = true;
    push("vae-fact-L" + std::to_string(L), f16);
    TrainConfig ae = base;
    ae.model.vae = false;
    ae.model.factorized = true;
    push("ae-fact-L" + std::to_string(L), ae);
  } else if (suite == "losses") {
    for (const bool l1 : {false, true})
      for (const bool l2 : {false, true}) {
        TrainConfig c = base;
        c.weights.lambda1 = l1 ? base.weights.lambda1 : 0.0;
        c.weights.lambda2 = l2 ? base.weights.lambda2 : 0.0;
        push(std::string("diff:") + (l1 ? "on" : "off") + ",sic:" + (l2 ? "on" : "off"), c);
      }
  } else {
    throw ConfigError("unknown suite '" + suite + "' (want divergence|factorization|losses)");
  }

  AblationTable table;
  table.suite = suite;
  for (const auto& rc : rows) {
    AblationRow row;
    row.label = rc.label;
    for (uint64_t seed : seeds) {
      TrainConfig c = rc.cfg;
      c.seed = seed;
      c.out_dir = base.out_dir + "/runs/" + suite + "_" + rc.label + "_seed" +
                  std::to_string(seed);
      RunRecord r = train(c, corpus);
      if (r.aborted_non_finite) throw NumericalError("ablation run aborted: " + c.out_dir);
      row.seeds.push_back(seed);
      row.run_dirs.push_back(c.out_dir);
    }
    // stats come from the eval files on disk, not the in-memory results
    for (const std::string& dir : row.run_dirs) {
      std::ifstream f(dir + "/eval_test_final.json");
      std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      EvalResult ev = EvalResult::from_json(s);
      row.test_miou.push_back(ev.miou);
      row.test_fscore.push_back(ev.fscore);
    }
    row.mean_miou = mean_of(row.test_miou);
    row.sd_miou = sd_of(row.test_miou);
    row.mean_fscore = mean_of(row.test_fscore);
    row.sd_fscore = sd_of(row.test_fscore);
    table.rows.push_back(std::move(row));
  }

  write_file(base.out_dir + "/ablate_" + suite + ".csv", table.to_csv());
  write_file(base.out_dir + "/ablate_" + suite + ".txt", table.to_text());
  return table;
}

std::string AblationTable::to_csv() const {
  std::string out = "label,seed,test_miou,test_fscore,run_dir\n";
  for (const auto& row : rows)
    for (size_t i = 0; i < row.seeds.size(); ++i)
      out += row.label + "," + std::to_string(row.seeds[i]) + "," + fmt_double(row.test_miou[i]) +
             "," + fmt_double(row.test_fscore[i]) + "," + row.run_dirs[i] + "\n";
  out += "\nlabel,mean_miou,sd_miou,mean_fscore,sd_fscore\n";
  for (const auto& row : rows)
    out += row.label + "," + fmt_double(row.mean_miou) + "," + fmt_double(row.sd_miou) + "," +
           fmt_double(row.mean_fscore) + "," + fmt_double(row.sd_fscore) + "\n";
  return out;
}

std::string AblationTable::to_text() const {
  char buf[160];
  std::string out = "suite: " + suite + "\n";
  std::snprintf(buf, sizeof buf, "%-24s %14s %14s\n", "config", "mIoU", "F-score");
  out += buf;
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %6.4f±%6.4f %6.4f±%6.4f\n", row.label.c_str(),
                  row.mean_miou, row.sd_miou, row.mean_fscore, row.sd_fscore);
    out += buf;
  }
  return out;
}

}  // namespace ecmvae
