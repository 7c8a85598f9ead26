// ecmvae command line harness: data generation, training, evaluation,
// ablation sweeps and latent export over the synthetic two-modality corpus.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ecmvae/trainer.hpp"

using namespace ecmvae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

struct TrainFlags {
  std::string config_path, data, mode, divergence, out;
  int factorized = -1, epochs = 0, batch_size = 0, latent_dim = 0, threads = 0;
  int vae = -1, use_audio = -1;
  double lambda1 = -1, lambda2 = -1, lambda3 = -1, beta = -1, alpha1 = -1, alpha2 = -1, lr = 0;
  uint64_t seed = 0;
  bool seed_set = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override its values");
  cmd->add_option("--data", f.data, "corpus base path (from gen-data)");
  cmd->add_option("--mode", f.mode, "s4|ms3 supervision mode");
  cmd->add_option("--divergence", f.divergence, "KL|PoE|MoE|JS shared-code regularizer");
  cmd->add_option("--factorized", f.factorized, "1: shared+specific codes, 0: single code");
  cmd->add_option("--vae", f.vae, "0 switches to the deterministic AE variant");
  cmd->add_option("--use-audio", f.use_audio, "0 drops the audio branch entirely");
  cmd->add_option("--latent-dim", f.latent_dim, "latent dimension L");
  cmd->add_option("--lambda1", f.lambda1, "difference-loss weight");
  cmd->add_option("--lambda2", f.lambda2, "shared-information loss weight");
  cmd->add_option("--lambda3", f.lambda3, "audio-visual mapping hook weight");
  cmd->add_option("--beta", f.beta, "divergence weight");
  cmd->add_option("--alpha1", f.alpha1, "ELBO/GSNN mix");
  cmd->add_option("--alpha2", f.alpha2, "posterior/prior MI mix");
  cmd->add_option("--epochs", f.epochs, "training epochs (default 15 s4 / 30 ms3)");
  cmd->add_option("--batch-size", f.batch_size, "clips per optimizer step");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--threads", f.threads, "worker threads");
  cmd->add_option("--seed", f.seed, "run seed")->each([&f](const std::string&) { f.seed_set = true; });
  cmd->add_option("--out", f.out, "output directory");
}

TrainConfig build_config(const TrainFlags& f) {
  TrainConfig cfg;
  if (!f.config_path.empty()) cfg = TrainConfig::from_json(slurp(f.config_path));
  if (!f.data.empty()) cfg.data = f.data;
  if (!f.mode.empty()) cfg.mode = f.mode;
  if (!f.divergence.empty()) cfg.model.divergence = divergence_from_string(f.divergence);
  if (f.factorized >= 0) cfg.model.factorized = f.factorized != 0;
  if (f.vae >= 0) cfg.model.vae = f.vae != 0;
  if (f.use_audio >= 0) cfg.model.use_audio = f.use_audio != 0;
  if (f.latent_dim > 0) cfg.model.latent_dim = f.latent_dim;
  if (f.lambda1 >= 0) cfg.weights.lambda1 = f.lambda1;
  if (f.lambda2 >= 0) cfg.weights.lambda2 = f.lambda2;
  if (f.lambda3 >= 0) cfg.weights.lambda3 = f.lambda3;
  if (f.beta >= 0) cfg.weights.beta = f.beta;
  if (f.alpha1 >= 0) cfg.weights.alpha1 = f.alpha1;
  if (f.alpha2 >= 0) cfg.weights.alpha2 = f.alpha2;
  if (f.epochs != 0) cfg.epochs = f.epochs;
  if (f.batch_size > 0) cfg.batch_size = f.batch_size;
  if (f.lr > 0) cfg.lr = f.lr;
  if (f.threads > 0) cfg.threads = f.threads;
  if (f.seed_set) cfg.seed = f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  return cfg;
}

int cmd_gen_data(int n_clips, int n_classes, bool multi_source, uint64_t seed, double train_frac,
                 double val_frac, double test_frac, const std::string& out) {
  DatasetSpec spec;
  spec.n_clips = n_clips;
  spec.n_classes = n_classes;
  spec.multi_source = multi_source;
  spec.seed = seed;
  spec.train_frac = train_frac;
  spec.val_frac = val_frac;
  spec.test_frac = test_frac;
  spec.validate();
  Corpus corpus = generate(spec);
  std::filesystem::path p(out);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  save_corpus(corpus, out);

  std::vector<int> histogram(size_t(spec.n_classes), 0);
  for (const auto& c : corpus.clips) histogram[size_t(c.source_class)]++;
  std::printf("wrote %d clips to %s.{json,bin}\n", spec.n_clips, out.c_str());
  std::printf("splits: train=%zu val=%zu test=%zu\n", corpus.train_idx.size(),
              corpus.val_idx.size(), corpus.test_idx.size());
  std::printf("class histogram:");
  for (int c = 0; c < spec.n_classes; ++c) std::printf(" %d:%d", c, histogram[size_t(c)]);
  std::printf("\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECMVAE synthetic audio-visual segmentation harness"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  int n_clips = 800, n_classes = 4;
  bool multi_source = false;
  uint64_t gen_seed = 1;
  double train_frac = 0.75, val_frac = 0.125, test_frac = 0.125;
  std::string gen_out = "corpus";
  gen->add_option("--n-clips", n_clips, "number of clips");
  gen->add_option("--classes", n_classes, "number of source classes");
  gen->add_flag("--multi-source", multi_source, "two sources with per-frame switching");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--train-frac", train_frac, "train fraction");
  gen->add_option("--val-frac", val_frac, "val fraction");
  gen->add_option("--test-frac", test_frac, "test fraction");
  gen->add_option("--out", gen_out, "output base path");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  TrainFlags tf;
  add_train_flags(tr, tf);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  int ev_threads = 2;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint base path")->required();
  ev->add_option("--data", ev_data, "corpus base path")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--threads", ev_threads, "worker threads");
  ev->add_option("--out", ev_out, "write the EvalResult JSON here");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation suite");
  TrainFlags af;
  std::string suite;
  std::vector<uint64_t> ab_seeds = {1, 2, 3};
  ab->add_option("--suite", suite, "divergence|factorization|losses")->required();
  ab->add_option("--seeds", ab_seeds, "seeds (>= 3)");
  add_train_flags(ab, af);

  // export-latents
  auto* ex = app.add_subcommand("export-latents", "dump factorized codes as CSV");
  std::string ex_ckpt, ex_data, ex_split = "test", ex_out = "latents.csv";
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint base path")->required();
  ex->add_option("--data", ex_data, "corpus base path")->required();
  ex->add_option("--split", ex_split, "train|val|test");
  ex->add_option("--out", ex_out, "CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(n_clips, n_classes, multi_source, gen_seed, train_frac, val_frac,
                          test_frac, gen_out);
    if (tr->parsed()) {
      TrainConfig cfg = build_config(tf);
      RunRecord rec = train(cfg);
      if (rec.aborted_non_finite) {
        std::fprintf(stderr, "aborted on non-finite loss; last-good checkpoint at %s\n",
                     rec.checkpoint_base.c_str());
        return kExitNumerical;
      }
      std::printf("trained %d steps in %.1fs; test mIoU %.4f F %.4f\n", rec.steps,
                  rec.wall_seconds, rec.final_test.miou, rec.final_test.fscore);
      std::printf("outputs in %s\n", rec.out_dir.c_str());
      return kExitOk;
    }
    if (ev->parsed()) {
      Corpus corpus = load_corpus(ev_data);
      Model model = load_model(ev_ckpt);
      EvalResult r = evaluate_model(model, corpus, corpus.split(ev_split), ev_threads);
      std::printf("%s mIoU %.4f F-score %.4f over %lld frames\n", ev_split.c_str(), r.miou,
                  r.fscore, (long long)r.n_frames);
      if (!ev_out.empty()) {
        std::ofstream f(ev_out);
        f << r.to_json() << "\n";
      }
      return kExitOk;
    }
    if (ab->parsed()) {
      TrainConfig base = build_config(af);
      if (base.data.empty()) throw ConfigError("ablate needs --data");
      if (base.out_dir.empty()) throw ConfigError("ablate needs --out");
      Corpus corpus = load_corpus(base.data);
      AblationTable table = run_ablation(suite, base, ab_seeds, corpus);
      std::printf("%s", table.to_text().c_str());
      std::printf("table written to %s/ablate_%s.{csv,txt}\n", base.out_dir.c_str(),
                  suite.c_str());
      return kExitOk;
    }
    if (ex->parsed()) {
      Corpus corpus = load_corpus(ex_data);
      Model model = load_model(ex_ckpt);
      export_latents(model, corpus, corpus.split(ex_split), ex_out);
      std::printf("latents written to %s\n", ex_out.c_str());
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kExitNumerical;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitOk;
}
