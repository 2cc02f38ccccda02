// hspk: dataset generation, training, evaluation, histogram reports and
// simulator diagnostics.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hspk/config.hpp"
#include "hspk/datakit.hpp"
#include "hspk/error.hpp"
#include "hspk/io.hpp"
#include "hspk/speckle.hpp"
#include "hspk/trainer.hpp"

namespace fs = std::filesystem;
using namespace hspk;

namespace {

std::size_t env_threads() {
  const char* v = std::getenv("HSPK_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0' || n == 0) throw ConfigError(std::string("HSPK_THREADS must be a positive integer, got '") + v + "'");
  return n;
}

// Shared by every subcommand: config file plus key=value overrides.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> set;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON run configuration");
    cmd->add_option("--set", set, "Override a config key, e.g. train.epochs=2");
  }
  RunConfig resolve() const { return resolve_run_config(file, set); }
};

std::vector<Dataset> load_all(const std::vector<std::string>& paths) {
  std::vector<Dataset> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw ConfigError("dataset not found: " + p);
    out.push_back(load_dataset(p));
  }
  return out;
}

Dataset load_one(const std::string& path) { return std::move(load_all({path}).front()); }

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

Reconstructor checkpoint_reconstructor(const std::string& path, std::shared_ptr<Generator<float>>& keep) {
  require_file(path, "checkpoint");
  keep = std::make_shared<Generator<float>>(load_generator(load_checkpoint(path)));
  return generator_reconstructor(*keep);
}

int gen_data(const ConfigFlags& flags, const std::string& out, const std::vector<std::string>& extra) {
  auto cfg = resolve_run_config(flags.file, [&] {
    auto all = flags.set;
    all.insert(all.end(), extra.begin(), extra.end());
    return all;
  }());
  const auto src = label_source(cfg.data, cfg.seed);
  const auto labels = load_labels(src, cfg.data.label_extent);
  if (labels.empty()) throw FormatError("no labels loaded from " + cfg.data.labels);
  std::cout << "labels: " << labels.size() << " (" << cfg.data.labels << ")\n";
  std::vector<int> ids;
  for (std::size_t i = 0; i < cfg.data.configs; ++i) ids.push_back(static_cast<int>(i));
  LabelSource stored = src;
  stored.count = src.kind == "npy" ? labels.size() : src.count;
  const auto sets = build_dataset(labels, stored, ids, build_options(cfg, env_threads()));
  fs::create_directories(out);
  for (const auto& d : sets) {
    const auto path = fs::path(out) / ("cf" + std::to_string(d.header.config_id) + ".hspk");
    save_dataset(d, path);
    cfg.datasets.push_back(path.string());
    std::cout << path.string() << ": train " << d.header.counts[0] << ", val " << d.header.counts[1] << ", test "
              << d.header.counts[2] << "\n";
  }
  write_resolved(cfg, out);
  return 0;
}

int train(const ConfigFlags& flags, const std::string& out, const std::vector<std::string>& datasets,
          const std::vector<std::string>& extra) {
  auto overrides = flags.set;
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  auto cfg = resolve_run_config(flags.file, overrides);
  if (!datasets.empty()) cfg.datasets = datasets;
  if (cfg.datasets.empty()) throw ConfigError("train: no datasets given (--dataset or 'datasets' in the config)");
  const auto sets = load_all(cfg.datasets);
  write_resolved(cfg, out);
  const auto result = fit(cfg.train, sets, out, [](const std::string& line) { std::cout << line << std::endl; });
  if (!result.final_checkpoint.empty()) std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n";
  for (const auto& [id, ssim] : result.test_ssim) {
    std::printf("test SSIM cf%d: %.6f\n", id, ssim);
  }
  return 0;
}

int eval(const std::string& checkpoint, bool identity, const std::string& dataset, const std::string& split,
         const std::string& out, std::string tag) {
  const auto data = load_one(dataset);
  const auto records = data.split(parse_split(split));
  if (records.empty()) throw ContractError("eval: split '" + split + "' of " + dataset + " is empty");
  std::shared_ptr<Generator<float>> g;
  Reconstructor recon;
  if (identity) {
    recon = identity_reconstructor();
  } else {
    if (checkpoint.empty()) throw ConfigError("eval: --checkpoint or --identity-stub is required");
    recon = checkpoint_reconstructor(checkpoint, g);
  }
  if (tag.empty()) tag = split + "_cf" + std::to_string(data.header.config_id);
  const auto r = evaluate(recon, records, out, tag);
  std::printf("records: %zu\nmean SSIM: %.6f\n", records.size(), r.mean_ssim);
  return 0;
}

int hist(const ConfigFlags& flags, const std::string& initial, const std::string& final_ckpt,
         const std::string& dataset, const std::string& split, const std::string& out) {
  const auto cfg = flags.resolve();
  const auto data = load_one(dataset);
  const auto records = data.split(parse_split(split));
  if (records.empty()) throw ContractError("hist: split '" + split + "' of " + dataset + " is empty");
  std::shared_ptr<Generator<float>> gi, gf;
  const auto ri = checkpoint_reconstructor(initial, gi);
  const auto rf = checkpoint_reconstructor(final_ckpt, gf);
  const KernelBank bank(cfg.train.hist_bins, cfg.train.hist_sigma);
  const auto report = histogram_report(ri, rf, records, bank);
  write_histogram_csv(report, out);
  std::printf("records: %zu\nEMD initial: %.9g\nEMD final: %.9g\n", records.size(), report.emd_initial,
              report.emd_final);
  return 0;
}

int simulate(const ConfigFlags& flags, bool stats, std::size_t labels, const std::string& out) {
  const auto cfg = flags.resolve();
  SpeckleConfig sc;
  sc.label_extent = cfg.data.label_extent;
  sc.speckle_extent = cfg.data.speckle_extent;
  sc.percentile = cfg.data.percentile;
  sc.memory_budget = cfg.data.memory_budget;
  sc.validate();
  const auto images = gen_synthetic_labels(labels, sc.label_extent, cfg.seed);
  std::vector<double> pooled;
  for (std::size_t c = 0; c < cfg.data.configs; ++c) {
    const int id = static_cast<int>(c);
    const auto tm = build_tm(config_seed(cfg.seed, id), sc.m(), sc.n(), id, sc.memory_budget);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto raw = propagate(images[i], tm);
      pooled.insert(pooled.end(), raw.begin(), raw.end());
      if (!out.empty() && i == 0) {
        fs::create_directories(out);
        const auto frame = normalize_speckle(raw, sc);
        write_pgm(frame, fs::path(out) / ("speckle_cf" + std::to_string(id) + ".pgm"));
        if (c == 0) write_pgm(images[i], fs::path(out) / "label.pgm");
      }
    }
  }
  std::cout << "configurations: " << cfg.data.configs << ", labels per configuration: " << labels << "\n";
  if (stats) {
    const auto s = stats_check(pooled);
    const auto report = format_stats_report(s, sc);
    std::cout << report;
    if (!out.empty()) {
      fs::create_directories(out);
      write_text_file(fs::path(out) / "speckle_stats.txt", report);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HistoSpeckle-Net: speckle-to-image reconstruction with histogram-aware losses"};
  app.require_subcommand(1);

  ConfigFlags gflags, tflags, hflags, sflags;
  std::string out, checkpoint, dataset, split = "test", tag, initial, final_ckpt, labels_src, preset, variant;
  std::vector<std::string> datasets;
  std::size_t configs = 0, count = 0, epochs = 0, max_steps = 0, sim_labels = 1;
  std::uint64_t seed = 0;
  bool identity = false, stats = false;

  auto* gen = app.add_subcommand("gen-data", "Simulate per-configuration speckle datasets");
  gflags.add(gen);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--configs", configs, "Number of fiber configurations");
  gen->add_option("--labels", labels_src, "synthetic | npy:<path>[:<key>]");
  gen->add_option("--count", count, "Number of labels");
  gen->add_option("--seed", seed, "Base seed");

  auto* tr = app.add_subcommand("train", "Train a model");
  tflags.add(tr);
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--preset", preset, "full | reduced30 | perturbed");
  tr->add_option("--variant", variant, "histospeckle | unet_baseline | pix2pix_baseline");
  tr->add_option("--dataset", datasets, "HSPK1 dataset file (repeat per configuration)");
  tr->add_option("--seed", seed, "Training seed");
  tr->add_option("--epochs", epochs, "Epochs");
  tr->add_option("--max-steps", max_steps, "Stop after this many steps");

  auto* ev = app.add_subcommand("eval", "SSIM of a checkpoint on a dataset split");
  ev->add_option("--checkpoint", checkpoint, "HSCK1 checkpoint");
  ev->add_flag("--identity-stub", identity, "Score the ground truth against itself");
  ev->add_option("--dataset", dataset, "HSPK1 dataset file")->required();
  ev->add_option("--split", split, "train | val | test");
  ev->add_option("--out", out, "Output directory")->required();
  ev->add_option("--tag", tag, "File name prefix");

  auto* hi = app.add_subcommand("hist", "Histogram alignment of two checkpoints against the truth");
  hflags.add(hi);
  hi->add_option("--initial", initial, "Checkpoint before training")->required();
  hi->add_option("--final", final_ckpt, "Checkpoint after training")->required();
  hi->add_option("--dataset", dataset, "HSPK1 dataset file")->required();
  hi->add_option("--split", split, "train | val | test");
  hi->add_option("--out", out, "Output directory")->required();

  auto* sim = app.add_subcommand("simulate", "Speckle simulator diagnostics");
  sflags.add(sim);
  sim->add_flag("--stats", stats, "Print intensity statistics");
  sim->add_option("--labels", sim_labels, "Labels propagated per configuration")->check(CLI::PositiveNumber);
  sim->add_option("--out", out, "Write example frames and the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      std::vector<std::string> extra;
      if (configs) extra.push_back("data.configs=" + std::to_string(configs));
      if (!labels_src.empty()) extra.push_back("data.labels=" + nlohmann::json(labels_src).dump());
      if (gen->count("--count")) extra.push_back("data.label_count=" + std::to_string(count));
      if (gen->count("--seed")) extra.push_back("seed=" + std::to_string(seed));
      return gen_data(gflags, out, extra);
    }
    if (tr->parsed()) {
      std::vector<std::string> extra;
      if (!preset.empty()) extra.push_back("train.preset=" + nlohmann::json(preset).dump());
      if (!variant.empty()) extra.push_back("train.variant=" + nlohmann::json(variant).dump());
      if (tr->count("--seed")) extra.push_back("seed=" + std::to_string(seed));
      if (tr->count("--epochs")) extra.push_back("train.epochs=" + std::to_string(epochs));
      if (tr->count("--max-steps")) extra.push_back("train.max_steps=" + std::to_string(max_steps));
      return train(tflags, out, datasets, extra);
    }
    if (ev->parsed()) return eval(checkpoint, identity, dataset, split, out, tag);
    if (hi->parsed()) return hist(hflags, initial, final_ckpt, dataset, split, out);
    if (sim->parsed()) return simulate(sflags, stats, sim_labels, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
