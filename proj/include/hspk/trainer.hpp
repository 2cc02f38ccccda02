#pragma once

// Adversarial training loop, evaluation and histogram-alignment reporting.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hspk/checkpoint.hpp"
#include "hspk/datakit.hpp"
#include "hspk/hcu.hpp"
#include "hspk/losses.hpp"
#include "hspk/networks.hpp"
#include "hspk/optim.hpp"

namespace hspk {

enum class Variant : std::uint8_t { histospeckle = 0, unet_baseline = 1, pix2pix_baseline = 2 };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

enum class Preset : std::uint8_t { full = 0, reduced30 = 1, perturbed = 2 };
const char* preset_name(Preset p);
Preset parse_preset(const std::string& name);

struct TrainConfig {
  Variant variant = Variant::histospeckle;
  Preset preset = Preset::full;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  AdamHyper adam;
  LossWeights weights;
  double pix2pix_l1_weight = 100.0;
  bool freeze_discriminator = false;

  std::size_t max_steps = 0;     // 0: no cap
  std::size_t eval_every = 0;    // steps between evaluations; 0: end of each epoch
  std::size_t log_every = 1;
  std::size_t val_records = 64;  // validation subset per evaluation; 0: all
  double reduced_fraction = 0.3;
  std::size_t perturbed_per_config = 1200;
  bool test_eval = true;  // evaluate every dataset's test split after training

  std::size_t hist_bins = 256;
  double hist_sigma = 0.01;

  // Channel schedules; trimmed to the data extent (see *_config_for).
  std::vector<std::size_t> encoder_channels{32, 64, 128, 256, 256, 256};
  std::vector<std::size_t> decoder_channels{256, 256, 256, 128, 64, 32};
  std::vector<std::size_t> tfrm_hidden{32, 32, 32};
  std::vector<std::size_t> tfrm_width{1, 1, 1};
  std::vector<std::size_t> discriminator_channels{32, 64, 128};

  void validate() const;
  bool uses_discriminator() const { return variant != Variant::unet_baseline; }
};

GeneratorConfig generator_config_for(const TrainConfig& config, std::size_t extent);
DiscriminatorConfig discriminator_config_for(const TrainConfig& config, std::size_t extent);

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::optional<double> l_dis, l_adv, l_mi, l_ssim, l_gen, val_ssim, hist_emd;
  bool operator==(const MetricsRow&) const = default;
};

// Column order of the metrics CSV.
std::vector<std::string> metrics_header();
std::vector<std::string> metrics_cells(const MetricsRow& row);
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

struct Batch {
  Tensor<float> x;  // speckle [B, 1, H, W]
  Tensor<float> y;  // label   [B, 1, H, W]
  std::vector<const DatasetRecord*> records;
};
Batch make_batch(const std::vector<const DatasetRecord*>& records);

/// Generator, discriminator and their optimizer state.
class Trainer {
 public:
  Trainer(TrainConfig config, std::size_t extent);

  const TrainConfig& config() const { return config_; }
  Generator<float>& generator() { return g_; }
  Discriminator<float>& discriminator() { return d_; }
  std::size_t step_count() const { return step_; }

  /// Discriminator update on detached generator output, then generator update.
  /// Non-finite losses throw NumericError after writing a dump into `dump_dir`
  /// (when non-empty).
  MetricsRow step(const Batch& batch, std::size_t epoch, const std::filesystem::path& dump_dir = {});

  // Set by step(): any generator parameter held a gradient after the
  // discriminator update.
  bool generator_touched_by_d_step() const { return touched_; }

  Checkpoint checkpoint();
  void restore(const Checkpoint& ckpt);

 private:
  void step_body(MetricsRow& row, const Batch& batch, const std::filesystem::path& dump_dir);

  TrainConfig config_;
  std::size_t extent_;
  Generator<float> g_;
  Discriminator<float> d_;
  std::vector<Tensor<float>> g_params_, d_params_;
  AdamState<float> g_opt_, d_opt_;
  KernelBank bank_;
  std::size_t step_ = 0;
  bool touched_ = false;
};

/// Rebuilds a generator (architecture, weights, batch-norm statistics) from a
/// checkpoint written by Trainer::checkpoint().
Generator<float> load_generator(const Checkpoint& ckpt);

// Maps a batch of records to reconstructions at label extent.
using Reconstructor = std::function<std::vector<Image>(const std::vector<const DatasetRecord*>&)>;

// Eval-mode generator inference (G3).
Reconstructor generator_reconstructor(Generator<float>& g);
// Test double: returns the ground truth.
Reconstructor identity_reconstructor();

struct EvalResult {
  double mean_ssim = 0.0;
  std::vector<double> ssim;  // per record
};

/// SSIM of every record; writes `<tag>_ssim.csv` and the first 16
/// (speckle | truth | reconstruction) triptychs as `<tag>_recon_NN.pgm` when
/// `out_dir` is non-empty.
EvalResult evaluate(const Reconstructor& reconstruct, const std::vector<const DatasetRecord*>& records,
                    const std::filesystem::path& out_dir, const std::string& tag, std::size_t batch_size = 16);

// 1-D earth mover's distance between histograms on a uniform grid.
double emd_1d(std::span<const double> p, std::span<const double> q, double bin_width);

struct HistogramReport {
  std::vector<double> centers, truth, initial, final_;
  std::vector<double> hard_truth, hard_initial, hard_final;  // nearest-centre counts, same bins
  double emd_initial = 0.0;
  double emd_final = 0.0;
};

// Mean smooth histogram of the given images.
std::vector<double> mean_histogram(const std::vector<Image>& images, const KernelBank& bank);

std::vector<double> mean_hard_histogram(const std::vector<Image>& images, std::size_t bins);

HistogramReport histogram_report(const Reconstructor& initial, const Reconstructor& final_,
                                 const std::vector<const DatasetRecord*>& records, const KernelBank& bank);
// Writes histogram.csv and emd.csv into `out_dir`.
void write_histogram_csv(const HistogramReport& report, const std::filesystem::path& out_dir);

struct FitResult {
  std::vector<MetricsRow> rows;
  std::size_t train_records = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path initial_checkpoint;
  std::vector<std::pair<int, double>> test_ssim;  // (config_id, mean SSIM)
};

using LogFn = std::function<void(const std::string&)>;

/// Trains on `datasets` (one per fiber configuration; only the first is used
/// by the full and reduced30 presets) and writes metrics.csv and checkpoints
/// under `out_dir`.
FitResult fit(const TrainConfig& config, const std::vector<Dataset>& datasets, const std::filesystem::path& out_dir,
              const LogFn& log = {});

// Training records selected by the preset.
std::vector<const DatasetRecord*> preset_records(const TrainConfig& config, const std::vector<Dataset>& datasets,
                                                 std::vector<DatasetRecord>& storage);

}  // namespace hspk
