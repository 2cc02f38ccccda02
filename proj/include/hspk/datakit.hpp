#pragma once

// Synthetic labels, speckle/label pair datasets (HSPK1) and split bookkeeping.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hspk/image.hpp"
#include "hspk/speckle.hpp"

namespace hspk {

inline constexpr float kLabelBackground = 0.05f;
// Pixels above this level count as foreground.
inline constexpr float kForegroundLevel = 0.2f;

/// Label `index` of a synthetic set: 2-4 soft-edged ellipses/rectangles with
/// graded intensities in [0.3, 1] over a dark background.
Image gen_synthetic_label(std::size_t extent, std::uint64_t seed, std::size_t index);
std::vector<Image> gen_synthetic_labels(std::size_t n, std::size_t extent, std::uint64_t seed);

double foreground_fraction(const Image& image, float level = kForegroundLevel);

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

const char* split_name(Split s);
Split parse_split(const std::string& name);

/// Split proportions. The defaults are 50000 : 2947 : 5883 of 58830.
struct SplitRatios {
  double train = 50000.0 / 58830.0;
  double val = 2947.0 / 58830.0;
  double test = 5883.0 / 58830.0;

  void validate() const;
};

/// Largest-remainder rounding of n * ratios (ties go to the earlier split).
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios);

/// Split of every record index: a seeded permutation whose first counts[0]
/// positions are train, the next counts[1] val and the rest test.
std::vector<Split> assign_splits(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

struct LabelSource {
  std::string kind = "synthetic";  // "synthetic" or "npy"
  std::uint64_t seed = 0;          // synthetic only
  std::string path;                // npy only
  std::string key;                 // npz entry; empty for the first entry
  std::size_t count = 0;
};

/// Loads (or generates) all labels of a source at the given extent. Archive
/// images of another size are resampled.
std::vector<Image> load_labels(const LabelSource& source, std::size_t extent);

struct DatasetHeader {
  std::size_t label_extent = 32;
  std::size_t speckle_extent = 64;  // raw frame before resampling
  double percentile = 99.9;
  std::uint64_t base_seed = 0;
  int config_id = 0;
  std::uint64_t tm_seed = 0;
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
  std::array<std::size_t, 3> counts{};
  LabelSource labels;
  std::string preprocessing;

  SpeckleConfig speckle_config() const;
  std::string to_json() const;
  static DatasetHeader from_json(const std::string& text, const std::string& what);

  bool operator==(const DatasetHeader& other) const { return to_json() == other.to_json(); }
};

struct DatasetRecord {
  std::uint32_t index = 0;
  Split split = Split::train;
  std::uint8_t config_id = 0;
  Image speckle;  // model input x
  Image label;    // ground truth y

  bool operator==(const DatasetRecord&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<DatasetRecord> records;

  std::vector<const DatasetRecord*> split(Split s) const;
  bool operator==(const Dataset&) const = default;
};

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes, const std::string& what = "dataset");
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct BuildOptions {
  std::size_t label_extent = 32;
  std::size_t speckle_extent = 64;
  double percentile = 99.9;
  std::uint64_t base_seed = 1;
  SplitRatios ratios;
  std::size_t threads = 1;
  std::size_t memory_budget = kDefaultTmBudget;
};

/// One dataset per configuration id, all over the same labels. Every record is
/// a pure function of (header, index), so the thread count does not matter.
std::vector<Dataset> build_dataset(const std::vector<Image>& labels, const LabelSource& source,
                                   const std::vector<int>& config_ids, const BuildOptions& options);

// Rebuilds record `index` from the header alone (labels are reloaded).
DatasetRecord regenerate_record(const DatasetHeader& header, std::size_t index);

/// Training set of the perturbation experiment: `per_config_count` training
/// records sampled without replacement from each dataset, concatenated and
/// shuffled.
std::vector<DatasetRecord> compose_perturbed(const std::vector<const Dataset*>& datasets, std::size_t per_config_count,
                                             std::uint64_t seed);

// Seeded sample without replacement; kept records stay in their original order.
std::vector<const DatasetRecord*> sample_records(const std::vector<const DatasetRecord*>& records, std::size_t count,
                                                 std::uint64_t seed);

}  // namespace hspk
