#pragma once

// Run configuration of the hspk tool: nested JSON sections over the library
// configs, with per-key overrides and a resolved echo.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hspk/datakit.hpp"
#include "hspk/trainer.hpp"

namespace hspk {

struct DataSection {
  std::size_t label_extent = 32;
  std::size_t speckle_extent = 64;
  double percentile = 99.9;
  std::size_t configs = 3;
  std::string labels = "synthetic";  // "synthetic", "npy:<path>" or "npy:<path>:<key>"
  std::size_t label_count = 5883;    // npy: 0 takes every image
  SplitRatios ratios;
  std::size_t memory_budget = kDefaultTmBudget;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DataSection data;
  TrainConfig train;                  // also carries the model, hcu and loss sections
  std::vector<std::string> datasets;  // HSPK1 files used by `train`

  void validate() const;
};

/// Sections: seed, data, train (with adam), model, hcu, loss, datasets.
/// Unknown keys and mistyped values raise ConfigError naming the key.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

// Missing or unparsable files raise ConfigError with the filename.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Applies "section.key=value" onto a config document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// File (optional) + overrides on top of the defaults.
RunConfig resolve_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

// Writes `<out_dir>/config.resolved`.
void write_resolved(const RunConfig& config, const std::filesystem::path& out_dir);

LabelSource label_source(const DataSection& data, std::uint64_t seed);
BuildOptions build_options(const RunConfig& config, std::size_t threads);

}  // namespace hspk
