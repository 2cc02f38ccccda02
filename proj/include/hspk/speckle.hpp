#pragma once

// Multimode-fiber surrogate: a random complex transmission matrix per fiber
// configuration maps a phase-encoded label onto output speckle intensities.

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hspk/image.hpp"

namespace hspk {

// Largest M*N a transmission matrix may hold (16 bytes per entry).
inline constexpr std::size_t kDefaultTmBudget = std::size_t{1} << 25;

struct TransmissionMatrix {
  std::size_t rows = 0;  // M output modes / pixels
  std::size_t cols = 0;  // N input pixels
  std::uint64_t seed = 0;
  int config_id = 0;
  // Real and imaginary parts stored separately, row-major.
  std::vector<double> re, im;

  std::complex<double> at(std::size_t m, std::size_t n) const {
    return {re[m * cols + n], im[m * cols + n]};
  }
};

struct SpeckleConfig {
  std::size_t label_extent = 32;    // sqrt(N)
  std::size_t speckle_extent = 64;  // sqrt(M)
  double percentile = 99.9;
  std::size_t memory_budget = kDefaultTmBudget;

  std::size_t n() const { return label_extent * label_extent; }
  std::size_t m() const { return speckle_extent * speckle_extent; }
  void validate() const;
};

/// I.i.d. circular complex Gaussian entries with variance 1/N, fully
/// determined by (seed, M, N). Distinct configurations use distinct seeds.
TransmissionMatrix build_tm(std::uint64_t seed, std::size_t m, std::size_t n, int config_id,
                            std::size_t memory_budget = kDefaultTmBudget);

// Seed of configuration `config_id` derived from a base seed.
std::uint64_t config_seed(std::uint64_t base_seed, int config_id);

/// s_m = |sum_n T_mn exp(i pi label_n)|^2 for the flattened label.
std::vector<double> propagate(const Image& label, const TransmissionMatrix& tm);
std::vector<double> propagate(std::span<const float> label, const TransmissionMatrix& tm);

// Linear-interpolated percentile (q in [0,100]) of the values.
double percentile(std::vector<double> values, double q);

/// Divides by the configured percentile, clamps to [0,1] and reshapes to the
/// square speckle extent.
Image normalize_speckle(std::span<const double> raw, const SpeckleConfig& config);

/// Full pipeline for one label: propagate, normalize, resample to the label
/// extent (the network sees speckle and label at the same extent).
Image simulate_speckle(const Image& label, const TransmissionMatrix& tm, const SpeckleConfig& config);

struct SpeckleStats {
  std::size_t samples = 0;
  double ks_distance_exponential = 0.0;  // vs Exp(1) after dividing by the sample mean
  double mean = 0.0;
  double variance = 0.0;
  double contrast = 0.0;                 // std / mean; 1 for fully developed speckle
};

inline constexpr std::size_t kMinStatsSamples = 10000;

/// Kolmogorov-Smirnov distance of mean-scaled intensities to Exp(1), plus
/// moments. Needs at least kMinStatsSamples values.
SpeckleStats stats_check(std::span<const double> intensities);

// Human-readable report including the bounded-power (beta law) note.
std::string format_stats_report(const SpeckleStats& stats, const SpeckleConfig& config);

}  // namespace hspk
