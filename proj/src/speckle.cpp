#include "hspk/speckle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "hspk/rng.hpp"

namespace hspk {

void SpeckleConfig::validate() const {
  if (label_extent == 0 || speckle_extent == 0) throw ConfigError("speckle: extents must be positive");
  if (!(percentile > 50.0 && percentile <= 100.0)) {
    throw ConfigError("speckle: percentile must lie in (50, 100], got " + std::to_string(percentile));
  }
}

std::uint64_t config_seed(std::uint64_t base_seed, int config_id) {
  return derive_seed(base_seed, 0x7e5000ULL + static_cast<std::uint64_t>(config_id));
}

TransmissionMatrix build_tm(std::uint64_t seed, std::size_t m, std::size_t n, int config_id,
                            std::size_t memory_budget) {
  if (m == 0 || n == 0) throw ContractError("build_tm: M and N must be at least 1");
  if (m > memory_budget / n) {
    throw CapacityError("build_tm: " + std::to_string(m) + "x" + std::to_string(n) +
                        " matrix exceeds the budget of " + std::to_string(memory_budget) + " entries");
  }
  TransmissionMatrix tm;
  tm.rows = m;
  tm.cols = n;
  tm.seed = seed;
  tm.config_id = config_id;
  tm.re.resize(m * n);
  tm.im.resize(m * n);
  // Each component has variance 1/(2N) so that E|T_mn|^2 = 1/N.
  const double scale = std::sqrt(0.5 / static_cast<double>(n));
  Rng rng(seed);
  for (std::size_t i = 0; i < m * n; ++i) {
    tm.re[i] = scale * rng.normal();
    tm.im[i] = scale * rng.normal();
  }
  return tm;
}

std::vector<double> propagate(std::span<const float> label, const TransmissionMatrix& tm) {
  if (label.size() != tm.cols) {
    throw DimensionError("propagate: label has " + std::to_string(label.size()) + " pixels, matrix expects " +
                         std::to_string(tm.cols));
  }
  const std::size_t n = tm.cols;
  std::vector<double> ur(n), ui(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double phase = std::numbers::pi * static_cast<double>(label[k]);
    ur[k] = std::cos(phase);
    ui[k] = std::sin(phase);
  }
  std::vector<double> out(tm.rows);
  for (std::size_t r = 0; r < tm.rows; ++r) {
    const double* tr = tm.re.data() + r * n;
    const double* ti = tm.im.data() + r * n;
    double fr = 0.0, fi = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      fr += tr[k] * ur[k] - ti[k] * ui[k];
      fi += tr[k] * ui[k] + ti[k] * ur[k];
    }
    out[r] = fr * fr + fi * fi;
  }
  return out;
}

std::vector<double> propagate(const Image& label, const TransmissionMatrix& tm) {
  return propagate(std::span<const float>(label.pixels), tm);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * t;
}

Image normalize_speckle(std::span<const double> raw, const SpeckleConfig& config) {
  const std::size_t side = config.speckle_extent;
  if (raw.size() != side * side) {
    throw DimensionError("normalize_speckle: " + std::to_string(raw.size()) + " intensities do not fill a " +
                         std::to_string(side) + "x" + std::to_string(side) + " frame");
  }
  for (double v : raw) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("normalize_speckle: negative or non-finite intensity");
  }
  const double scale = percentile(std::vector<double>(raw.begin(), raw.end()), config.percentile);
  if (!(scale > 0.0)) throw ContractError("normalize_speckle: degenerate (all-zero) speckle frame");
  Image out(side, side);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.pixels[i] = static_cast<float>(std::min(raw[i] / scale, 1.0));
  }
  return out;
}

Image simulate_speckle(const Image& label, const TransmissionMatrix& tm, const SpeckleConfig& config) {
  const auto raw = propagate(label, tm);
  return resample_to(normalize_speckle(raw, config), label.height, label.width);
}

SpeckleStats stats_check(std::span<const double> intensities) {
  if (intensities.size() < kMinStatsSamples) {
    throw ContractError("stats_check: need at least " + std::to_string(kMinStatsSamples) + " samples, got " +
                        std::to_string(intensities.size()));
  }
  SpeckleStats s;
  s.samples = intensities.size();
  const double n = static_cast<double>(s.samples);
  double total = 0.0;
  for (double v : intensities) total += v;
  s.mean = total / n;
  double ss = 0.0;
  for (double v : intensities) ss += (v - s.mean) * (v - s.mean);
  s.variance = ss / n;
  s.contrast = s.mean > 0.0 ? std::sqrt(s.variance) / s.mean : 0.0;

  std::vector<double> x(intensities.begin(), intensities.end());
  std::sort(x.begin(), x.end());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double scaled = s.mean > 0.0 ? x[i] / s.mean : 0.0;
    const double cdf = 1.0 - std::exp(-scaled);
    d = std::max({d, static_cast<double>(i + 1) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  // A point mass (all samples equal) is maximally far from any continuous law.
  if (x.front() == x.back()) d = 1.0;
  s.ks_distance_exponential = d;
  return s;
}

std::string format_stats_report(const SpeckleStats& stats, const SpeckleConfig& config) {
  std::ostringstream os;
  os.precision(6);
  os << "samples: " << stats.samples << '\n'
     << "modes (M): " << config.m() << ", input pixels (N): " << config.n() << '\n'
     << "mean: " << stats.mean << '\n'
     << "variance: " << stats.variance << '\n'
     << "contrast (std/mean): " << stats.contrast << '\n'
     << "ks_distance_exponential: " << stats.ks_distance_exponential << '\n'
     << "note: single-polarization intensities of fully developed speckle follow Exp(1) after mean scaling; "
        "with bounded total power the normalized intensity follows a beta law that tends to this "
        "exponential limit as the mode count grows.\n";
  return os.str();
}

}  // namespace hspk
