#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "hspk/error.hpp"
#include "hspk/rng.hpp"
#include "hspk/speckle.hpp"
#include "test_util.hpp"

using namespace hspk;

namespace {

using cd = std::complex<double>;

TransmissionMatrix from_entries(std::size_t m, std::size_t n, const std::vector<cd>& e) {
  TransmissionMatrix tm;
  tm.rows = m;
  tm.cols = n;
  for (const auto& z : e) {
    tm.re.push_back(z.real());
    tm.im.push_back(z.imag());
  }
  return tm;
}

// Random unitary by Gram-Schmidt on Gaussian columns.
std::vector<cd> random_unitary(std::size_t n, Rng& rng) {
  std::vector<std::vector<cd>> cols(n, std::vector<cd>(n));
  for (std::size_t c = 0; c < n; ++c) {
    for (auto& z : cols[c]) z = {rng.normal(), rng.normal()};
    for (std::size_t p = 0; p < c; ++p) {
      cd dot = 0;
      for (std::size_t r = 0; r < n; ++r) dot += std::conj(cols[p][r]) * cols[c][r];
      for (std::size_t r = 0; r < n; ++r) cols[c][r] -= dot * cols[p][r];
    }
    double norm = 0;
    for (const auto& z : cols[c]) norm += std::norm(z);
    for (auto& z : cols[c]) z /= std::sqrt(norm);
  }
  std::vector<cd> out(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = cols[c][r];
  return out;
}

Image random_label(Rng& rng, std::size_t side) { return hspk::testing::random_image(rng, side, side); }

std::vector<double> exp_samples(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = -std::log1p(-rng.uniform());
  return v;
}

double pearson(std::span<const float> a, std::span<const float> b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(BuildTm, Deterministic) {
  auto a = build_tm(7, 4, 4, 0);
  auto b = build_tm(7, 4, 4, 0);
  EXPECT_EQ(a.re, b.re);
  EXPECT_EQ(a.im, b.im);
  EXPECT_NE(build_tm(8, 4, 4, 0).re, a.re);
}

TEST(BuildTm, EntryVarianceIsOneOverN) {
  auto tm = build_tm(config_seed(1, 0), 4096, 1024, 0);
  long double s = 0, sr = 0, si = 0;
  for (std::size_t i = 0; i < tm.re.size(); ++i) {
    s += tm.re[i] * tm.re[i] + tm.im[i] * tm.im[i];
    sr += tm.re[i];
    si += tm.im[i];
  }
  const double n = static_cast<double>(tm.re.size());
  const double var = static_cast<double>(s) / n;
  EXPECT_NEAR(var * 1024.0, 1.0, 0.05);
  EXPECT_LT(std::abs(static_cast<double>(sr) / n), 1e-3);
  EXPECT_LT(std::abs(static_cast<double>(si) / n), 1e-3);
}

TEST(BuildTm, ConfigurationsAreUncorrelated) {
  auto a = build_tm(config_seed(1, 0), 256, 256, 0);
  auto b = build_tm(config_seed(1, 1), 256, 256, 1);
  cd dot = 0;
  double na = 0, nb = 0;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    const cd x{a.re[i], a.im[i]}, y{b.re[i], b.im[i]};
    dot += std::conj(x) * y;
    na += std::norm(x);
    nb += std::norm(y);
  }
  EXPECT_LT(std::abs(dot) / std::sqrt(na * nb), 0.05);
  EXPECT_NE(config_seed(1, 0), config_seed(1, 1));
}

TEST(BuildTm, Errors) {
  EXPECT_THROW(build_tm(1, 0, 4, 0), ContractError);
  EXPECT_THROW(build_tm(1, 4096, 4096, 0, 1000), CapacityError);
}

TEST(Propagate, SingleMode) {
  auto tm = from_entries(1, 1, {cd{1, 0}});
  std::vector<float> label{1.0f};
  auto s = propagate(label, tm);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0], 1.0, 1e-15);
}

TEST(Propagate, UnitaryConservesEnergy) {
  Rng rng(3);
  for (std::size_t n : {4u, 16u, 64u}) {
    auto tm = from_entries(n, n, random_unitary(n, rng));
    std::vector<float> label(n);
    for (auto& v : label) v = static_cast<float>(rng.uniform());
    double total = 0;
    for (double v : propagate(label, tm)) total += v;
    EXPECT_NEAR(total, static_cast<double>(n), 1e-9 * n);
  }
}

TEST(Propagate, NonNegativeAndDimensionChecked) {
  auto tm = build_tm(5, 64, 16, 0);
  Rng rng(4);
  for (double v : propagate(random_label(rng, 4), tm)) EXPECT_GE(v, 0.0);
  EXPECT_THROW(propagate(random_label(rng, 5), tm), DimensionError);
}

TEST(Propagate, ConstantLabelMeanIntensityIsOne) {
  auto tm = build_tm(config_seed(1, 0), 4096, 1024, 0);
  for (float level : {0.0f, 0.5f}) {
    Image label(32, 32);
    for (auto& p : label.pixels) p = level;
    double mean = 0;
    for (double v : propagate(label, tm)) mean += v;
    mean /= 4096.0;
    EXPECT_NEAR(mean, 1.0, 0.05);
  }
}

TEST(Propagate, QuadraticInMatrixScale) {
  auto tm = build_tm(9, 64, 16, 0);
  Rng rng(5);
  auto label = random_label(rng, 4);
  const auto base = propagate(label, tm);
  for (cd c : {cd{2, 0}, cd{0.5, -1.5}}) {
    auto scaled = tm;
    for (std::size_t i = 0; i < tm.re.size(); ++i) {
      const cd z = c * tm.at(i / tm.cols, i % tm.cols);
      scaled.re[i] = z.real();
      scaled.im[i] = z.imag();
    }
    const auto s = propagate(label, scaled);
    for (std::size_t m = 0; m < s.size(); ++m) EXPECT_NEAR(s[m], std::norm(c) * base[m], 1e-12 * (1 + s[m]));
  }
}

TEST(Normalize, UnitScaleFrameUnchanged) {
  SpeckleConfig cfg;
  cfg.speckle_extent = 4;
  cfg.percentile = 100.0;
  std::vector<double> raw{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.25, 0.35, 0.45, 0.55, 1.0};
  auto im = normalize_speckle(raw, cfg);
  ASSERT_EQ(im.height, 4u);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_FLOAT_EQ(im.pixels[i], static_cast<float>(raw[i]));
}

TEST(Normalize, ScaleInvariant) {
  Rng rng(6);
  SpeckleConfig cfg;
  cfg.speckle_extent = 16;
  auto raw = exp_samples(rng, 256);
  auto doubled = raw;
  for (auto& v : doubled) v *= 2.0;
  EXPECT_EQ(normalize_speckle(raw, cfg).pixels, normalize_speckle(doubled, cfg).pixels);
}

TEST(Normalize, ClampedFractionMatchesPercentile) {
  Rng rng(7);
  SpeckleConfig cfg;
  cfg.speckle_extent = 256;
  auto im = normalize_speckle(exp_samples(rng, 256 * 256), cfg);
  std::size_t clamped = 0;
  for (float p : im.pixels) clamped += p >= 1.0f;
  EXPECT_NEAR(static_cast<double>(clamped) / im.pixels.size(), 0.001, 0.0002);
}

TEST(Normalize, Errors) {
  SpeckleConfig cfg;
  cfg.speckle_extent = 2;
  EXPECT_THROW(normalize_speckle(std::vector<double>(4, 0.0), cfg), ContractError);
  EXPECT_THROW(normalize_speckle(std::vector<double>{1, -1, 1, 1}, cfg), ContractError);
  EXPECT_THROW(normalize_speckle(std::vector<double>(5, 1.0), cfg), DimensionError);
  cfg.percentile = 50.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 50), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 100), 4.0);
}

TEST(StatsCheck, ExponentialSamplesPass) {
  // The 1% KS critical value at n = 10000 is about 0.0163.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto s = stats_check(exp_samples(rng, 10000));
    EXPECT_LT(s.ks_distance_exponential, 0.02);
    EXPECT_NEAR(s.contrast, 1.0, 0.05);
  }
}

TEST(StatsCheck, ConstantSamplesAreDegenerate) {
  auto s = stats_check(std::vector<double>(10000, 3.0));
  EXPECT_NEAR(s.ks_distance_exponential, 1.0, 1e-12);
  EXPECT_EQ(s.variance, 0.0);
}

TEST(StatsCheck, TooFewSamples) { EXPECT_THROW(stats_check(std::vector<double>(9999, 1.0)), ContractError); }

TEST(StatsCheck, PropagatedSpeckleIsFullyDeveloped) {
  // One fixed label through three configurations pools 12288 intensities.
  Rng rng(8);
  auto label = random_label(rng, 32);
  std::vector<double> pooled;
  for (int cf = 0; cf < 3; ++cf) {
    auto s = propagate(label, build_tm(config_seed(1, cf), 4096, 1024, cf));
    pooled.insert(pooled.end(), s.begin(), s.end());
  }
  auto stats = stats_check(pooled);
  EXPECT_LT(stats.ks_distance_exponential, 0.03);
  EXPECT_NE(format_stats_report(stats, SpeckleConfig{}).find("beta"), std::string::npos);
}

TEST(Simulate, DeterministicAndConfigDecorrelated) {
  SpeckleConfig cfg;
  auto t0 = build_tm(config_seed(1, 0), cfg.m(), cfg.n(), 0);
  auto t1 = build_tm(config_seed(1, 1), cfg.m(), cfg.n(), 1);
  Rng rng(9);
  double mean_corr = 0;
  for (int i = 0; i < 100; ++i) {
    auto label = random_label(rng, 32);
    auto a = simulate_speckle(label, t0, cfg);
    if (i == 0) {
      EXPECT_EQ(a.pixels, simulate_speckle(label, t0, cfg).pixels);
    }
    auto b = simulate_speckle(label, t1, cfg);
    ASSERT_EQ(a.height, 32u);
    mean_corr += pearson(a.pixels, b.pixels);
  }
  EXPECT_LT(std::abs(mean_corr / 100.0), 0.1);
}
