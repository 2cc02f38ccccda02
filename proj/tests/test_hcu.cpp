#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hspk/grad_check.hpp"
#include "hspk/hcu.hpp"
#include "test_util.hpp"

using namespace hspk;
using hspk::testing::random_tensor;
using hspk::testing::smooth_field;

namespace {

// Normalized weight row of a single value, evaluated directly in long double.
std::vector<double> reference_row(double v, const KernelBank& bank) {
  std::vector<long double> raw(bank.bins());
  long double total = 0;
  for (std::size_t i = 0; i < bank.bins(); ++i) {
    const long double z = (static_cast<long double>(v) - static_cast<long double>(i) / (bank.bins() - 1)) / bank.sigma();
    raw[i] = std::exp(-0.5L * z * z);
    total += raw[i];
  }
  std::vector<double> out(bank.bins());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(raw[i] / total);
  return out;
}

}  // namespace

TEST(KernelBank, CentersSpanUnitInterval) {
  KernelBank bank;
  EXPECT_EQ(bank.bins(), 256u);
  EXPECT_EQ(bank.sigma(), 0.01);
  EXPECT_EQ(bank.center(0), 0.0);
  EXPECT_EQ(bank.center(255), 1.0);
  for (std::size_t i = 1; i < bank.bins(); ++i) EXPECT_LT(bank.center(i - 1), bank.center(i));
  EXPECT_THROW(KernelBank(1, 0.01), ContractError);
  EXPECT_THROW(KernelBank(16, 0.0), ContractError);
}

TEST(KernelWeights, RawWeightExamples) {
  EXPECT_EQ(raw_kernel_weight(0.5, 0.5, 0.01), 1.0);
  const double neighbor = raw_kernel_weight(0.0, 1.0 / 255.0, 0.01);
  const long double z = (1.0L / 255.0L) / 0.01L;
  EXPECT_NEAR(neighbor, static_cast<double>(std::exp(-0.5L * z * z)), 1e-15);
  EXPECT_NEAR(neighbor, 0.9260, 5e-5);
  EXPECT_EQ(raw_kernel_weight(0.0, 1.0, 0.01), 0.0);
}

TEST(KernelWeights, FarTailRowStillNormalizes) {
  KernelBank bank;
  auto w = kernel_weights(Tensor<double>({1}, {0.0}), bank);
  EXPECT_EQ(w.at(255), 0.0);
  EXPECT_NEAR(std::accumulate(w.vec().begin(), w.vec().end(), 0.0), 1.0, 1e-12);
}

TEST(KernelWeights, RowsAreStochastic) {
  KernelBank bank;
  Rng rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    Tensor<double> img;
    if (trial % 3 == 0) img = random_tensor(rng, {8, 8}, 0, 1);
    if (trial % 3 == 1) img = Tensor<double>::full({8, 8}, rng.uniform());
    if (trial % 3 == 2) {
      img = random_tensor(rng, {8, 8}, 0, 1);
      for (auto& v : img.values_mut()) v = v < 0.5 ? 0.0 : 1.0;
    }
    auto w = kernel_weights(img, bank);
    for (std::size_t p = 0; p < 64; ++p) {
      double s = 0;
      for (std::size_t i = 0; i < 256; ++i) {
        const double x = w.at(p * 256 + i);
        ASSERT_GE(x, 0.0);
        ASSERT_LE(x, 1.0);
        s += x;
      }
      ASSERT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(KernelWeights, ClampsOutOfRangeInputs) {
  KernelBank bank(32, 0.05);
  auto a = kernel_weights(Tensor<double>({2}, {-0.3, 1.7}), bank);
  auto b = kernel_weights(Tensor<double>({2}, {0.0, 1.0}), bank);
  EXPECT_EQ(a.vec(), b.vec());
}

TEST(Marginal, SumsToOne) {
  KernelBank bank;
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto img = random_tensor(rng, {16, 16}, 0, 1);
    auto h = marginal(img, bank);
    double sp = 0, sm = 0;
    for (double v : h.probability.vec()) sp += v;
    for (double v : h.mass.vec()) {
      ASSERT_GE(v, 0.0);
      sm += v;
    }
    EXPECT_NEAR(sp, 1.0, 1e-9);
    EXPECT_NEAR(sm, 256.0, 1e-6);
  }
}

TEST(Marginal, ConstantImageIsTheWeightRow) {
  KernelBank bank;
  for (double c : {0.0, 0.123, 0.5, 0.77, 1.0}) {
    auto h = marginal(Tensor<double>::full({4, 4}, c), bank);
    const auto ref = reference_row(c, bank);
    for (std::size_t i = 0; i < 256; ++i) EXPECT_NEAR(h.probability.at(i), ref[i], 1e-12);
  }
}

TEST(Marginal, PixelPermutationIsBitwiseInvariant) {
  KernelBank bank;
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto img = random_tensor(rng, {16, 16}, 0, 1);
    auto perm = img.vec();
    rng.shuffle(perm.begin(), perm.end());
    auto a = marginal(img, bank);
    auto b = marginal(Tensor<double>({16, 16}, perm), bank);
    EXPECT_EQ(a.probability.vec(), b.probability.vec());
    EXPECT_EQ(a.mass.vec(), b.mass.vec());
  }
}

TEST(Joint, MarginalizationAndSymmetry) {
  KernelBank bank;
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor(rng, {16, 16}, 0, 1);
    auto b = random_tensor(rng, {16, 16}, 0, 1);
    auto jab = joint(a, b, bank);
    auto jba = joint(b, a, bank);
    auto pa = marginal(a, bank).probability;
    auto pb = marginal(b, bank).probability;
    double total = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      double row = 0, col = 0;
      for (std::size_t j = 0; j < 256; ++j) {
        row += jab.probability.at(i * 256 + j);
        col += jab.probability.at(j * 256 + i);
        ASSERT_EQ(jab.probability.at(i * 256 + j), jba.probability.at(j * 256 + i));
        ASSERT_GE(jab.probability.at(i * 256 + j), 0.0);
      }
      EXPECT_NEAR(row, pa.at(i), 1e-9);
      EXPECT_NEAR(col, pb.at(i), 1e-9);
      total += row;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Joint, ConstantPairIsOuterProduct) {
  KernelBank bank;
  const double c = 0.4;
  auto j = joint(Tensor<double>::full({4, 4}, c), Tensor<double>::full({4, 4}, c), bank);
  const auto row = reference_row(c, bank);
  for (std::size_t i = 0; i < 256; ++i)
    for (std::size_t k = 0; k < 256; ++k) ASSERT_NEAR(j.probability.at(i * 256 + k), row[i] * row[k], 1e-12);
}

TEST(Joint, RejectsSizeMismatch) {
  KernelBank bank(16, 0.05);
  EXPECT_THROW(joint(Tensor<double>::zeros({3}), Tensor<double>::zeros({4}), bank), DimensionError);
}

TEST(Gradients, SumRuleOnMass) {
  // Every normalized row has unit mass, so sum_i dH(i)/dI(p) = 0.
  KernelBank bank;
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    auto img = random_tensor(rng, {8, 8}, 0.02, 0.98, true);
    sum(marginal(img, bank).mass).backward();
    for (double g : img.grad()) EXPECT_NEAR(g, 0.0, 1e-9);
    // Finite differences agree.
    NoGradGuard ng;
    auto v = img.values_mut();
    const double x0 = v[7];
    v[7] = x0 + 1e-5;
    const double fp = sum(marginal(img, bank).mass).item();
    v[7] = x0 - 1e-5;
    const double fm = sum(marginal(img, bank).mass).item();
    v[7] = x0;
    EXPECT_NEAR((fp - fm) / 2e-5, 0.0, 1e-6);
  }
}

TEST(Gradients, MarginalMatchesFiniteDifferences) {
  KernelBank bank;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(60 + seed);
    auto img = random_tensor(rng, {8, 8}, 0.05, 0.95);
    auto c = random_tensor(rng, {256}, -1, 1);
    auto r = grad_check([&](const auto& in) { return sum(mul(marginal(in[0], bank).probability, c)); }, {img}, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Gradients, JointMatchesFiniteDifferences) {
  KernelBank bank;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(70 + seed);
    auto a = random_tensor(rng, {8, 8}, 0.05, 0.95);
    auto b = random_tensor(rng, {8, 8}, 0.05, 0.95);
    auto c = random_tensor(rng, {256, 256}, -1, 1);
    auto r = grad_check([&](const auto& in) { return sum(mul(joint(in[0], in[1], bank).probability, c)); }, {a, b},
                        1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

// The smooth histogram tracks the hard 256-bin histogram for images whose
// intensity distribution is itself smooth. (A constant image is the obvious
// exception: its hard histogram is a single spike.)
TEST(Smoothness, CloseToHardHistogramForSmoothImages) {
  KernelBank bank;
  Rng rng(6);
  const std::size_t side = 256, chunk = 4096;
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> pixels;
    if (trial == 0) {
      for (std::size_t i = 0; i < side * side; ++i) pixels.push_back((i + 0.5) / (side * side));
    } else {
      pixels = smooth_field(rng, side, side, 2 + trial);
    }
    std::vector<double> mass(256, 0.0);
    for (std::size_t s = 0; s < pixels.size(); s += chunk) {
      std::vector<double> part(pixels.begin() + s, pixels.begin() + s + chunk);
      auto h = marginal(Tensor<double>({chunk}, part), bank);
      for (std::size_t i = 0; i < 256; ++i) mass[i] += h.mass.at(i);
    }
    std::vector<float> fp(pixels.begin(), pixels.end());
    const auto hard = hard_histogram(fp, 256);
    double tv = 0;
    for (std::size_t i = 0; i < 256; ++i) tv += std::abs(mass[i] / pixels.size() - hard[i]);
    EXPECT_LT(0.5 * tv, 0.05) << "trial " << trial;
  }
}

TEST(Smoothness, ConstantImageIsTheCounterexample) {
  KernelBank bank;
  auto h = marginal(Tensor<double>::full({8, 8}, 0.5), bank);
  std::vector<float> fp(64, 0.5f);
  const auto hard = hard_histogram(fp, 256);
  double tv = 0;
  for (std::size_t i = 0; i < 256; ++i) tv += std::abs(h.probability.at(i) - hard[i]);
  EXPECT_GT(0.5 * tv, 0.05);
}

TEST(Gradients, JointMassFullScopeOnDenseInputs) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(80 + seed);
    auto wa = random_tensor(rng, {5, 6}, 0, 1);
    auto wb = random_tensor(rng, {5, 4}, 0, 1);
    auto c = random_tensor(rng, {6, 4}, -1, 1);
    auto r = grad_check([&](const auto& in) { return sum(mul(joint_mass(in[0], in[1]), c)); }, {wa, wb}, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

TEST(KernelWeights, CutoffKeepsANarrowBand) {
  KernelBank bank;
  auto w = kernel_weights(Tensor<double>({1}, {0.5}), bank);
  std::size_t nonzero = 0;
  for (double v : w.vec()) nonzero += v > 0;
  EXPECT_LE(nonzero, 48u);
  EXPECT_GE(nonzero, 40u);
}
