#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hspk/grad_check.hpp"
#include "hspk/ops.hpp"
#include "hspk/optim.hpp"
#include "hspk/spatial.hpp"
#include "test_util.hpp"

using namespace hspk;
using hspk::testing::random_tensor;

namespace {

// Direct nested-loop cross-correlation.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                               std::size_t stride, Padding pad, std::size_t& oh, std::size_t& ow) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  oh = (H + pad.begin + pad.end - kh) / stride + 1;
  ow = (W + pad.begin + pad.end - kw) / stride + 1;
  std::vector<double> out(B * O * oh * ow);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double s = b.defined() ? b.at(o) : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long yy = static_cast<long>(y * stride + i) - static_cast<long>(pad.begin);
                const long xx = static_cast<long>(z * stride + j) - static_cast<long>(pad.begin);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += x.at(((n * C + c) * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)) *
                     w.at(((o * C + c) * kh + i) * kw + j);
              }
          out[((n * O + o) * oh + y) * ow + z] = s;
        }
  return out;
}

double relative(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  auto x = random_tensor(rng, {2, 1, 5, 7});
  auto w = Tensor<double>({1, 1, 1, 1}, {1.0});
  auto y = conv2d(x, w, Tensor<double>::zeros({1}), 1, std::size_t{0});
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.vec(), x.vec());
}

TEST(Conv2d, OnesKernelOnConstant) {
  const double c = 0.37;
  auto x = Tensor<double>::full({1, 1, 6, 6}, c);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w, Tensor<double>::zeros({1}), 1, std::size_t{0});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  for (double v : y.vec()) EXPECT_NEAR(v, 9 * c, 1e-15);
}

TEST(Conv2d, MatchesNaiveOracleOnReferenceShape) {
  Rng rng(2);
  auto x = random_tensor(rng, {1, 2, 5, 5});
  auto w = random_tensor(rng, {3, 2, 3, 3});
  auto b = random_tensor(rng, {3});
  std::size_t oh, ow;
  const auto ref = naive_conv(x, w, b, 1, {0, 0}, oh, ow);
  auto y = conv2d(x, w, b, 1, std::size_t{0});
  ASSERT_EQ(y.shape(), (Shape{1, 3, oh, ow}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LT(relative(y.at(i), ref[i]), 1e-6);
}

TEST(Conv2d, MatchesNaiveOracleOnRandomShapes) {
  Rng rng(3);
  const std::size_t kernels[] = {1, 3, 4};
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = kernels[rng.below(3)];
    const std::size_t stride = 1 + rng.below(2);
    const Padding pad{rng.below(3), rng.below(3)};
    const std::size_t h = k + rng.below(6), w = k + rng.below(6);
    auto x = random_tensor(rng, {1 + rng.below(3), 1 + rng.below(3), h, w});
    auto wt = random_tensor(rng, {1 + rng.below(4), x.dim(1), k, k});
    Tensor<double> b;
    if (rng.below(2)) b = random_tensor(rng, {wt.dim(0)});
    std::size_t oh, ow;
    const auto ref = naive_conv(x, wt, b, stride, pad, oh, ow);
    auto y = conv2d(x, wt, b, stride, pad);
    ASSERT_EQ(y.shape(), (Shape{x.dim(0), wt.dim(0), oh, ow}));
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_LT(relative(y.at(i), ref[i]), 1e-6) << "trial " << trial;
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  auto x = Tensor<double>::zeros({1, 2, 4, 4});
  auto w = Tensor<double>::zeros({1, 3, 3, 3});
  EXPECT_THROW(conv2d(x, w, Tensor<double>{}, 1, std::size_t{0}), DimensionError);
}

TEST(Conv2d, GradCheck) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(10 + seed);
    auto x = random_tensor(rng, {2, 2, 5, 5});
    auto w = random_tensor(rng, {3, 2, 3, 3});
    auto b = random_tensor(rng, {3});
    auto r = grad_check(
        [](const auto& in) { return sum(tanh(conv2d(in[0], in[1], in[2], 2, Padding{1, 1}))); }, {x, w, b}, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Upsample, ConstantStaysConstant) {
  auto x = Tensor<double>::full({1, 2, 3, 4}, 0.42);
  auto y = upsample_bilinear_x2(x);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 8}));
  for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, 0.42);
}

TEST(Upsample, SinglePixel) {
  auto y = upsample_bilinear_x2(Tensor<double>({1, 1, 1, 1}, {0.8}));
  EXPECT_EQ(y.vec(), std::vector<double>(4, 0.8));
}

TEST(Upsample, MatchesBlendFormula) {
  Rng rng(4);
  for (int trial = 0; trial < 4; ++trial) {
    auto x = trial == 0 ? Tensor<double>({1, 1, 2, 2}, {0, 1, 0, 1}) : random_tensor(rng, {1, 1, 2 + rng.below(4), 2 + rng.below(4)});
    const std::size_t H = x.dim(2), W = x.dim(3);
    auto y = upsample_bilinear_x2(x);
    for (std::size_t dy = 0; dy < 2 * H; ++dy)
      for (std::size_t dx = 0; dx < 2 * W; ++dx) {
        const double sy = std::clamp((dy + 0.5) / 2.0 - 0.5, 0.0, H - 1.0);
        const double sx = std::clamp((dx + 0.5) / 2.0 - 0.5, 0.0, W - 1.0);
        const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
        const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
        const double ty = sy - y0, tx = sx - x0;
        auto px = [&](std::size_t r, std::size_t c) { return x.at(r * W + c); };
        const double ref = (1 - ty) * ((1 - tx) * px(y0, x0) + tx * px(y0, x1)) +
                           ty * ((1 - tx) * px(y1, x0) + tx * px(y1, x1));
        EXPECT_NEAR(y.at(dy * 2 * W + dx), ref, 1e-12);
      }
  }
  // Frozen row of the [[0,1],[0,1]] case: 0, 0.25, 0.75, 1.
  auto y = upsample_bilinear_x2(Tensor<double>({1, 1, 2, 2}, {0, 1, 0, 1}));
  EXPECT_EQ(std::vector<double>(y.vec().begin(), y.vec().begin() + 4), (std::vector<double>{0, 0.25, 0.75, 1}));
}

TEST(Upsample, GradCheck) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(20 + seed);
    auto x = random_tensor(rng, {2, 2, 3, 4});
    auto wts = random_tensor(rng, {2, 2, 6, 8});
    auto r = grad_check([&](const auto& in) { return sum(mul(upsample_bilinear_x2(in[0]), wts)); }, {x}, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4);
    auto r4 = grad_check([&](const auto& in) { return sum(exp(upsample_bilinear(in[0], 4))); }, {x}, 1e-5);
    EXPECT_LT(r4.max_rel_error, 1e-4);
  }
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor<double>::full({2, 3, 4}, 1.5, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, Quadratic) {
  auto x = Tensor<double>({3}, {1, 2, 3}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, AccumulatesOverConsumers) {
  // f = sum(x*x) + sum(3x) + sum(exp(x)); df/dx = 2x + 3 + exp(x).
  Rng rng(5);
  auto x = random_tensor(rng, {5}, -1, 1, true);
  auto f = add(add(sum(mul(x, x)), sum(mul_scalar(x, 3.0))), sum(exp(x)));
  f.backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], 2 * x.at(i) + 3 + std::exp(x.at(i)), 1e-12);
}

TEST(Backward, LeavesAccumulateAcrossCalls) {
  auto x = Tensor<double>({2}, {1, 2}, true);
  sum(x).backward();
  sum(x).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, VisitsEachNodeOnce) {
  auto x = Tensor<double>({2}, {1, 2}, true);
  auto a = mul(x, x);
  auto f = sum(add(a, a));
  Graph<double> g(f);
  std::set<const void*> seen;
  for (auto* n : g.order()) EXPECT_TRUE(seen.insert(n).second);
  EXPECT_EQ(g.order().size(), 4u);
}

TEST(Backward, RejectsNonScalar) {
  auto x = Tensor<double>::zeros({3}, true);
  EXPECT_THROW(mul(x, x).backward(), ContractError);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(30 + seed);
    auto x = random_tensor(rng, {1, 2, 6, 6});
    auto w = random_tensor(rng, {2, 2, 3, 3});
    auto r = grad_check([](const auto& in) { return sum(leaky_relu(conv2d(in[0], in[1], Tensor<double>{}, 1, std::size_t{1}))); },
                        {x, w}, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

TEST(Tensor, NonFiniteIsAnError) {
  auto x = Tensor<double>({2}, {1.0, -1.0});
  EXPECT_THROW(log(x), NumericError);
  EXPECT_THROW(Tensor<double>({2}, {1.0}), DimensionError);
}

TEST(GradCheck, LinearIsExact) {
  Rng rng(6);
  auto r = grad_check([](const auto& in) { return sum(in[0]); }, {random_tensor(rng, {4, 4})}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-10);
}

TEST(GradCheck, FivePointRemovesCubicTruncation) {
  // f = sum x^3: the 3-point error is exactly h^2, the 5-point one vanishes.
  Tensor<double> x({3}, {0.5, -1.0, 2.0});
  auto cube = [](const auto& in) { return sum(mul(mul(in[0], in[0]), in[0])); };
  const double h = 1e-3;
  const auto r3 = grad_check(cube, {x}, h);
  const auto r5 = grad_check(cube, {x}, h, {}, Stencil::five_point);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(r3.entries[i].numeric - r3.entries[i].analytic, h * h, 1e-9);
    EXPECT_NEAR(r5.entries[i].numeric, r5.entries[i].analytic, 1e-9);
  }
}

TEST(GradCheck, KinkedStencilUsesSmoothSide) {
  // 1.5e-5 is within 2h of the LeakyReLU kink at 0.
  Tensor<double> x({2}, {1.5e-5, -0.7});
  auto f = [](const auto& in) { return sum(leaky_relu(in[0])); };
  const auto plain = grad_check(f, {x}, 1e-5, {}, Stencil::five_point);
  EXPECT_GT(plain.max_rel_error, 1e-2);
  const auto r = grad_check(f, {x}, 1e-5, {}, Stencil::five_point_kinked);
  EXPECT_EQ(r.kinks, 1u);
  EXPECT_TRUE(r.entries[0].kink);
  EXPECT_FALSE(r.entries[1].kink);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, ElementwisePrimitives) {
  using F = std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)>;
  const std::vector<std::pair<const char*, F>> ops = {
      {"add", [](auto& a, auto& b) { return add(a, b); }},
      {"sub", [](auto& a, auto& b) { return sub(a, b); }},
      {"mul", [](auto& a, auto& b) { return mul(a, b); }},
      {"div", [](auto& a, auto& b) { return div(a, add_scalar(abs(b), 0.5)); }},
      {"exp", [](auto& a, auto&) { return exp(a); }},
      {"log", [](auto& a, auto&) { return log(add_scalar(mul(a, a), 0.1)); }},
      {"neg", [](auto& a, auto&) { return neg(a); }},
      {"clamp", [](auto& a, auto&) { return clamp(a, -0.5, 0.5); }},
      {"leaky_relu", [](auto& a, auto&) { return leaky_relu(a, 0.2); }},
      {"relu", [](auto& a, auto&) { return relu(a); }},
      {"sigmoid", [](auto& a, auto&) { return sigmoid(a); }},
      {"tanh", [](auto& a, auto&) { return tanh(a); }},
      {"pow", [](auto& a, auto&) { return pow_scalar(add_scalar(abs(a), 0.2), 1.7); }},
      {"mean", [](auto& a, auto&) { return mean(mul(a, a)); }},
      {"reshape", [](auto& a, auto& b) { return mul(reshape(a, {4, 4}), reshape(b, {4, 4})); }},
      {"matmul", [](auto& a, auto& b) { return matmul(reshape(a, {2, 8}), transpose(reshape(b, {2, 8}))); }},
      {"concat", [](auto& a, auto& b) { return mul(concat_channels(std::vector<Tensor<double>>{a, b}),
                                                   concat_channels(std::vector<Tensor<double>>{b, a})); }},
      {"mean_per_sample", [](auto& a, auto& b) { return mul(mean_per_sample(a), mean_per_sample(mul(a, b))); }},
      {"slice_batch", [](auto& a, auto& b) { return mul(slice_batch(a, 1), slice_batch(b, 0)); }},
      {"avg_pool", [](auto& a, auto& b) { return mul(avg_pool2x2(a), avg_pool2x2(b)); }},
  };
  for (const auto& [name, op] : ops) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(100 + seed);
      // Keep samples away from the kinks of relu/clamp/abs.
      auto pick = [&rng](Shape s) {
        auto t = random_tensor(rng, std::move(s));
        for (auto& v : t.values_mut()) v = (v < 0 ? -1 : 1) * (0.05 + std::abs(v));
        for (auto& v : t.values_mut()) if (std::abs(std::abs(v) - 0.5) < 0.02) v += 0.05;
        return t;
      };
      auto a = pick({2, 1, 2, 4});
      auto b = pick({2, 1, 2, 4});
      auto r = grad_check([&op](const auto& in) { return sum(tanh(op(in[0], in[1]))); }, {a, b}, 1e-6);
      EXPECT_LT(r.max_rel_error, 1e-4) << name << " seed " << seed;
    }
  }
}

TEST(GradCheck, BceWithLogits) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(40 + seed);
    auto z = random_tensor(rng, {2, 1, 3, 3}, -4, 4);
    for (double t : {0.0, 1.0}) {
      auto r = grad_check([t](const auto& in) { return bce_with_logits(in[0], t); }, {z}, 1e-5);
      EXPECT_LT(r.max_rel_error, 1e-4);
    }
  }
  // Large logits stay finite: log(1 + e^-100) underflows gracefully.
  auto big = Tensor<double>({2}, {100.0, -100.0});
  EXPECT_NEAR(bce_with_logits(big, 1.0).item(), 50.0, 1e-12);
}

TEST(BatchNorm, TrainGradCheck) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(50 + seed);
    auto x = random_tensor(rng, {3, 2, 3, 3});
    auto g = random_tensor(rng, {2}, 0.5, 1.5);
    auto b = random_tensor(rng, {2});
    auto wts = random_tensor(rng, {3, 2, 3, 3});
    auto r = grad_check([&](const auto& in) { return sum(mul(batch_norm_train(in[0], in[1], in[2], 1e-5), wts)); },
                        {x, g, b}, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}

TEST(BatchNorm, TrainNormalizesAndEvalUsesRunningStats) {
  Rng rng(7);
  auto x = random_tensor(rng, {4, 2, 3, 3}, -3, 5);
  auto y = batch_norm_train(x, Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}), 0.0);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        const double v = y.at((n * 2 + c) * 9 + i);
        s += v;
        ss += v * v;
      }
    EXPECT_NEAR(s / 36, 0.0, 1e-12);
    EXPECT_NEAR(ss / 36, 1.0, 1e-12);
  }
  auto e = batch_norm_eval(x, Tensor<double>::full({2}, 2.0), Tensor<double>::full({2}, 1.0),
                           std::vector<double>{1.0, -1.0}, std::vector<double>{4.0, 1.0}, 0.0);
  EXPECT_NEAR(e.at(0), 2.0 * (x.at(0) - 1.0) / 2.0 + 1.0, 1e-12);
}

TEST(Adam, ZeroGradientIsIdentity) {
  Rng rng(8);
  auto p = random_tensor(rng, {10}, -1, 1, true);
  const auto before = p.vec();
  std::vector<Tensor<double>> params{p};
  AdamState<double> st(params, AdamHyper{});
  for (int s = 0; s < 5; ++s) {
    std::fill(params[0].grad_mut().begin(), params[0].grad_mut().end(), 0.0);
    adam_step(params, st);
  }
  EXPECT_EQ(p.vec(), before);
  EXPECT_EQ(st.t, 5u);
}

TEST(Adam, FirstAndSecondStepClosedForm) {
  auto p = Tensor<double>({1}, {0.0}, true);
  std::vector<Tensor<double>> params{p};
  AdamState<double> st(params, AdamHyper{});
  p.grad_mut()[0] = 1.0;
  adam_step(params, st);
  const double u1 = p.at(0);
  // m_hat = g and v_hat = g^2 after bias correction.
  EXPECT_NEAR(u1, -2e-4 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(u1, -1.99999998e-4, 1e-15);
  p.grad_mut()[0] = 1.0;
  adam_step(params, st);
  EXPECT_NEAR(p.at(0) - u1, u1, 1e-15);
}

TEST(Adam, NanGradientAbortsWithoutTouchingParameters) {
  auto p = Tensor<double>({2}, {1.0, 2.0}, true);
  std::vector<Tensor<double>> params{p};
  AdamState<double> st(params, AdamHyper{});
  p.grad_mut()[0] = 0.5;
  p.grad_mut()[1] = std::nan("");
  EXPECT_THROW(adam_step(params, st), NumericError);
  EXPECT_EQ(p.vec(), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(st.t, 0u);
}
