#pragma once

// Hand-rolled generators for the property tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hspk/grad_check.hpp"
#include "hspk/image.hpp"
#include "hspk/rng.hpp"
#include "hspk/tensor.hpp"

namespace hspk::testing {

template <class T = double>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

inline Image random_image(Rng& rng, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
  Image im(h, w);
  for (auto& p : im.pixels) p = static_cast<float>(rng.uniform(lo, hi));
  return im;
}

// Uniform noise blurred by a few 3x3 box passes: smooth, histogram spread out.
inline std::vector<double> smooth_field(Rng& rng, std::size_t h, std::size_t w, int passes = 3) {
  std::vector<double> v(h * w);
  for (auto& x : v) x = rng.uniform();
  for (int p = 0; p < passes; ++p) {
    std::vector<double> next(v.size());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const auto yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            s += v[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
            ++n;
          }
        next[y * w + x] = s / n;
      }
    v = std::move(next);
  }
  // Stretch to [0, 1].
  double lo = v[0], hi = v[0];
  for (double x : v) lo = std::min(lo, x), hi = std::max(hi, x);
  for (auto& x : v) x = (x - lo) / (hi - lo);
  return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Relative error with the denominator floored at `rel_floor` times the largest
// gradient magnitude, so entries that are round-off relative to the
// gradient's scale do not dominate.
inline double scaled_error(const GradCheckReport& r, double rel_floor = 1e-4) {
  double scale = 0.0;
  for (const auto& e : r.entries) scale = std::max({scale, std::abs(e.analytic), std::abs(e.numeric)});
  double worst = 0.0;
  for (const auto& e : r.entries)
    worst = std::max(worst, std::abs(e.analytic - e.numeric) /
                                std::max({std::abs(e.analytic), std::abs(e.numeric), rel_floor * scale, 1e-300}));
  return worst;
}

}  // namespace hspk::testing
