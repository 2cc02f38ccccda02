#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hspk/tensor.hpp"

namespace hspk {

struct GradCheckEntry {
  std::size_t input = 0;  // which input tensor
  std::size_t index = 0;  // flat element index within it
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool kink = false;  // stencil straddled a non-differentiable point
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t worst = 0;
  std::size_t kinks = 0;
};

// Builds the scalar objective from the given input tensors.
using GraphBuilder = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Element selection: (input index, flat element index).
using ElementList = std::vector<std::pair<std::size_t, std::size_t>>;

// Central-difference stencils: 3-point (error O(h^2)) and 5-point (O(h^4)).
// five_point_kinked additionally handles piecewise-smooth graphs (ReLU and
// friends): when the one-sided slopes on [x-2h, x] and [x, x+2h] disagree and
// the estimate misses, the stencil straddles a kink and is halved (down to
// h/16) until it no longer does. Such entries are flagged and counted.
enum class Stencil { three_point, five_point, five_point_kinked };

/// Compares backward() against central differences:
///   3-point: (f(x+h) - f(x-h)) / 2h
///   5-point: (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h
///
/// Relative error per element is |a - n| / max(|a|, |n|, 1e-8). When
/// `elements` is empty every element of every input is checked. The inputs
/// are perturbed in place and restored.
inline GradCheckReport grad_check(const GraphBuilder& f, std::vector<Tensor<double>> inputs, double h,
                                  const ElementList& elements = {}, Stencil stencil = Stencil::three_point) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  f(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(in.size(), 0.0);
    }
  }

  ElementList todo = elements;
  if (todo.empty()) {
    for (std::size_t k = 0; k < inputs.size(); ++k)
      for (std::size_t i = 0; i < inputs[k].size(); ++i) todo.emplace_back(k, i);
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (const auto& [k, i] : todo) {
    auto values = inputs[k].values_mut();
    const double x0 = values[i];
    auto at = [&](double dx) {
      values[i] = x0 + dx;
      return f(inputs).item();
    };
    double numeric = 0.0;
    bool kink = false;
    if (stencil == Stencil::three_point) {
      numeric = (at(h) - at(-h)) / (2.0 * h);
    } else {
      double fp1 = 0.0, fp2 = 0.0, fm1 = 0.0, fm2 = 0.0;
      auto five = [&](double hh) {
        fp1 = at(hh), fp2 = at(2.0 * hh), fm1 = at(-hh), fm2 = at(-2.0 * hh);
        return (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * hh);
      };
      numeric = five(h);
      if (stencil == Stencil::five_point_kinked) {
        const double a = analytic[k][i];
        const double f0 = at(0.0);
        auto straddles = [&](double hh) {
          const double right = (-3.0 * f0 + 4.0 * fp1 - fp2) / (2.0 * hh);
          const double left = (3.0 * f0 - 4.0 * fm1 + fm2) / (2.0 * hh);
          const double scale = std::max({std::abs(left), std::abs(right), 1e-8});
          return std::abs(right - left) > 1e-4 * scale && std::abs(numeric - a) > 1e-5 * scale;
        };
        for (double hh = h; straddles(hh) && hh > h / 16.0;) {
          kink = true;
          hh /= 2.0;
          numeric = five(hh);
        }
        if (kink) ++report.kinks;
      }
    }
    values[i] = x0;
    GradCheckEntry e;
    e.input = k;
    e.index = i;
    e.analytic = analytic[k][i];
    e.numeric = numeric;
    e.kink = kink;
    e.rel_error = std::abs(e.analytic - e.numeric) /
                  std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-8});
    if (e.rel_error > report.max_rel_error || report.entries.empty()) {
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.worst = report.entries.size();
    }
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace hspk
