#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hspk/tensor.hpp"

namespace hspk {

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers for a fixed list of parameters.
template <class T>
struct AdamState {
  AdamHyper hyper;
  std::vector<std::vector<T>> m, v;
  std::uint64_t t = 0;

  AdamState() = default;
  AdamState(const std::vector<Tensor<T>>& params, AdamHyper h) : hyper(h) {
    for (const auto& p : params) {
      m.emplace_back(p.size(), T{});
      v.emplace_back(p.size(), T{});
    }
  }
};

/// One bias-corrected Adam update of every parameter in place.
///
/// Parameters without an accumulated gradient are treated as having a zero
/// gradient. A non-finite gradient anywhere aborts the step before any
/// parameter or moment is touched.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].size()) throw DimensionError("adam_step: moment/parameter size mismatch");
    for (T g : params[k].grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k));
    }
  }
  state.t += 1;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto grad = params[k].grad();
    auto w = params[k].values_mut();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - state.hyper.lr * mhat / (std::sqrt(vhat) + state.hyper.eps));
    }
  }
}

}  // namespace hspk
