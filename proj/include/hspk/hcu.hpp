#pragma once

// Histogram computation unit: smooth, differentiable marginal and joint
// intensity histograms built from a bank of Gaussian kernels.
//
//   W(p,i)  = exp(-1/2 ((I(p) - b_i) / sigma)^2)
//   W~(p,i) = W(p,i) / sum_i' W(p,i')
//   H~(i)   = sum_p W~(p,i),            P~ = H~ / sum H~
//   H~AB    = W~A^T W~B,                P~AB = H~AB / sum H~AB
//
// Histogram masses and normalizing totals are accumulated in fixed point
// (ExactSum), so they do not depend on summation order: a pixel permutation
// leaves P~ unchanged bit for bit, and joint(A,B) is exactly the transpose of
// joint(B,A).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hspk/ops.hpp"
#include "hspk/tensor.hpp"

namespace hspk {

namespace detail {

/// Order-independent sum of doubles with |x| < 2^34. Each term is split into
/// an integer multiple of 2^-30 plus a remainder quantized to 2^-92 and both
/// parts are added in 128-bit integers; integer addition is associative, so
/// the result depends only on the multiset of terms.
class ExactSum {
 public:
  void add(double x) {
    if (x == 0.0) return;
    const bool negative = x < 0.0;
    const double a = std::abs(x);
    if (!(a < 0x1p34)) throw NumericError("ExactSum: term out of range");
    const double scaled = a * 0x1p30;  // exact
    const auto hi = static_cast<std::uint64_t>(scaled);
    const double rest = scaled - static_cast<double>(hi);  // exact
    const auto lo = static_cast<std::uint64_t>(rest * 0x1p62);
    Part& part = negative ? neg_ : pos_;
    part.hi += hi;
    part.lo += lo;
  }

  double value() const { return pos_.value() - neg_.value(); }

 private:
  struct Part {
    unsigned __int128 hi = 0, lo = 0;
    double value() const {
      const unsigned __int128 h = hi + (lo >> 62);
      const unsigned __int128 l = lo & ((static_cast<unsigned __int128>(1) << 62) - 1);
      return static_cast<double>(h) * 0x1p-30 + static_cast<double>(l) * 0x1p-92;
    }
  };
  Part pos_, neg_;
};

}  // namespace detail

/// k linearly spaced bin centres b_i = i/(k-1) over [0,1] and kernel width.
class KernelBank {
 public:
  explicit KernelBank(std::size_t bins = 256, double sigma = 0.01) : bins_(bins), sigma_(sigma) {
    if (bins < 2) throw ContractError("KernelBank: need at least 2 bins, got " + std::to_string(bins));
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ContractError("KernelBank: sigma must be positive");
    centers_.resize(bins);
    for (std::size_t i = 0; i < bins; ++i) {
      centers_[i] = static_cast<double>(i) / static_cast<double>(bins - 1);
    }
  }

  std::size_t bins() const { return bins_; }
  double sigma() const { return sigma_; }
  double center(std::size_t i) const { return centers_[i]; }
  const std::vector<double>& centers() const { return centers_; }
  double bin_width() const { return 1.0 / static_cast<double>(bins_ - 1); }

 private:
  std::size_t bins_;
  double sigma_;
  std::vector<double> centers_;
};

// Un-normalized Gaussian weight of a pixel value for one bin.
inline double raw_kernel_weight(double value, double center, double sigma) {
  const double z = (value - center) / sigma;
  return std::exp(-0.5 * z * z);
}

template <class T>
struct SmoothHistogram {
  Tensor<T> mass;         // H~, length k
  Tensor<T> probability;  // P~, length k
};

template <class T>
struct JointHistogram {
  Tensor<T> mass;         // H~AB, [k, k]
  Tensor<T> probability;  // P~AB, [k, k]
};

// Raw responses below this fraction of the row maximum are set to zero. The
// discarded normalized mass is below 1e-15 per row, and the histogram sums
// only have to visit a narrow band of bins around each pixel value.
inline constexpr double kWeightCutoff = 1e-18;

/// Row-normalized kernel responses W~ of shape [P, k] for an image with P
/// pixels (any tensor shape). Values are clamped to [0,1] first; the gradient
/// is zero for pixels outside that range.
template <class T>
Tensor<T> kernel_weights(const Tensor<T>& image, const KernelBank& bank) {
  const std::size_t P = image.size(), k = bank.bins();
  if (P == 0) throw ContractError("kernel_weights: empty image");
  const T sigma = static_cast<T>(bank.sigma());
  std::vector<T> centers(k);
  for (std::size_t i = 0; i < k; ++i) centers[i] = static_cast<T>(bank.center(i));
  std::vector<T> out(P * k);
  for (std::size_t p = 0; p < P; ++p) {
    const T v = std::clamp(image.vec()[p], T{0}, T{1});
    T* row = out.data() + p * k;
    T peak{};
    for (std::size_t i = 0; i < k; ++i) {
      const T z = (v - centers[i]) / sigma;
      row[i] = std::exp(T(-0.5) * z * z);
      peak = std::max(peak, row[i]);
    }
    T total{};
    for (std::size_t i = 0; i < k; ++i) {
      if (row[i] < peak * static_cast<T>(kWeightCutoff)) row[i] = T{0};
      total += row[i];
    }
    if (!(total > T{0})) {
      throw ContractError("kernel_weights: all kernel responses underflowed for pixel " + std::to_string(p));
    }
    for (std::size_t i = 0; i < k; ++i) row[i] /= total;
  }
  return detail::make_result<T>(
      "kernel_weights", Shape{P, k}, std::move(out), {image}, [P, k, sigma, centers](auto& self) {
        auto* g = detail::parent_grad(self, 0);
        if (!g) return;
        const auto& iv = self.parents[0]->value;
        const T inv_s2 = T{1} / (sigma * sigma);
        for (std::size_t p = 0; p < P; ++p) {
          const T raw = iv[p];
          if (raw < T{0} || raw > T{1}) continue;
          const T* w = self.value.data() + p * k;
          const T* gw = self.grad.data() + p * k;
          // dW~_i/dI = W~_i (a_i - sum_j W~_j a_j),  a_i = (b_i - I) / sigma^2
          T abar{}, gw_sum{}, gwa_sum{};
          for (std::size_t i = 0; i < k; ++i) {
            if (w[i] == T{0}) continue;
            const T a = (centers[i] - raw) * inv_s2;
            abar += w[i] * a;
            gw_sum += gw[i] * w[i];
            gwa_sum += gw[i] * w[i] * a;
          }
          (*g)[p] += gwa_sum - abar * gw_sum;
        }
      });
}

// [P, k] -> [k], order-independent column sums.
template <class T>
Tensor<T> column_sum(const Tensor<T>& m) {
  if (m.rank() != 2) throw DimensionError("column_sum: expected rank 2, got " + shape_str(m.shape()));
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<detail::ExactSum> acc(cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) acc[c].add(static_cast<double>(m.vec()[r * cols + c]));
  std::vector<T> out(cols);
  for (std::size_t c = 0; c < cols; ++c) out[c] = static_cast<T>(acc[c].value());
  return detail::make_result<T>("column_sum", Shape{cols}, std::move(out), {m}, [rows, cols](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*g)[r * cols + c] += self.grad[c];
    }
  });
}

// x / sum(x), keeping the shape.
template <class T>
Tensor<T> normalize_mass(const Tensor<T>& x) {
  detail::ExactSum sum;
  for (T v : x.vec()) sum.add(static_cast<double>(v));
  const T total = static_cast<T>(sum.value());
  if (!(total > T{0})) throw ContractError("normalize_mass: total mass is not positive");
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.vec()[i] / total;
  return detail::make_result<T>("normalize_mass", x.shape(), std::move(out), {x}, [total](auto& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    T dot{};
    for (std::size_t i = 0; i < self.value.size(); ++i) dot += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < self.value.size(); ++i) (*g)[i] += (self.grad[i] - dot) / total;
  });
}

namespace detail {

// [first, last) range of nonzero entries in a weight row. Gaussian rows are
// unimodal, so zeros only occur in the two tails.
template <class T>
std::pair<std::size_t, std::size_t> nonzero_band(const T* row, std::size_t k) {
  std::size_t lo = 0, hi = k;
  while (lo < k && row[lo] == T{0}) ++lo;
  while (hi > lo && row[hi - 1] == T{0}) --hi;
  return {lo, hi};
}

}  // namespace detail

// Which entries of the weight matrices receive a gradient from joint_mass.
// `support` restricts it to the nonzero entries of each row, which is all the
// kernel_weights backward reads.
enum class JointGrad { full, support };

/// H~AB(i,j) = sum_p WA(p,i) * WB(p,j) for [P,k] weight matrices. Products
/// with an exactly zero factor are skipped.
template <class T>
Tensor<T> joint_mass(const Tensor<T>& wa, const Tensor<T>& wb, JointGrad scope = JointGrad::full) {
  if (wa.rank() != 2 || wb.rank() != 2 || wa.dim(0) != wb.dim(0)) {
    throw DimensionError("joint_mass: incompatible weight matrices " + shape_str(wa.shape()) + " and " +
                         shape_str(wb.shape()));
  }
  const std::size_t P = wa.dim(0), ka = wa.dim(1), kb = wb.dim(1);
  std::vector<detail::ExactSum> acc(ka * kb);
  for (std::size_t p = 0; p < P; ++p) {
    const T* ra = wa.vec().data() + p * ka;
    const T* rb = wb.vec().data() + p * kb;
    const auto [alo, ahi] = detail::nonzero_band(ra, ka);
    const auto [blo, bhi] = detail::nonzero_band(rb, kb);
    for (std::size_t i = alo; i < ahi; ++i) {
      const double a = static_cast<double>(ra[i]);
      detail::ExactSum* dst = acc.data() + i * kb;
      for (std::size_t j = blo; j < bhi; ++j) dst[j].add(a * static_cast<double>(rb[j]));
    }
  }
  std::vector<T> out(ka * kb);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(acc[i].value());
  return detail::make_result<T>("joint_mass", Shape{ka, kb}, std::move(out), {wa, wb}, [P, ka, kb, scope](auto& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    auto* ga = detail::parent_grad(self, 0);
    auto* gb = detail::parent_grad(self, 1);
    const T* dh = self.grad.data();
    for (std::size_t p = 0; p < P; ++p) {
      const T* ra = av.data() + p * ka;
      const T* rb = bv.data() + p * kb;
      if (ga) {
        const auto [blo, bhi] = detail::nonzero_band(rb, kb);
        const auto [ilo, ihi] =
            scope == JointGrad::support ? detail::nonzero_band(ra, ka) : std::pair<std::size_t, std::size_t>{0, ka};
        T* dst = ga->data() + p * ka;
        for (std::size_t i = ilo; i < ihi; ++i) {
          T s{};
          for (std::size_t j = blo; j < bhi; ++j) s += dh[i * kb + j] * rb[j];
          dst[i] += s;
        }
      }
      if (gb) {
        const auto [alo, ahi] = detail::nonzero_band(ra, ka);
        const auto [jlo, jhi] =
            scope == JointGrad::support ? detail::nonzero_band(rb, kb) : std::pair<std::size_t, std::size_t>{0, kb};
        T* dst = gb->data() + p * kb;
        for (std::size_t i = alo; i < ahi; ++i) {
          const T a = ra[i];
          for (std::size_t j = jlo; j < jhi; ++j) dst[j] += a * dh[i * kb + j];
        }
      }
    }
  });
}

template <class T>
SmoothHistogram<T> marginal_from_weights(const Tensor<T>& weights) {
  SmoothHistogram<T> h;
  h.mass = column_sum(weights);
  h.probability = normalize_mass(h.mass);
  return h;
}

template <class T>
SmoothHistogram<T> marginal(const Tensor<T>& image, const KernelBank& bank) {
  return marginal_from_weights(kernel_weights(image, bank));
}

// Joint histogram of two kernel_weights outputs.
template <class T>
JointHistogram<T> joint_from_weights(const Tensor<T>& wa, const Tensor<T>& wb) {
  JointHistogram<T> h;
  h.mass = joint_mass(wa, wb, JointGrad::support);
  h.probability = normalize_mass(h.mass);
  return h;
}

template <class T>
JointHistogram<T> joint(const Tensor<T>& a, const Tensor<T>& b, const KernelBank& bank) {
  if (a.size() != b.size()) {
    throw DimensionError("joint: images have " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                         " pixels");
  }
  return joint_from_weights(kernel_weights(a, bank), kernel_weights(b, bank));
}

/// Conventional hard histogram over the same k bins (nearest centre),
/// normalized to a probability vector. Used for comparison reports only.
inline std::vector<double> hard_histogram(std::span<const float> pixels, std::size_t bins) {
  std::vector<double> h(bins, 0.0);
  for (float v : pixels) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    const auto i = static_cast<std::size_t>(std::lround(c * static_cast<double>(bins - 1)));
    h[i] += 1.0;
  }
  for (auto& x : h) x /= static_cast<double>(pixels.size());
  return h;
}

}  // namespace hspk
