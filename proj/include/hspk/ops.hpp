#pragma once

// Elementwise, reduction and shape operations on Tensor.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hspk/tensor.hpp"

namespace hspk {

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// y = f(x) elementwise; dfdx(x, y) is the local derivative.
template <class T, class F, class DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF dfdx) {
  const auto& xv = x.vec();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [dfdx](Node<T>& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      (*gx)[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
    }
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] + b.vec()[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](auto& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = detail::parent_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] - b.vec()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] * b.vec()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](auto& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] / b.vec()[i];
  return detail::make_result<T>("div", a.shape(), std::move(out), {a, b}, [](auto& self) {
    const auto& bv = self.parents[1]->value;
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    }
    if (auto* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] -= self.grad[i] * self.value[i] / bv[i];
      }
    }
  });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary("neg", x, [](T v) { return -v; }, [](T, T) { return T{-1}; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return detail::unary("mul_scalar", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > 0 ? T{1} : (v < 0 ? T{-1} : T{0}); });
}

// x^p for x > 0 (or any x when p is a positive integer).
template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return detail::unary(
      "pow", x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p * std::pow(v, p - T{1}); });
}

// Gradient passes where lo <= x <= hi.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T{1} : T{0}; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      "relu", x, [](T v) { return v > 0 ? v : T{0}; }, [](T v, T) { return v > 0 ? T{1} : T{0}; });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return detail::unary(
      "leaky_relu", x, [slope](T v) { return v > 0 ? v : slope * v; },
      [slope](T v, T) { return v > 0 ? T{1} : slope; });
}

template <class T>
T sigmoid_value(T v) {
  // Branches keep exp() from overflowing for large |v|.
  if (v >= 0) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      "sigmoid", x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.vec()) s += static_cast<double>(v);
  return detail::make_result<T>("sum", Shape{1}, std::vector<T>{static_cast<T>(s)}, {x}, [](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.vec()) s += static_cast<double>(v);
  const T n = static_cast<T>(x.size());
  return detail::make_result<T>("mean", Shape{1}, std::vector<T>{static_cast<T>(s / static_cast<double>(x.size()))}, {x}, [n](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      const T d = self.grad[0] / n;
      for (auto& v : *g) v += d;
    }
  });
}

// [B, ...] -> [B]: mean over all but the leading axis.
template <class T>
Tensor<T> mean_per_sample(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("mean_per_sample: rank 0 input");
  const std::size_t batch = x.dim(0);
  const std::size_t inner = x.size() / batch;
  std::vector<T> out(batch, T{});
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += static_cast<double>(x.vec()[b * inner + i]);
    out[b] = static_cast<T>(s / static_cast<double>(inner));
  }
  return detail::make_result<T>("mean_per_sample", Shape{batch}, std::move(out), {x},
                                [batch, inner](auto& self) {
                                  if (auto* g = detail::parent_grad(self, 0)) {
                                    for (std::size_t b = 0; b < batch; ++b) {
                                      const T d = self.grad[b] / static_cast<T>(inner);
                                      for (std::size_t i = 0; i < inner; ++i) (*g)[b * inner + i] += d;
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), x.vec(), {x}, [](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
  return reshape(x, Shape{x.size()});
}

// [m,k] x [k,n] -> [m,n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T{});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a.vec()[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.vec()[p * n + j];
    }
  }
  return detail::make_result<T>("matmul", Shape{m, n}, std::move(out), {a, b}, [m, k, n](auto& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T s{};
          for (std::size_t j = 0; j < n; ++j) s += self.grad[i * n + j] * bv[p * n + j];
          (*g)[i * k + p] += s;
        }
    }
    if (auto* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T a_ip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*g)[p * n + j] += a_ip * self.grad[i * n + j];
        }
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.vec()[i * c + j];
  return detail::make_result<T>("transpose", Shape{c, r}, std::move(out), {x}, [r, c](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
    }
  });
}

// Concatenation of 4-D tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const auto& s0 = parts[0].shape();
  if (s0.size() != 4) throw DimensionError("concat_channels: expected 4-D inputs");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw DimensionError("concat_channels: incompatible " + shape_str(s0) + " and " + shape_str(s));
    }
    channels += s[1];
  }
  const std::size_t batch = s0[0], plane = s0[2] * s0[3];
  std::vector<T> out(batch * channels * plane);
  std::vector<std::size_t> offsets;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    offsets.push_back(c0);
    const std::size_t c = p.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(p.vec().begin() + static_cast<std::ptrdiff_t>(b * c * plane), c * plane,
                  out.begin() + static_cast<std::ptrdiff_t>((b * channels + c0) * plane));
    }
    c0 += c;
  }
  Shape shape{batch, channels, s0[2], s0[3]};
  return detail::make_result_n<T>(
      "concat_channels", shape, std::move(out), parts, [batch, channels, plane, offsets](auto& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
          auto* g = detail::parent_grad(self, k);
          if (!g) continue;
          const std::size_t c = self.parents[k]->shape[1];
          for (std::size_t b = 0; b < batch; ++b) {
            const T* src = self.grad.data() + (b * channels + offsets[k]) * plane;
            T* dst = g->data() + b * c * plane;
            for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

// Sample b of a batch, keeping the leading axis: [B,...] -> [1,...].
template <class T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t b) {
  if (x.rank() < 1 || b >= x.dim(0)) throw DimensionError("slice_batch: index out of range");
  const std::size_t inner = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = 1;
  std::vector<T> out(x.vec().begin() + static_cast<std::ptrdiff_t>(b * inner),
                     x.vec().begin() + static_cast<std::ptrdiff_t>((b + 1) * inner));
  return detail::make_result<T>("slice_batch", shape, std::move(out), {x}, [b, inner](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < inner; ++i) (*g)[b * inner + i] += self.grad[i];
    }
  });
}

// Mean over elements of binary cross-entropy between sigmoid(logits) and a
// constant target, in the overflow-free form max(z,0) - z*t + log(1+e^-|z|).
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, T target) {
  double s = 0.0;
  for (T z : logits.vec()) {
    s += static_cast<double>(std::max(z, T{0}) - z * target + std::log1p(std::exp(-std::abs(z))));
  }
  const T n = static_cast<T>(logits.size());
  return detail::make_result<T>("bce_with_logits", Shape{1},
                                std::vector<T>{static_cast<T>(s / static_cast<double>(logits.size()))}, {logits},
                                [target, n](auto& self) {
                                  if (auto* g = detail::parent_grad(self, 0)) {
                                    const auto& zv = self.parents[0]->value;
                                    const T d = self.grad[0] / n;
                                    for (std::size_t i = 0; i < zv.size(); ++i) {
                                      (*g)[i] += d * (sigmoid_value(zv[i]) - target);
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }
template <class T>
Tensor<T> operator+(const Tensor<T>& a, T c) { return add_scalar(a, c); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return mul_scalar(a, c); }
template <class T>
Tensor<T> operator*(T c, const Tensor<T>& a) { return mul_scalar(a, c); }

}  // namespace hspk
