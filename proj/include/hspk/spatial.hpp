#pragma once

// Image-shaped operations on [B, C, H, W] tensors: convolution, bilinear
// upsampling, pooling, separable filtering and batch normalization.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hspk/ops.hpp"
#include "hspk/tensor.hpp"

namespace hspk {

struct Padding {
  std::size_t begin = 0;  // top / left
  std::size_t end = 0;    // bottom / right
};

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

inline void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw DimensionError(std::string(op) + ": expected [B,C,H,W], got " + shape_str(s));
}

struct ConvGeometry {
  std::size_t batch, in_c, h, w, out_c, kh, kw, stride;
  Padding pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_c * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && stride == 1 && pad.begin == 0 && pad.end == 0;
  }
};

// cols[(c*kh + ky)*kw + kx][oy*out_w + ox] = x[c][oy*s + ky - pad][ox*s + kx - pad]
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad.begin);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(dst, g.out_w, T{});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad.begin);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{} : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_c; ++c) {
    T* dxc = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad.begin);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = dxc + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad.begin);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation with independent leading/trailing padding.
///
/// input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] (may be undefined).
/// Output extent: floor((H + pad.begin + pad.end - kh) / stride) + 1.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, Padding pad) {
  detail::require_rank4(input.shape(), "conv2d");
  detail::require_rank4(weight.shape(), "conv2d weight");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  detail::ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.out_c = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (weight.dim(1) != g.in_c) {
    throw DimensionError("conv2d: input has " + std::to_string(g.in_c) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_c)) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " for " +
                         std::to_string(g.out_c) + " output channels");
  }
  const std::size_t padded_h = g.h + pad.begin + pad.end;
  const std::size_t padded_w = g.w + pad.begin + pad.end;
  if (padded_h < g.kh || padded_w < g.kw) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(input.shape()));
  }
  g.out_h = (padded_h - g.kh) / stride + 1;
  g.out_w = (padded_w - g.kw) / stride + 1;

  const std::size_t K = g.patch(), N = g.out_plane();
  std::vector<T> out(g.batch * g.out_c * N);
  std::vector<T> cols(g.pointwise() ? 0 : K * N);
  detail::ConstMatMap<T> wmat(weight.vec().data(), static_cast<Eigen::Index>(g.out_c),
                              static_cast<Eigen::Index>(K));
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* xb = input.vec().data() + b * g.in_c * g.h * g.w;
    const T* colp = xb;
    if (!g.pointwise()) {
      detail::im2col(xb, g, cols.data());
      colp = cols.data();
    }
    detail::ConstMatMap<T> cmat(colp, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
    detail::MatMap<T> omat(out.data() + b * g.out_c * N, static_cast<Eigen::Index>(g.out_c),
                           static_cast<Eigen::Index>(N));
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (std::size_t o = 0; o < g.out_c; ++o) omat.row(static_cast<Eigen::Index>(o)).array() += bias.vec()[o];
    }
  }

  Shape shape{g.batch, g.out_c, g.out_h, g.out_w};
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result_n<T>("conv2d", shape, std::move(out), inputs, [g](auto& self) {
    const std::size_t K = g.patch(), N = g.out_plane();
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    auto* gx = detail::parent_grad(self, 0);
    auto* gw = detail::parent_grad(self, 1);
    auto* gb = self.parents.size() > 2 ? detail::parent_grad(self, 2) : nullptr;
    detail::ConstMatMap<T> wmat(wv.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
    std::vector<T> cols(g.pointwise() ? 0 : K * N);
    std::vector<T> dcols(gx && !g.pointwise() ? K * N : 0);
    for (std::size_t b = 0; b < g.batch; ++b) {
      detail::ConstMatMap<T> dout(self.grad.data() + b * g.out_c * N, static_cast<Eigen::Index>(g.out_c),
                                  static_cast<Eigen::Index>(N));
      if (gb) {
        for (std::size_t o = 0; o < g.out_c; ++o) (*gb)[o] += dout.row(static_cast<Eigen::Index>(o)).sum();
      }
      const T* xb = xv.data() + b * g.in_c * g.h * g.w;
      if (gw) {
        const T* colp = xb;
        if (!g.pointwise()) {
          detail::im2col(xb, g, cols.data());
          colp = cols.data();
        }
        detail::ConstMatMap<T> cmat(colp, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
        detail::MatMap<T> dw(gw->data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
        dw.noalias() += dout * cmat.transpose();
      }
      if (gx) {
        T* dxb = gx->data() + b * g.in_c * g.h * g.w;
        if (g.pointwise()) {
          detail::MatMap<T> dx(dxb, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
          dx.noalias() += wmat.transpose() * dout;
        } else {
          detail::MatMap<T> dc(dcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
          dc.noalias() = wmat.transpose() * dout;
          detail::col2im_add(dcols.data(), g, dxb);
        }
      }
    }
  });
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  return conv2d(input, weight, bias, stride, Padding{padding, padding});
}

namespace detail {

// Source taps of half-pixel-centred bilinear resampling along one axis:
// s = (d + 0.5) / factor - 0.5, clamped to [0, n-1].
struct LinearTaps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> t;
};

inline LinearTaps linear_taps(std::size_t n_in, std::size_t n_out) {
  LinearTaps taps;
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t d = 0; d < n_out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    taps.i0.push_back(lo);
    taps.i1.push_back(std::min(lo + 1, n_in - 1));
    taps.t.push_back(s - static_cast<double>(lo));
  }
  return taps;
}

}  // namespace detail

/// Bilinear resampling by an integer factor, half-pixel centres, edge clamped.
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, std::size_t factor) {
  detail::require_rank4(input.shape(), "upsample_bilinear");
  if (factor == 0) throw ContractError("upsample_bilinear: factor must be positive");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H == 0 || W == 0) throw DimensionError("upsample_bilinear: empty input");
  const std::size_t OH = H * factor, OW = W * factor;
  auto ty = detail::linear_taps(H, OH);
  auto tx = detail::linear_taps(W, OW);
  std::vector<T> out(B * C * OH * OW);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* src = input.vec().data() + bc * H * W;
    T* dst = out.data() + bc * OH * OW;
    for (std::size_t y = 0; y < OH; ++y) {
      const T wy = static_cast<T>(ty.t[y]);
      const T* r0 = src + ty.i0[y] * W;
      const T* r1 = src + ty.i1[y] * W;
      for (std::size_t x = 0; x < OW; ++x) {
        const T wx = static_cast<T>(tx.t[x]);
        const T top = r0[tx.i0[x]] * (T{1} - wx) + r0[tx.i1[x]] * wx;
        const T bot = r1[tx.i0[x]] * (T{1} - wx) + r1[tx.i1[x]] * wx;
        dst[y * OW + x] = top * (T{1} - wy) + bot * wy;
      }
    }
  }
  return detail::make_result<T>(
      "upsample_bilinear", Shape{B, C, OH, OW}, std::move(out), {input},
      [B, C, H, W, OH, OW, ty, tx](auto& self) {
        auto* g = detail::parent_grad(self, 0);
        if (!g) return;
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          T* dsrc = g->data() + bc * H * W;
          const T* dd = self.grad.data() + bc * OH * OW;
          for (std::size_t y = 0; y < OH; ++y) {
            const T wy = static_cast<T>(ty.t[y]);
            T* r0 = dsrc + ty.i0[y] * W;
            T* r1 = dsrc + ty.i1[y] * W;
            for (std::size_t x = 0; x < OW; ++x) {
              const T wx = static_cast<T>(tx.t[x]);
              const T v = dd[y * OW + x];
              r0[tx.i0[x]] += v * (T{1} - wy) * (T{1} - wx);
              r0[tx.i1[x]] += v * (T{1} - wy) * wx;
              r1[tx.i0[x]] += v * wy * (T{1} - wx);
              r1[tx.i1[x]] += v * wy * wx;
            }
          }
        }
      });
}

template <class T>
Tensor<T> upsample_bilinear_x2(const Tensor<T>& input) {
  return upsample_bilinear(input, 2);
}

// 2x2 mean pooling, stride 2; extents must be even.
template <class T>
Tensor<T> avg_pool2x2(const Tensor<T>& input) {
  detail::require_rank4(input.shape(), "avg_pool2x2");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 || W % 2 || H == 0 || W == 0) {
    throw DimensionError("avg_pool2x2: extents must be even, got " + shape_str(input.shape()));
  }
  const std::size_t OH = H / 2, OW = W / 2;
  std::vector<T> out(B * C * OH * OW);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* s = input.vec().data() + bc * H * W;
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        const T v = s[2 * y * W + 2 * x] + s[2 * y * W + 2 * x + 1] + s[(2 * y + 1) * W + 2 * x] +
                    s[(2 * y + 1) * W + 2 * x + 1];
        out[bc * OH * OW + y * OW + x] = v * T(0.25);
      }
  }
  return detail::make_result<T>("avg_pool2x2", Shape{B, C, OH, OW}, std::move(out), {input},
                                [B, C, H, W, OH, OW](auto& self) {
                                  auto* g = detail::parent_grad(self, 0);
                                  if (!g) return;
                                  for (std::size_t bc = 0; bc < B * C; ++bc) {
                                    T* d = g->data() + bc * H * W;
                                    for (std::size_t y = 0; y < OH; ++y)
                                      for (std::size_t x = 0; x < OW; ++x) {
                                        const T v = self.grad[bc * OH * OW + y * OW + x] * T(0.25);
                                        d[2 * y * W + 2 * x] += v;
                                        d[2 * y * W + 2 * x + 1] += v;
                                        d[(2 * y + 1) * W + 2 * x] += v;
                                        d[(2 * y + 1) * W + 2 * x + 1] += v;
                                      }
                                  }
                                });
}

/// Separable 2-D filtering without padding ("valid"): the same 1-D taps are
/// applied along rows and then columns of every channel.
template <class T>
Tensor<T> separable_filter_valid(const Tensor<T>& input, const std::vector<T>& taps) {
  detail::require_rank4(input.shape(), "separable_filter_valid");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t k = taps.size();
  if (k == 0 || H < k || W < k) {
    throw DimensionError("separable_filter_valid: window " + std::to_string(k) + " exceeds image " +
                         shape_str(input.shape()));
  }
  const std::size_t OH = H - k + 1, OW = W - k + 1;
  std::vector<T> out(B * C * OH * OW);
  std::vector<T> tmp(H * OW);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* s = input.vec().data() + bc * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        T acc{};
        for (std::size_t i = 0; i < k; ++i) acc += taps[i] * s[y * W + x + i];
        tmp[y * OW + x] = acc;
      }
    T* d = out.data() + bc * OH * OW;
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        T acc{};
        for (std::size_t i = 0; i < k; ++i) acc += taps[i] * tmp[(y + i) * OW + x];
        d[y * OW + x] = acc;
      }
  }
  return detail::make_result<T>(
      "separable_filter_valid", Shape{B, C, OH, OW}, std::move(out), {input},
      [B, C, H, W, OH, OW, taps](auto& self) {
        auto* g = detail::parent_grad(self, 0);
        if (!g) return;
        const std::size_t k = taps.size();
        std::vector<T> tmp(H * OW);
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          std::fill(tmp.begin(), tmp.end(), T{});
          const T* dd = self.grad.data() + bc * OH * OW;
          for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t x = 0; x < OW; ++x)
              for (std::size_t i = 0; i < k; ++i) tmp[(y + i) * OW + x] += taps[i] * dd[y * OW + x];
          T* ds = g->data() + bc * H * W;
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < OW; ++x)
              for (std::size_t i = 0; i < k; ++i) ds[y * W + x + i] += taps[i] * tmp[y * OW + x];
        }
      });
}

/// Batch normalization over (B, H, W) per channel using batch statistics.
/// The biased batch mean/variance are written to batch_mean / batch_var so
/// the caller can update running averages.
template <class T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                           std::vector<T>* batch_mean = nullptr, std::vector<T>* batch_var = nullptr) {
  detail::require_rank4(x.shape(), "batch_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C) throw DimensionError("batch_norm: parameter size mismatch");
  const T n = static_cast<T>(B * P);
  std::vector<T> mu(C, T{}), var(C, T{}), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    T s{};
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < P; ++p) s += x.vec()[(b * C + c) * P + p];
    mu[c] = s / n;
    T v{};
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t p = 0; p < P; ++p) {
        const T d = x.vec()[(b * C + c) * P + p] - mu[c];
        v += d * d;
      }
    var[c] = v / n;
    inv_std[c] = T{1} / std::sqrt(var[c] + eps);
  }
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (b * C + c) * P + p;
        out[i] = (x.vec()[i] - mu[c]) * inv_std[c] * gamma.vec()[c] + beta.vec()[c];
      }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return detail::make_result<T>(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta}, [B, C, P, n, mu, inv_std](auto& self) {
        const auto& xv = self.parents[0]->value;
        const auto& gv = self.parents[1]->value;
        auto* gx = detail::parent_grad(self, 0);
        auto* gg = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        for (std::size_t c = 0; c < C; ++c) {
          T sum_dy{}, sum_dy_xhat{};
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < P; ++p) {
              const std::size_t i = (b * C + c) * P + p;
              const T xhat = (xv[i] - mu[c]) * inv_std[c];
              sum_dy += self.grad[i];
              sum_dy_xhat += self.grad[i] * xhat;
            }
          if (gg) (*gg)[c] += sum_dy_xhat;
          if (gb) (*gb)[c] += sum_dy;
          if (gx) {
            const T scale = gv[c] * inv_std[c] / n;
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = (b * C + c) * P + p;
                const T xhat = (xv[i] - mu[c]) * inv_std[c];
                (*gx)[i] += scale * (n * self.grad[i] - sum_dy - xhat * sum_dy_xhat);
              }
          }
        }
      });
}

// Normalization with fixed statistics (evaluation mode).
template <class T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const std::vector<T>& running_mean, const std::vector<T>& running_var, T eps) {
  detail::require_rank4(x.shape(), "batch_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  if (gamma.size() != C || running_mean.size() != C || running_var.size() != C) {
    throw DimensionError("batch_norm: parameter size mismatch");
  }
  std::vector<T> scale(C);
  for (std::size_t c = 0; c < C; ++c) scale[c] = T{1} / std::sqrt(running_var[c] + eps);
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (b * C + c) * P + p;
        out[i] = (x.vec()[i] - running_mean[c]) * scale[c] * gamma.vec()[c] + beta.vec()[c];
      }
  return detail::make_result<T>(
      "batch_norm_eval", x.shape(), std::move(out), {x, gamma, beta},
      [B, C, P, scale, running_mean](auto& self) {
        const auto& xv = self.parents[0]->value;
        const auto& gv = self.parents[1]->value;
        auto* gx = detail::parent_grad(self, 0);
        auto* gg = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) {
              const std::size_t i = (b * C + c) * P + p;
              const T dy = self.grad[i];
              if (gx) (*gx)[i] += dy * scale[c] * gv[c];
              if (gg) (*gg)[c] += dy * (xv[i] - running_mean[c]) * scale[c];
              if (gb) (*gb)[c] += dy;
            }
      });
}

}  // namespace hspk
