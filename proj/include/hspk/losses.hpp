#pragma once

// Training objectives: adversarial BCE, histogram mutual-information loss
// (conditional entropy of the label given the generated image), multiscale
// SSIM over the three refinement outputs, and the composite generator and
// discriminator losses. Also the single-scale SSIM evaluation metric.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "hspk/hcu.hpp"
#include "hspk/image.hpp"
#include "hspk/ops.hpp"
#include "hspk/spatial.hpp"

namespace hspk {

// Floor applied to every log argument in the entropy terms.
inline constexpr double kLogFloor = 1e-12;

struct LossWeights {
  double lambda_mi = 1.0;
  double lambda_ssim = 5.0;
};

/// Entropies in bits. mi = h_label - h_conditional.
struct EntropyReport {
  double h_label = 0.0;
  double h_conditional = 0.0;
  double mi = 0.0;
};

/// H(Y|G) = -sum_ij P(i,j) log2(P(i,j) / P_G(j)) for a joint distribution
/// with label bins on rows and generated bins on columns.
template <class T>
Tensor<T> conditional_entropy(const Tensor<T>& joint, const Tensor<T>& marginal_g) {
  if (joint.rank() != 2 || marginal_g.size() != joint.dim(1)) {
    throw DimensionError("conditional_entropy: joint " + shape_str(joint.shape()) + " vs marginal " +
                         shape_str(marginal_g.shape()));
  }
  const std::size_t rows = joint.dim(0), cols = joint.dim(1);
  const T floor = static_cast<T>(kLogFloor);
  const T inv_ln2 = static_cast<T>(1.0 / std::numbers::ln2);
  std::vector<T> log_pg(cols);
  for (std::size_t j = 0; j < cols; ++j) log_pg[j] = std::log2(std::max(marginal_g.vec()[j], floor));
  double h = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const T p = joint.vec()[i * cols + j];
      if (p == T{0}) continue;
      h -= static_cast<double>(p) * (static_cast<double>(std::log2(std::max(p, floor))) - static_cast<double>(log_pg[j]));
    }
  return detail::make_result<T>(
      "conditional_entropy", Shape{1}, std::vector<T>{static_cast<T>(h)}, {joint, marginal_g},
      [rows, cols, floor, inv_ln2, log_pg](auto& self) {
        const auto& pv = self.parents[0]->value;
        const auto& gv = self.parents[1]->value;
        const T up = self.grad[0];
        if (auto* gj = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
              const T p = pv[i * cols + j];
              T d = -(std::log2(std::max(p, floor)) - log_pg[j]);
              if (p > floor) d -= inv_ln2;
              (*gj)[i * cols + j] += up * d;
            }
        }
        if (auto* gm = detail::parent_grad(self, 1)) {
          for (std::size_t j = 0; j < cols; ++j) {
            if (!(gv[j] > floor)) continue;
            double col = 0.0;
            for (std::size_t i = 0; i < rows; ++i) col += static_cast<double>(pv[i * cols + j]);
            (*gm)[j] += up * static_cast<T>(col) * inv_ln2 / gv[j];
          }
        }
      });
}

// Shannon entropy in bits, -sum p log2 max(p, floor).
template <class T>
Tensor<T> entropy_bits(const Tensor<T>& p) {
  const T floor = static_cast<T>(kLogFloor);
  const T inv_ln2 = static_cast<T>(1.0 / std::numbers::ln2);
  double h = 0.0;
  for (T v : p.vec()) {
    if (v != T{0}) h -= static_cast<double>(v) * static_cast<double>(std::log2(std::max(v, floor)));
  }
  return detail::make_result<T>("entropy", Shape{1}, std::vector<T>{static_cast<T>(h)}, {p}, [floor, inv_ln2](auto& self) {
    if (auto* g = detail::parent_grad(self, 0)) {
      const auto& pv = self.parents[0]->value;
      for (std::size_t i = 0; i < pv.size(); ++i) {
        T d = -std::log2(std::max(pv[i], floor));
        if (pv[i] > floor) d -= inv_ln2;
        (*g)[i] += self.grad[0] * d;
      }
    }
  });
}

template <class T>
struct MiLoss {
  Tensor<T> loss;  // bits
  EntropyReport report;
};

/// Mutual-information loss for one (label, generated) pair: the conditional
/// entropy H(label | generated) over smooth histograms. Both tensors may have
/// any shape with the same pixel count.
template <class T>
MiLoss<T> mi_loss(const Tensor<T>& label, const Tensor<T>& generated, const KernelBank& bank) {
  if (label.size() != generated.size()) {
    throw DimensionError("mi_loss: label has " + std::to_string(label.size()) + " pixels, generated has " +
                         std::to_string(generated.size()));
  }
  const auto w_label = kernel_weights(label, bank);
  const auto w_gen = kernel_weights(generated, bank);
  const auto pj = joint_from_weights(w_label, w_gen);
  const auto pg = marginal_from_weights(w_gen);
  MiLoss<T> out;
  out.loss = conditional_entropy(pj.probability, pg.probability);
  {
    NoGradGuard no_grad;
    const auto py = marginal_from_weights(w_label.detach());
    out.report.h_label = static_cast<double>(entropy_bits(py.probability).item());
  }
  out.report.h_conditional = static_cast<double>(out.loss.item());
  out.report.mi = out.report.h_label - out.report.h_conditional;
  return out;
}

/// Batch mean of mi_loss over [B, 1, H, W] tensors.
template <class T>
MiLoss<T> mi_loss_batch(const Tensor<T>& labels, const Tensor<T>& generated, const KernelBank& bank) {
  if (labels.shape() != generated.shape() || labels.rank() != 4) {
    throw DimensionError("mi_loss: shapes " + shape_str(labels.shape()) + " vs " + shape_str(generated.shape()));
  }
  const std::size_t batch = labels.dim(0);
  MiLoss<T> out;
  Tensor<T> total;
  for (std::size_t b = 0; b < batch; ++b) {
    auto one = mi_loss(slice_batch(labels, b), slice_batch(generated, b), bank);
    total = total.defined() ? add(total, one.loss) : one.loss;
    out.report.h_label += one.report.h_label / static_cast<double>(batch);
    out.report.h_conditional += one.report.h_conditional / static_cast<double>(batch);
  }
  out.report.mi = out.report.h_label - out.report.h_conditional;
  out.loss = mul_scalar(total, T{1} / static_cast<T>(batch));
  return out;
}

/// Normalized 1-D Gaussian taps.
inline std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  std::vector<double> taps(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

struct SsimWindow {
  std::size_t size;
  double sigma;
};

// 11 / 1.5 for extents of at least 32 pixels, 7 / 1.0 below that.
inline SsimWindow ssim_window_for(std::size_t height, std::size_t width) {
  return std::min(height, width) >= 32 ? SsimWindow{11, 1.5} : SsimWindow{7, 1.0};
}

struct MsSsimConfig {
  // Per-scale exponents, finest first; renormalized to sum to 1.
  std::vector<double> weights{0.25, 0.35, 0.40};
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  // Lower bound applied to each per-scale mean term before exponentiation,
  // so negative structure correlations cannot make the power undefined.
  double term_floor = 1e-6;

  std::size_t scales() const { return weights.size(); }
};

template <class T>
struct SsimMaps {
  Tensor<T> luminance;  // (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1)
  Tensor<T> cs;         // (2 s_ab + C2) / (s_a^2 + s_b^2 + C2)
};

template <class T>
SsimMaps<T> ssim_maps(const Tensor<T>& a, const Tensor<T>& b, const SsimWindow& window, double c1, double c2) {
  std::vector<T> taps;
  for (double t : gaussian_taps(window.size, window.sigma)) taps.push_back(static_cast<T>(t));
  const auto mu_a = separable_filter_valid(a, taps);
  const auto mu_b = separable_filter_valid(b, taps);
  const auto mu_aa = mu_a * mu_a;
  const auto mu_bb = mu_b * mu_b;
  const auto mu_ab = mu_a * mu_b;
  const auto s_aa = separable_filter_valid(a * a, taps) - mu_aa;
  const auto s_bb = separable_filter_valid(b * b, taps) - mu_bb;
  const auto s_ab = separable_filter_valid(a * b, taps) - mu_ab;
  const T C1 = static_cast<T>(c1), C2 = static_cast<T>(c2);
  SsimMaps<T> maps;
  maps.luminance = add_scalar(mul_scalar(mu_ab, T{2}), C1) / add_scalar(mu_aa + mu_bb, C1);
  maps.cs = add_scalar(mul_scalar(s_ab, T{2}), C2) / add_scalar(s_aa + s_bb, C2);
  return maps;
}

template <class T>
struct MsSsimResult {
  Tensor<T> value;               // scalar: batch mean of per-sample MS-SSIM
  std::vector<Tensor<T>> cs;     // per scale, [B] mean contrast-structure terms
  Tensor<T> luminance;           // [B] mean luminance term at the coarsest scale
};

/// Multiscale SSIM of [B, 1, H, W] batches:
///   l_M^{w_M} * prod_s cs_s^{w_s}
/// with 2x2 average pooling between scales and "valid" Gaussian windows.
template <class T>
MsSsimResult<T> ms_ssim(const Tensor<T>& a, const Tensor<T>& b, const MsSsimConfig& config = {}) {
  if (a.shape() != b.shape() || a.rank() != 4) {
    throw DimensionError("ms_ssim: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t scales = config.scales();
  if (scales == 0) throw ContractError("ms_ssim: no scales configured");
  double wsum = 0.0;
  for (double w : config.weights) wsum += w;
  {
    std::size_t h = a.dim(2), w = a.dim(3);
    for (std::size_t s = 1; s < scales; ++s) {
      if (h % 2 || w % 2) {
        throw DimensionError("ms_ssim: extent " + std::to_string(h) + "x" + std::to_string(w) + " at scale " +
                             std::to_string(s) + " cannot be halved; use fewer scales");
      }
      h /= 2;
      w /= 2;
    }
    const auto win = ssim_window_for(h, w);
    if (std::min(h, w) < win.size) {
      throw DimensionError("ms_ssim: coarsest scale " + std::to_string(h) + "x" + std::to_string(w) +
                           " is smaller than the " + std::to_string(win.size) + "-pixel window; use fewer scales");
    }
  }
  const T floor = static_cast<T>(config.term_floor);
  const T huge = std::numeric_limits<T>::max();
  MsSsimResult<T> out;
  Tensor<T> xa = a, xb = b, product;
  for (std::size_t s = 0; s < scales; ++s) {
    if (s > 0) {
      xa = avg_pool2x2(xa);
      xb = avg_pool2x2(xb);
    }
    const auto maps = ssim_maps(xa, xb, ssim_window_for(xa.dim(2), xa.dim(3)), config.c1, config.c2);
    const T weight = static_cast<T>(config.weights[s] / wsum);
    const auto cs = mean_per_sample(maps.cs);
    out.cs.push_back(cs);
    auto term = pow_scalar(clamp(cs, floor, huge), weight);
    if (s + 1 == scales) {
      out.luminance = mean_per_sample(maps.luminance);
      term = term * pow_scalar(clamp(out.luminance, floor, huge), weight);
    }
    product = product.defined() ? product * term : term;
  }
  out.value = mean(product);
  return out;
}

/// sum over m of (1 - MS-SSIM(upsample(G_m), label)); lower-resolution
/// outputs are bilinearly upsampled to the label extent first.
template <class T>
Tensor<T> ssim_loss_3scale(const Tensor<T>& g1, const Tensor<T>& g2, const Tensor<T>& g3, const Tensor<T>& label,
                           const MsSsimConfig& config = {}) {
  Tensor<T> total;
  for (const Tensor<T>* g : {&g1, &g2, &g3}) {
    if (g->rank() != 4 || label.rank() != 4 || label.dim(2) % g->dim(2) || label.dim(3) % g->dim(3) ||
        label.dim(2) / g->dim(2) != label.dim(3) / g->dim(3)) {
      throw DimensionError("ssim_loss_3scale: cannot upsample " + shape_str(g->shape()) + " to " +
                           shape_str(label.shape()));
    }
    const std::size_t factor = label.dim(2) / g->dim(2);
    const auto up = factor == 1 ? *g : upsample_bilinear(*g, factor);
    const auto term = add_scalar(neg(ms_ssim(up, label, config).value), T{1});
    total = total.defined() ? total + term : term;
  }
  return total;
}

template <class T>
Tensor<T> adversarial_g_loss(const Tensor<T>& logits_fake) {
  return bce_with_logits(logits_fake, T{1});
}

// 1/2 BCE(D(y,x), 1) + 1/2 BCE(D(G(x),x), 0)
template <class T>
Tensor<T> discriminator_loss(const Tensor<T>& logits_real, const Tensor<T>& logits_fake) {
  return mul_scalar(bce_with_logits(logits_real, T{1}), T(0.5)) +
         mul_scalar(bce_with_logits(logits_fake, T{0}), T(0.5));
}

template <class T>
Tensor<T> generator_total(const Tensor<T>& adv, const Tensor<T>& mi, const Tensor<T>& ssim3,
                          const LossWeights& weights) {
  return adv + mul_scalar(mi, static_cast<T>(weights.lambda_mi)) +
         mul_scalar(ssim3, static_cast<T>(weights.lambda_ssim));
}

inline double generator_total(double adv, double mi, double ssim3, const LossWeights& weights) {
  return adv + weights.lambda_mi * mi + weights.lambda_ssim * ssim3;
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  return mean(abs(a - b));
}

/// Single-scale SSIM, mean over the valid-window map. Evaluation only.
inline double ssim_metric(const Image& a, const Image& b, double c1 = 1e-4, double c2 = 9e-4) {
  if (!a.same_extent(b)) throw DimensionError("ssim_metric: extents differ");
  const auto win = ssim_window_for(a.height, a.width);
  if (a.height < win.size || a.width < win.size) {
    throw DimensionError("ssim_metric: image smaller than the " + std::to_string(win.size) + "-pixel window");
  }
  const auto taps = gaussian_taps(win.size, win.sigma);
  const std::size_t k = taps.size(), H = a.height, W = a.width, OH = H - k + 1, OW = W - k + 1;
  // Five filtered planes: a, b, a*a, b*b, a*b.
  auto filter = [&](auto pixel) {
    std::vector<double> tmp(H * OW), out(OH * OW);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) acc += taps[i] * pixel(y, x + i);
        tmp[y * OW + x] = acc;
      }
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) acc += taps[i] * tmp[(y + i) * OW + x];
        out[y * OW + x] = acc;
      }
    return out;
  };
  auto pa = [&](std::size_t y, std::size_t x) { return static_cast<double>(a.at(y, x)); };
  auto pb = [&](std::size_t y, std::size_t x) { return static_cast<double>(b.at(y, x)); };
  const auto ma = filter(pa);
  const auto mb = filter(pb);
  const auto maa = filter([&](std::size_t y, std::size_t x) { return pa(y, x) * pa(y, x); });
  const auto mbb = filter([&](std::size_t y, std::size_t x) { return pb(y, x) * pb(y, x); });
  const auto mab = filter([&](std::size_t y, std::size_t x) { return pa(y, x) * pb(y, x); });
  double total = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double saa = maa[i] - ma[i] * ma[i];
    const double sbb = mbb[i] - mb[i] * mb[i];
    const double sab = mab[i] - ma[i] * mb[i];
    total += ((2 * ma[i] * mb[i] + c1) * (2 * sab + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (saa + sbb + c2));
  }
  return total / static_cast<double>(ma.size());
}

}  // namespace hspk
