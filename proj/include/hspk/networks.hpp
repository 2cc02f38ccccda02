#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hspk/ops.hpp"
#include "hspk/rng.hpp"
#include "hspk/spatial.hpp"

namespace hspk {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Non-trainable state saved with the parameters (batch-norm running stats).
template <class T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* data;
};

template <class T>
struct Conv2d {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]; absent when a batch norm follows
  std::size_t stride = 1;
  Padding pad{};

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, Padding pad_, bool with_bias = true)
      : weight(Tensor<T>::zeros({out, in, kernel, kernel}, true)), stride(stride_), pad(pad_) {
    if (with_bias) bias = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

template <class T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma(Tensor<T>::full({channels}, T{1}, true)),
        beta(Tensor<T>::zeros({channels}, true)),
        running_mean(channels, T{0}),
        running_var(channels, T{1}) {}

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    if (!train) return batch_norm_eval(x, gamma, beta, running_mean, running_var, eps);
    std::vector<T> mu, var;
    auto y = batch_norm_train(x, gamma, beta, eps, &mu, &var);
    const double n = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
    const T unbias = n > 1 ? static_cast<T>(n / (n - 1)) : T{1};
    for (std::size_t c = 0; c < mu.size(); ++c) {
      running_mean[c] = (T{1} - momentum) * running_mean[c] + momentum * mu[c];
      running_var[c] = (T{1} - momentum) * running_var[c] + momentum * var[c] * unbias;
    }
    return y;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<T>>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }
};

/// Generator architecture. Encoder level l halves the extent with a strided
/// 4x4 convolution; decoder stage k doubles it (bilinear x2 + 3x3 conv) and
/// concatenates the encoder skip of the same extent, giving decoder features
/// D_1 (deepest) ... D_depth (full resolution, concatenated with the input).
struct GeneratorConfig {
  std::size_t extent = 64;
  std::size_t input_channels = 1;
  std::vector<std::size_t> encoder_channels{32, 64, 128, 256, 256, 256};
  std::vector<std::size_t> decoder_channels{256, 256, 256, 128, 64, 32};
  // Three refinement stages, lowest resolution first.
  std::vector<std::size_t> tfrm_hidden{32, 32, 32};
  std::vector<std::size_t> tfrm_width{1, 1, 1};
  bool use_tfrm = true;

  std::size_t depth() const { return encoder_channels.size(); }

  void validate() const {
    const std::size_t d = depth();
    if (d == 0) throw ContractError("generator: empty encoder schedule");
    if (decoder_channels.size() != d) {
      throw ContractError("generator: encoder depth " + std::to_string(d) + " != decoder depth " +
                          std::to_string(decoder_channels.size()));
    }
    if (d >= 63 || extent % (std::size_t{1} << d) != 0) {
      throw ContractError("generator: extent " + std::to_string(extent) + " is not divisible by 2^" +
                          std::to_string(d));
    }
    if (use_tfrm) {
      if (d < 4) throw ContractError("generator: refinement needs at least four decoder stages");
      if (tfrm_hidden.size() != 3 || tfrm_width.size() != 3) {
        throw ContractError("generator: refinement needs exactly three stage widths");
      }
    }
    for (auto c : encoder_channels) if (c == 0) throw ContractError("generator: zero channel count");
    for (auto c : decoder_channels) if (c == 0) throw ContractError("generator: zero channel count");
  }

  // Keeps the first log2(extent) levels of the base schedule (deepest levels
  // are dropped) so that the bottleneck is 1x1.
  static GeneratorConfig for_extent(std::size_t extent, GeneratorConfig base) {
    std::size_t levels = 0;
    while ((std::size_t{1} << (levels + 1)) <= extent && extent % (std::size_t{1} << (levels + 1)) == 0) ++levels;
    base.extent = extent;
    if (base.encoder_channels.size() > levels) {
      const std::size_t drop = base.encoder_channels.size() - levels;
      base.encoder_channels.resize(levels);
      base.decoder_channels.erase(base.decoder_channels.begin(),
                                  base.decoder_channels.begin() + static_cast<std::ptrdiff_t>(drop));
    }
    return base;
  }
};

template <class T>
struct GeneratorOutput {
  Tensor<T> g1, g2, g3;              // images in (0,1) at 1/4, 1/2, full extent
  std::vector<Tensor<T>> decoder;    // D_1 ... D_depth
  std::vector<Tensor<T>> refined;    // pre-activation refined features R_1..R_3
  std::vector<Tensor<T>> stage_in;   // concatenated input of each stage
};

// One refinement stage: R = conv1x1(in) + conv3x3(lrelu(conv3x3(in))).
template <class T>
struct TfrmStage {
  Conv2d<T> shortcut, main1, main2;
  Conv2d<T> head;  // 1x1 projection to one channel when width > 1
  bool has_head = false;

  TfrmStage() = default;
  TfrmStage(std::size_t in, std::size_t hidden, std::size_t width)
      : shortcut(in, width, 1, 1, {}),
        main1(in, hidden, 3, 1, {1, 1}),
        main2(hidden, width, 3, 1, {1, 1}),
        has_head(width > 1) {
    if (has_head) head = Conv2d<T>(width, 1, 1, 1, {});
  }

  Tensor<T> refine(const Tensor<T>& in) const {
    return shortcut(in) + main2(leaky_relu(main1(in), T(0.2)));
  }
  Tensor<T> to_image(const Tensor<T>& refined) const {
    return sigmoid(has_head ? head(refined) : refined);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    shortcut.collect(prefix + ".shortcut", out);
    main1.collect(prefix + ".main1", out);
    main2.collect(prefix + ".main2", out);
    if (has_head) head.collect(prefix + ".head", out);
  }
};

template <class T>
class Generator {
 public:
  explicit Generator(GeneratorConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.depth();
    std::size_t in = config_.input_channels;
    for (std::size_t l = 0; l < d; ++l) {
      encoder_.emplace_back(in, config_.encoder_channels[l], 4, 2, Padding{1, 1}, l == 0);
      encoder_bn_.emplace_back(l == 0 ? 0 : config_.encoder_channels[l]);
      in = config_.encoder_channels[l];
    }
    for (std::size_t k = 0; k < d; ++k) {
      decoder_.emplace_back(in, config_.decoder_channels[k], 3, 1, Padding{1, 1}, false);
      decoder_bn_.emplace_back(config_.decoder_channels[k]);
      in = config_.decoder_channels[k] + skip_channels(k);
      decoder_width_.push_back(in);
    }
    if (config_.use_tfrm) {
      std::size_t prev = decoder_width_[d - 4];
      for (std::size_t m = 0; m < 3; ++m) {
        const std::size_t stage_in = prev + decoder_width_[d - 3 + m];
        tfrm_.emplace_back(stage_in, config_.tfrm_hidden[m], config_.tfrm_width[m]);
        prev = config_.tfrm_width[m];
      }
    } else {
      head_ = Conv2d<T>(decoder_width_.back(), 1, 1, 1, {});
    }
  }

  const GeneratorConfig& config() const { return config_; }
  std::vector<TfrmStage<T>>& tfrm() { return tfrm_; }

  GeneratorOutput<T> forward(const Tensor<T>& x, bool train) {
    if (x.rank() != 4 || x.dim(1) != config_.input_channels || x.dim(2) != config_.extent ||
        x.dim(3) != config_.extent) {
      throw DimensionError("generator: expected [B," + std::to_string(config_.input_channels) + "," +
                           std::to_string(config_.extent) + "," + std::to_string(config_.extent) + "], got " +
                           shape_str(x.shape()));
    }
    const std::size_t d = config_.depth();
    std::vector<Tensor<T>> enc;
    Tensor<T> h = x;
    for (std::size_t l = 0; l < d; ++l) {
      h = encoder_[l](h);
      if (l > 0) h = encoder_bn_[l].forward(h, train);
      h = leaky_relu(h, T(0.2));
      enc.push_back(h);
    }
    GeneratorOutput<T> out;
    for (std::size_t k = 0; k < d; ++k) {
      auto c = relu(decoder_bn_[k].forward(decoder_[k](upsample_bilinear_x2(h)), train));
      const Tensor<T>& skip = (k + 1 < d) ? enc[d - 2 - k] : x;
      h = concat_channels(std::vector<Tensor<T>>{c, skip});
      out.decoder.push_back(h);
    }
    if (!config_.use_tfrm) {
      out.g3 = sigmoid(head_(h));
      return out;
    }
    Tensor<T> prev = out.decoder[d - 4];
    Tensor<T>* images[3] = {&out.g1, &out.g2, &out.g3};
    for (std::size_t m = 0; m < 3; ++m) {
      auto in = concat_channels(std::vector<Tensor<T>>{upsample_bilinear_x2(prev), out.decoder[d - 3 + m]});
      auto refined = tfrm_[m].refine(in);
      *images[m] = tfrm_[m].to_image(refined);
      out.stage_in.push_back(in);
      out.refined.push_back(refined);
      prev = refined;
    }
    return out;
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      encoder_[l].collect("G.enc" + std::to_string(l), out);
      if (l > 0) encoder_bn_[l].collect("G.enc" + std::to_string(l) + ".bn", out);
    }
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      decoder_[k].collect("G.dec" + std::to_string(k), out);
      decoder_bn_[k].collect("G.dec" + std::to_string(k) + ".bn", out);
    }
    for (std::size_t m = 0; m < tfrm_.size(); ++m) tfrm_[m].collect("G.tfrm" + std::to_string(m), out);
    if (!config_.use_tfrm) head_.collect("G.head", out);
    return out;
  }

  std::vector<NamedBuffer<T>> named_buffers() {
    std::vector<NamedBuffer<T>> out;
    for (std::size_t l = 1; l < encoder_bn_.size(); ++l) encoder_bn_[l].collect_buffers("G.enc" + std::to_string(l) + ".bn", out);
    for (std::size_t k = 0; k < decoder_bn_.size(); ++k) decoder_bn_[k].collect_buffers("G.dec" + std::to_string(k) + ".bn", out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

 private:
  std::size_t skip_channels(std::size_t k) const {
    const std::size_t d = config_.depth();
    return (k + 1 < d) ? config_.encoder_channels[d - 2 - k] : config_.input_channels;
  }

  GeneratorConfig config_;
  std::vector<Conv2d<T>> encoder_;
  std::vector<BatchNorm2d<T>> encoder_bn_;
  std::vector<Conv2d<T>> decoder_;
  std::vector<BatchNorm2d<T>> decoder_bn_;
  std::vector<std::size_t> decoder_width_;
  std::vector<TfrmStage<T>> tfrm_;
  Conv2d<T> head_;
};

/// Conditional patch discriminator on the 2-channel stack (candidate, speckle).
struct DiscriminatorConfig {
  std::size_t extent = 64;
  std::size_t input_channels = 2;
  std::vector<std::size_t> channels{32, 64, 128};

  // Side of the square input region that influences one logit.
  std::size_t receptive_field() const {
    std::size_t rf = 1, jump = 1;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      rf += 3 * jump;
      jump *= 2;
    }
    return rf + 3 * jump;
  }
  std::size_t grid() const { return extent >> channels.size(); }

  void validate() const {
    if (channels.empty()) throw ContractError("discriminator: no strided layers");
    if (extent % (std::size_t{1} << channels.size()) != 0) {
      throw ContractError("discriminator: extent " + std::to_string(extent) + " not divisible by 2^" +
                          std::to_string(channels.size()));
    }
  }

  // Largest prefix (at most three layers) of `base` whose receptive field stays
  // below the extent.
  static DiscriminatorConfig for_extent(std::size_t extent, DiscriminatorConfig base) {
    base.extent = extent;
    while (base.channels.size() > 1 &&
           (base.receptive_field() >= extent || extent % (std::size_t{1} << base.channels.size()) != 0)) {
      base.channels.pop_back();
    }
    return base;
  }
};

template <class T>
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config) : config_(std::move(config)) {
    config_.validate();
    std::size_t in = config_.input_channels;
    for (std::size_t l = 0; l < config_.channels.size(); ++l) {
      layers_.emplace_back(in, config_.channels[l], 4, 2, Padding{1, 1}, l == 0);
      bn_.emplace_back(l == 0 ? 0 : config_.channels[l]);
      in = config_.channels[l];
    }
    // 4x4 stride-1 logit layer; the extra trailing pad keeps the grid extent.
    logits_ = Conv2d<T>(in, 1, 4, 1, Padding{1, 2});
  }

  const DiscriminatorConfig& config() const { return config_; }

  Tensor<T> forward(const Tensor<T>& candidate, const Tensor<T>& speckle, bool train) {
    if (candidate.shape() != speckle.shape() || candidate.rank() != 4 || candidate.dim(2) != config_.extent ||
        candidate.dim(3) != config_.extent) {
      throw DimensionError("discriminator: candidate " + shape_str(candidate.shape()) + " vs speckle " +
                           shape_str(speckle.shape()) + " (extent " + std::to_string(config_.extent) + ")");
    }
    Tensor<T> h = concat_channels(std::vector<Tensor<T>>{candidate, speckle});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](h);
      if (l > 0) h = bn_[l].forward(h, train);
      h = leaky_relu(h, T(0.2));
    }
    return logits_(h);
  }

  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].collect("D.conv" + std::to_string(l), out);
      if (l > 0) bn_[l].collect("D.conv" + std::to_string(l) + ".bn", out);
    }
    logits_.collect("D.logits", out);
    return out;
  }

  std::vector<NamedBuffer<T>> named_buffers() {
    std::vector<NamedBuffer<T>> out;
    for (std::size_t l = 1; l < bn_.size(); ++l) bn_[l].collect_buffers("D.conv" + std::to_string(l) + ".bn", out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

 private:
  DiscriminatorConfig config_;
  std::vector<Conv2d<T>> layers_;
  std::vector<BatchNorm2d<T>> bn_;
  Conv2d<T> logits_;
};

// Standard deviation of a unit normal truncated to [-2, 2].
inline constexpr double kTruncatedNormalStd = 0.87962566103423978;

/// Deterministic initialization: every convolution weight is drawn from a
/// normal truncated at two standard deviations and rescaled so its standard
/// deviation is `stddev`; biases and batch-norm shifts are 0, batch-norm
/// scales 1. Parameters are visited in named_parameters() order.
template <class T>
void init_params(const std::vector<NamedTensor<T>>& params, std::uint64_t seed, double stddev = 0.02) {
  Rng rng(seed);
  for (const auto& p : params) {
    auto values = Tensor<T>(p.tensor).values_mut();
    const bool is_weight = p.name.ends_with(".weight");
    const bool is_gamma = p.name.ends_with(".gamma");
    for (auto& v : values) {
      if (is_weight) {
        v = static_cast<T>(rng.truncated_normal(2.0) * stddev / kTruncatedNormalStd);
      } else {
        v = is_gamma ? T{1} : T{0};
      }
    }
  }
}

template <class T>
void zero_grads(const std::vector<Tensor<T>>& params) {
  for (auto p : params) p.zero_grad();
}

}  // namespace hspk
