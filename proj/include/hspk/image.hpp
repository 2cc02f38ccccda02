#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hspk/spatial.hpp"
#include "hspk/tensor.hpp"

namespace hspk {

/// H x W grid of grayscale intensities, row-major. Pixel values of labels,
/// speckles and generated images all live in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<float> values)
      : height(h), width(w), pixels(std::move(values)) {
    if (pixels.size() != h * w) {
      throw DimensionError("Image: " + std::to_string(h) + "x" + std::to_string(w) + " needs " +
                           std::to_string(h * w) + " pixels, got " + std::to_string(pixels.size()));
    }
  }

  std::size_t size() const { return pixels.size(); }
  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool same_extent(const Image& o) const { return height == o.height && width == o.width; }
  bool operator==(const Image&) const = default;
};

// Bilinear resampling to an arbitrary extent, half-pixel centres.
inline Image resize_bilinear(const Image& src, std::size_t height, std::size_t width) {
  if (src.height == height && src.width == width) return src;
  auto ty = detail::linear_taps(src.height, height);
  auto tx = detail::linear_taps(src.width, width);
  Image out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double wy = ty.t[y], wx = tx.t[x];
      const double top = src.at(ty.i0[y], tx.i0[x]) * (1 - wx) + src.at(ty.i0[y], tx.i1[x]) * wx;
      const double bot = src.at(ty.i1[y], tx.i0[x]) * (1 - wx) + src.at(ty.i1[y], tx.i1[x]) * wx;
      out.at(y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  return out;
}

// Mean over non-overlapping factor x factor blocks.
inline Image box_downsample(const Image& src, std::size_t factor) {
  if (factor == 0 || src.height % factor || src.width % factor) {
    throw DimensionError("box_downsample: extent " + std::to_string(src.height) + "x" +
                         std::to_string(src.width) + " not divisible by " + std::to_string(factor));
  }
  if (factor == 1) return src;
  Image out(src.height / factor, src.width / factor);
  const double norm = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx) s += src.at(y * factor + dy, x * factor + dx);
      out.at(y, x) = static_cast<float>(s * norm);
    }
  return out;
}

// Resample to the target extent: box filter for integer reductions,
// bilinear otherwise.
inline Image resample_to(const Image& src, std::size_t height, std::size_t width) {
  if (src.height >= height && src.width >= width && src.height % height == 0 && src.width % width == 0 &&
      src.height / height == src.width / width) {
    return box_downsample(src, src.height / height);
  }
  return resize_bilinear(src, height, width);
}

// Stacks equally sized images into a [B, 1, H, W] tensor.
template <class T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw DimensionError("images_to_tensor: empty batch");
  const std::size_t h = images[0]->height, w = images[0]->width;
  std::vector<T> values;
  values.reserve(images.size() * h * w);
  for (const Image* im : images) {
    if (im->height != h || im->width != w) throw DimensionError("images_to_tensor: mixed extents in batch");
    for (float v : im->pixels) values.push_back(static_cast<T>(v));
  }
  return Tensor<T>(Shape{images.size(), 1, h, w}, std::move(values));
}

template <class T>
Tensor<T> image_to_tensor(const Image& image) {
  return images_to_tensor<T>({&image});
}

// Sample b, channel 0 of a [B, C, H, W] tensor.
template <class T>
Image tensor_to_image(const Tensor<T>& t, std::size_t b = 0) {
  if (t.rank() != 4) throw DimensionError("tensor_to_image: expected [B,C,H,W], got " + shape_str(t.shape()));
  const std::size_t h = t.dim(2), w = t.dim(3);
  const std::size_t offset = b * t.dim(1) * h * w;
  Image out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) out.pixels[i] = static_cast<float>(t.vec()[offset + i]);
  return out;
}

}  // namespace hspk
