#pragma once

// Pixel-wise attention from a feature map and the weighted-superposition
// image enhancement that feeds the next branch.
//
//   A(w, h) = sum_c g_c * F(w, h, c),   g_c = mean over (w, h) of F(., ., c)
//   X_s     = X_{s-1} + lambda * A_{s-1}

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "amen/error.hpp"
#include "amen/ops.hpp"
#include "amen/resample.hpp"
#include "amen/tensor.hpp"

namespace amen {

template <class T>
struct AttentionMap {
  Tensor<T> values;     // [H, W]
  std::size_t scale = 0;  // 1-based branch that produced it, 0 if unknown

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

// Raw (unnormalized) map, same spatial extents as F.
template <class T>
AttentionMap<T> attention_map(const Tensor<T>& features, std::size_t scale = 0) {
  const Tensor<T> g = global_average_pool(features);
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  AttentionMap<T> a{Tensor<T>({h, w}), scale};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = features.data() + ch * h * w;
    for (std::size_t i = 0; i < h * w; ++i) a.values[i] += g[ch] * plane[i];
  }
  return a;
}

// Min-max rescale to [0, 1]. A constant map carries no information and maps
// to all zeros so that it leaves the image untouched.
template <class T>
AttentionMap<T> normalize_attention(const AttentionMap<T>& a) {
  AttentionMap<T> out = a;
  const auto [lo, hi] = std::minmax_element(a.values.values().begin(), a.values.values().end());
  const T mn = *lo, range = *hi - *lo;
  if (!(range > T{0})) {
    out.values.fill(T{0});
    return out;
  }
  for (auto& v : out.values.values()) v = (v - mn) / range;
  return out;
}

template <class T>
AttentionMap<T> upsample_attention(const AttentionMap<T>& a, std::size_t target_width,
                                   std::size_t target_height) {
  if (target_width < a.width() || target_height < a.height()) {
    throw ArgumentError("upsample_attention: target " + std::to_string(target_width) + "x" +
                        std::to_string(target_height) + " (WxH) smaller than map " +
                        std::to_string(a.width()) + "x" + std::to_string(a.height()));
  }
  AttentionMap<T> out{Tensor<T>({target_height, target_width}), a.scale};
  detail::bilinear_plane(a.values.data(), a.height(), a.width(), out.values.data(), target_height,
                         target_width);
  return out;
}

// X + lambda * A, with A broadcast over every channel of X. No clamping.
template <class T>
Tensor<T> enhance_image(const Tensor<T>& image, const AttentionMap<T>& a, T lambda) {
  if (image.rank() != 3 || image.dim(1) != a.height() || image.dim(2) != a.width()) {
    throw ShapeError("enhance_image: image " + shape_str(image.shape()) + " vs attention map " +
                     shape_str(a.values.shape()));
  }
  Tensor<T> out = image;
  out.drop_grad();
  const std::size_t hw = a.values.size();
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    T* plane = out.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) plane[i] += lambda * a.values[i];
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> enhance_images(std::span<const Tensor<T>> images,
                                      std::span<const AttentionMap<T>> maps, T lambda) {
  if (images.size() != maps.size()) {
    throw ShapeError("enhance_images: " + std::to_string(images.size()) + " images vs " +
                     std::to_string(maps.size()) + " attention maps");
  }
  std::vector<Tensor<T>> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(enhance_image(images[i], maps[i], lambda));
  return out;
}

// Normalize at feature resolution, then upsample to the image extents.
template <class T>
AttentionMap<T> image_attention(const Tensor<T>& features, std::size_t image_width,
                                std::size_t image_height, std::size_t scale = 0) {
  return upsample_attention(normalize_attention(attention_map(features, scale)), image_width,
                            image_height);
}

}  // namespace amen
