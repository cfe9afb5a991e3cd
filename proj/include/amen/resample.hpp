#pragma once

// Bilinear resampling shared by attention upsampling and image resizing.
//
// Pixel centers are aligned (half-pixel convention, "align_corners = false"):
// output pixel x samples source coordinate (x + 0.5) * in / out - 0.5,
// clamped to [0, in - 1]. Matching extents reproduce the input exactly, and a
// 2x2 image resized to 1x1 samples the center, i.e. the mean of the four
// corners.

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace amen::detail {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of `hi`
};

inline Tap bilinear_tap(std::size_t dst, std::size_t in, std::size_t out) {
  double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const auto lo = static_cast<std::size_t>(std::floor(src));
  const std::size_t hi = std::min(lo + 1, in - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

// Resamples one [h, w] plane into [oh, ow].
template <class T>
void bilinear_plane(const T* src, std::size_t h, std::size_t w, T* dst, std::size_t oh,
                    std::size_t ow) {
  if (h == oh && w == ow) {
    std::copy(src, src + h * w, dst);
    return;
  }
  for (std::size_t y = 0; y < oh; ++y) {
    const Tap ty = bilinear_tap(y, h, oh);
    for (std::size_t x = 0; x < ow; ++x) {
      const Tap tx = bilinear_tap(x, w, ow);
      const double top = (1 - tx.frac) * src[ty.lo * w + tx.lo] + tx.frac * src[ty.lo * w + tx.hi];
      const double bot = (1 - tx.frac) * src[ty.hi * w + tx.lo] + tx.frac * src[ty.hi * w + tx.hi];
      dst[y * ow + x] = static_cast<T>((1 - ty.frac) * top + ty.frac * bot);
    }
  }
}

}  // namespace amen::detail
