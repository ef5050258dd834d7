#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "radet/core/errors.hpp"
#include "radet/core/rng.hpp"
#include "radet/det/tensor.hpp"

namespace radet::det {

/// Images are C x H x W tensors with values in [0, 1].
using Image = Tensor;

inline void check_image(const Image& img) {
  if (img.c == 0 || img.h == 0 || img.w == 0 || img.v.size() != img.c * img.h * img.w)
    throw ConfigError("image: bad shape");
  for (double x : img.v)
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("image: values must lie in [0, 1]");
}

inline double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

/// x - median3x3(x) per channel, edges replicated.
inline Image median_residual(const Image& img) {
  if (img.h < 3 || img.w < 3) throw ConfigError("median_residual: need H, W >= 3");
  Image r(img.c, img.h, img.w);
  const long H = static_cast<long>(img.h), W = static_cast<long>(img.w);
  std::array<double, 9> win{};
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        std::size_t k = 0;
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long yy = std::clamp(y + dy, 0L, H - 1), xx = std::clamp(x + dx, 0L, W - 1);
            win[k++] = img.at(ch, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          }
        std::nth_element(win.begin(), win.begin() + 4, win.end());
        r.at(ch, y, x) = img.at(ch, y, x) - win[4];
      }
  return r;
}

/// clamp(x + delta, 0, 1).
inline Image perturb(const Image& img, const Tensor& delta) {
  if (!img.same_shape(delta)) throw ConfigError("perturb: shape mismatch");
  Image out = img;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = clamp01(img.v[i] + delta.v[i]);
  return out;
}

inline Image quantize8(Image img) {
  for (auto& x : img.v) x = std::round(clamp01(x) * 255.0) / 255.0;
  return img;
}

inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t size) {
  if (top + size > img.h || left + size > img.w) throw ConfigError("crop: window outside image");
  Image out(img.c, size, size);
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) out.at(ch, y, x) = img.at(ch, top + y, left + x);
  return out;
}

/// Random square crop to `size`, only when the image is larger; otherwise a copy.
inline Image random_crop(const Image& img, std::size_t size, Rng& rng) {
  if (img.h < size || img.w < size) throw ConfigError("random_crop: image smaller than target");
  if (img.h == size && img.w == size) return img;
  std::uniform_int_distribution<std::size_t> ty(0, img.h - size), tx(0, img.w - size);
  const auto top = ty(rng);
  const auto left = tx(rng);
  return crop(img, top, left, size);
}

inline Image center_crop(const Image& img, std::size_t size) {
  if (img.h < size || img.w < size) throw ConfigError("center_crop: image smaller than target");
  return crop(img, (img.h - size) / 2, (img.w - size) / 2, size);
}

}  // namespace radet::det
