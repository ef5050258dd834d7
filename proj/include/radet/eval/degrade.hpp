#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/det/image.hpp"

namespace radet::eval {

using det::Image;

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (auto& v : k) v /= s;
  return k;
}

/// Separable Gaussian blur without the final clamp.
inline Image gaussian_blur_raw(const Image& img, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_blur: sigma must be positive");
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  const long H = static_cast<long>(img.h), W = static_cast<long>(img.w);
  Image tmp(img.c, img.h, img.w), out(img.c, img.h, img.w);
  for (std::size_t ch = 0; ch < img.c; ++ch) {
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0.0;
        for (long i = -r; i <= r; ++i) s += k[i + r] * img.at(ch, y, std::clamp(x + i, 0L, W - 1));
        tmp.at(ch, y, x) = s;
      }
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0.0;
        for (long i = -r; i <= r; ++i) s += k[i + r] * tmp.at(ch, std::clamp(y + i, 0L, H - 1), x);
        out.at(ch, y, x) = s;
      }
  }
  return out;
}

/// Separable Gaussian blur, radius ceil(3 sigma), edges replicated, output clamped.
inline Image gaussian_blur(const Image& img, double sigma) {
  Image out = gaussian_blur_raw(img, sigma);
  for (auto& v : out.v) v = det::clamp01(v);
  return out;
}

inline constexpr std::array<int, 64> kLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22, 29,  51,  87,  80, 62, 18, 22, 37, 56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

/// Quantisation step table for a quality factor in [1, 100].
inline std::array<double, 64> jpeg_quant_table(int qf) {
  if (qf < 1 || qf > 100) throw ConfigError("jpeg_like: QF must lie in [1, 100]");
  const int scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
  std::array<double, 64> q{};
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::max(1, (kLuminanceTable[i] * scale + 50) / 100);
  return q;
}

namespace detail {

inline const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> b = [] {
    std::array<double, 64> m{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x) {
        const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        m[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    return m;
  }();
  return b;
}

}  // namespace detail

/// Orthonormal 8x8 DCT-II of a block (row-major).
inline std::array<double, 64> dct8x8(const std::array<double, 64>& blk) {
  const auto& c = detail::dct_basis();
  std::array<double, 64> tmp{}, out{};
  for (int u = 0; u < 8; ++u)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += c[u * 8 + y] * blk[y * 8 + x];
      tmp[u * 8 + x] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += c[v * 8 + x] * tmp[u * 8 + x];
      out[u * 8 + v] = s;
    }
  return out;
}

inline std::array<double, 64> idct8x8(const std::array<double, 64>& coef) {
  const auto& c = detail::dct_basis();
  std::array<double, 64> tmp{}, out{};
  for (int y = 0; y < 8; ++y)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += c[u * 8 + y] * coef[u * 8 + v];
      tmp[y * 8 + v] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += c[v * 8 + x] * tmp[y * 8 + v];
      out[y * 8 + x] = s;
    }
  return out;
}

/// Block-DCT quantisation surrogate of JPEG: per channel, pixel*255-128, 8x8
/// DCT, round(coef / q) * q, inverse DCT, back to [0, 1] with clamping. Edge
/// blocks are padded by replication. Not a bitstream codec.
inline Image jpeg_like(const Image& img, int qf) {
  const auto q = jpeg_quant_table(qf);
  Image out(img.c, img.h, img.w);
  const std::size_t H = img.h, W = img.w;
  for (std::size_t ch = 0; ch < img.c; ++ch)
    for (std::size_t by = 0; by < H; by += 8)
      for (std::size_t bx = 0; bx < W; bx += 8) {
        std::array<double, 64> blk{};
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x)
            blk[y * 8 + x] = img.at(ch, std::min(by + y, H - 1), std::min(bx + x, W - 1)) * 255.0 - 128.0;
        auto coef = dct8x8(blk);
        for (std::size_t i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
        const auto rec = idct8x8(coef);
        for (std::size_t y = 0; y < 8 && by + y < H; ++y)
          for (std::size_t x = 0; x < 8 && bx + x < W; ++x)
            out.at(ch, by + y, bx + x) = det::clamp01((rec[y * 8 + x] + 128.0) / 255.0);
      }
  return out;
}

}  // namespace radet::eval
