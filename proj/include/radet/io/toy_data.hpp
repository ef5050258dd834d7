#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/rng.hpp"
#include "radet/det/image.hpp"
#include "radet/det/train.hpp"

namespace radet::io {

using det::Image;
using det::ImageSet;
using det::Tensor;

struct ToyDataSpec {
  std::size_t size = 32;
  std::size_t channels = 3;
  double lambda_img = 0.9;
  std::size_t stored_latents = 64;
  std::uint64_t seed = 5;
  // real images: per-channel colour offset and linear ramp (total change across the image)
  double real_offset = 0.18;
  double real_ramp = 0.2;
  // texture shared by both classes: size/4 and size/2 grids, luminance only
  double texture_mid = 0.05;
  double texture_fine = 0.025;
  // fake decoder: latent grid size/8, output grid size/2, bilinear to full size
  std::size_t latent_channels = 4;
  std::size_t hidden_channels = 8;
  double decoder_gain = 1.5;
  double fake_amp = 0.02;
  double artifact = 2.0 / 255.0;  // period-2 upsampling pattern
  // sensor noise, both classes
  double noise_min = 1.0 / 255.0;
  double noise_max = 8.0 / 255.0;
};

namespace detail {

/// Bilinear upsampling of a g x g grid to size x size (cell-centred).
inline void add_bilinear(const std::vector<double>& grid, std::size_t g, std::size_t size, double amp, double* out) {
  const double scale = static_cast<double>(g) / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    const double gy = std::clamp((y + 0.5) * scale - 0.5, 0.0, static_cast<double>(g - 1));
    const std::size_t y0 = static_cast<std::size_t>(gy), y1 = std::min(y0 + 1, g - 1);
    const double fy = gy - y0;
    for (std::size_t x = 0; x < size; ++x) {
      const double gx = std::clamp((x + 0.5) * scale - 0.5, 0.0, static_cast<double>(g - 1));
      const std::size_t x0 = static_cast<std::size_t>(gx), x1 = std::min(x0 + 1, g - 1);
      const double fx = gx - x0;
      const double v = (1 - fy) * ((1 - fx) * grid[y0 * g + x0] + fx * grid[y0 * g + x1]) +
                       fy * ((1 - fx) * grid[y1 * g + x0] + fx * grid[y1 * g + x1]);
      out[y * size + x] += amp * v;
    }
  }
}

/// Stride-2 transposed convolution, kernel 3, padding 1, output padding 1, no bias.
/// Weights laid out [cin][cout][3][3].
inline Tensor tconv2(const Tensor& in, std::size_t cout, const std::vector<double>& w) {
  Tensor out(cout, in.h * 2, in.w * 2);
  for (std::size_t ci = 0; ci < in.c; ++ci)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wv = w[((ci * cout + co) * 3 + ky) * 3 + kx];
          for (std::size_t iy = 0; iy < in.h; ++iy) {
            const long oy = static_cast<long>(2 * iy + ky) - 1;
            if (oy < 0 || oy >= static_cast<long>(out.h)) continue;
            for (std::size_t ix = 0; ix < in.w; ++ix) {
              const long ox = static_cast<long>(2 * ix + kx) - 1;
              if (ox < 0 || ox >= static_cast<long>(out.w)) continue;
              out.at(co, oy, ox) += wv * in.at(ci, iy, ix);
            }
          }
        }
  return out;
}

inline void add_sensor_noise(Image& img, const ToyDataSpec& s, Rng& rng) {
  const double sigma = s.noise_min + (s.noise_max - s.noise_min) * uniform01(rng);
  for (auto& v : img.v) v += sigma * std_normal(rng);
}


/// Luminance texture shared by both classes.
inline void add_texture(Image& img, const ToyDataSpec& s, Rng& rng) {
  std::vector<double> lum(s.size * s.size, 0.0);
  const std::size_t grids[2] = {s.size / 4, s.size / 2};
  const double amps[2] = {s.texture_mid, s.texture_fine};
  for (int k = 0; k < 2; ++k) {
    std::vector<double> g(grids[k] * grids[k]);
    for (auto& v : g) v = std_normal(rng);
    add_bilinear(g, grids[k], s.size, amps[k], lum.data());
  }
  for (std::size_t ch = 0; ch < img.c; ++ch) {
    double* p = img.plane(ch);
    for (std::size_t i = 0; i < s.size * s.size; ++i) p[i] += lum[i];
  }
}

}  // namespace detail

/// Smooth texture whose energy sits mostly in the lowest frequencies (colour
/// offset and linear ramp per channel).
inline Image make_real_image(const ToyDataSpec& s, Rng& rng) {
  if (s.size % 8) throw ConfigError("toy data: size must be divisible by 8");
  Image img(s.channels, s.size, s.size, 0.0);
  const double c = 0.5 * static_cast<double>(s.size - 1);
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    const double off = s.real_offset * std_normal(rng);
    const double gx = s.real_ramp * std_normal(rng) / static_cast<double>(s.size);
    const double gy = s.real_ramp * std_normal(rng) / static_cast<double>(s.size);
    for (std::size_t y = 0; y < s.size; ++y)
      for (std::size_t x = 0; x < s.size; ++x) img.at(ch, y, x) = 0.5 + off + gx * (x - c) + gy * (y - c);
  }
  detail::add_texture(img, s, rng);
  detail::add_sensor_noise(img, s, rng);
  return det::quantize8(std::move(img));
}

/// Fixed two-layer transposed-convolution decoder with a bank of stored latents.
class ToyGenerator {
 public:
  explicit ToyGenerator(const ToyDataSpec& s) : s_(s) {
    if (s.size % 8) throw ConfigError("toy data: size must be divisible by 8");
    if (!(s.lambda_img >= 0.0 && s.lambda_img <= 1.0)) throw ConfigError("toy data: lambda_img must lie in [0, 1]");
    if (s.stored_latents == 0) throw ConfigError("toy data: need at least one stored latent");
    latent_side_ = s.size / 8;
    Rng rng = make_stream(s.seed ^ 0xDEC0DE, 0);
    w1_.resize(s.latent_channels * s.hidden_channels * 9);
    w2_.resize(s.hidden_channels * s.channels * 9);
    const double sd1 = s.decoder_gain / std::sqrt(static_cast<double>(s.latent_channels * 9) / 4.0);
    const double sd2 = 1.0 / std::sqrt(static_cast<double>(s.hidden_channels * 9) / 4.0);
    for (auto& w : w1_) w = sd1 * std_normal(rng);
    for (auto& w : w2_) w = sd2 * std_normal(rng);
    const std::size_t zdim = s.latent_channels * latent_side_ * latent_side_;
    stored_.resize(s.stored_latents, std::vector<double>(zdim));
    for (auto& z : stored_)
      for (auto& v : z) v = std_normal(rng);
  }

  std::size_t latent_dim() const { return stored_.empty() ? 0 : stored_[0].size(); }

  /// Noise-free decoder output in [0, 1] (before detail texture and sensor noise).
  Image decode(const std::vector<double>& z) const {
    if (z.size() != latent_dim()) throw ConfigError("toy data: latent dimension mismatch");
    Tensor lat(s_.latent_channels, latent_side_, latent_side_);
    lat.v = z;
    Tensor h = detail::tconv2(lat, s_.hidden_channels, w1_);
    for (auto& v : h.v) v = std::tanh(v);
    Tensor o = detail::tconv2(h, s_.channels, w2_);
    for (auto& v : o.v) v = std::tanh(v);
    const std::size_t g = o.h;
    Image img(s_.channels, s_.size, s_.size, 0.5);
    for (std::size_t ch = 0; ch < s_.channels; ++ch) {
      std::vector<double> grid(o.plane(ch), o.plane(ch) + g * g);
      detail::add_bilinear(grid, g, s_.size, s_.fake_amp, img.plane(ch));
      for (std::size_t y = 0; y < s_.size; ++y)
        for (std::size_t x = 0; x < s_.size; ++x) {
          const double sign = ((x + y) & 1) ? -1.0 : 1.0;
          img.at(ch, y, x) += s_.artifact * sign * o.at(ch, y * g / s_.size, x * g / s_.size);
        }
    }
    return img;
  }

  /// Latent mixing a stored latent with a fresh draw, variance-normalised.
  std::vector<double> sample_latent(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, stored_.size() - 1);
    const auto& zs = stored_[pick(rng)];
    const double lam = s_.lambda_img;
    const double norm = std::sqrt(lam * lam + (1.0 - lam) * (1.0 - lam));
    std::vector<double> z(zs.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (lam * zs[i] + (1.0 - lam) * std_normal(rng)) / norm;
    return z;
  }

  Image sample(Rng& rng) const {
    Image img = decode(sample_latent(rng));
    detail::add_texture(img, s_, rng);
    detail::add_sensor_noise(img, s_, rng);
    return det::quantize8(std::move(img));
  }

 private:
  ToyDataSpec s_;
  std::size_t latent_side_ = 0;
  std::vector<double> w1_, w2_;
  std::vector<std::vector<double>> stored_;
};

/// Balanced labelled set; real images first, then fakes. Per-image streams.
inline ImageSet make_toy_dataset(const ToyDataSpec& s, std::size_t n_real, std::size_t n_fake, std::uint64_t split_id) {
  ImageSet out;
  const ToyGenerator gen(s);
  out.images.reserve(n_real + n_fake);
  for (std::size_t i = 0; i < n_real; ++i) {
    Rng rng = make_stream(s.seed, (split_id << 40) | (1ULL << 32) | i);
    out.images.push_back(make_real_image(s, rng));
    out.labels.push_back(1);
  }
  for (std::size_t i = 0; i < n_fake; ++i) {
    Rng rng = make_stream(s.seed, (split_id << 40) | (2ULL << 32) | i);
    out.images.push_back(gen.sample(rng));
    out.labels.push_back(0);
  }
  return out;
}

struct ToySplits {
  ImageSet train, test;
};

inline ToySplits make_toy_splits(const ToyDataSpec& s, std::size_t n_train_per_class, std::size_t n_test_per_class) {
  return {make_toy_dataset(s, n_train_per_class, n_train_per_class, 1),
          make_toy_dataset(s, n_test_per_class, n_test_per_class, 2)};
}

}  // namespace radet::io
