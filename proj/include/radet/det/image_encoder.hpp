#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/rng.hpp"
#include "radet/det/tensor.hpp"

namespace radet::det {

struct ImageEncoderSpec {
  std::size_t channels = 3;
  std::size_t size = 32;  // input H = W
  std::size_t pool = 4;
  std::size_t hidden = 32;
  std::size_t dim = 16;
  double gain1 = 8.0;
  double gain2 = 2.0;
  std::uint64_t seed = 11;
};

/// Frozen odd feature map: tanh(W2 tanh(W1 (avgpool(x) - 0.5))). No biases.
class ImageEncoder {
 public:
  struct Trace {
    std::vector<double> input;  // pooled, centred
    std::vector<double> h1;
    std::vector<double> e;
  };

  ImageEncoder() : ImageEncoder(ImageEncoderSpec{}) {}
  explicit ImageEncoder(ImageEncoderSpec spec) : spec_(spec) {
    if (spec_.size % spec_.pool) throw ConfigError("ImageEncoder: size must be divisible by pool");
    if (spec_.hidden == 0 || spec_.dim == 0) throw ConfigError("ImageEncoder: empty layer");
    in_dim_ = spec_.channels * (spec_.size / spec_.pool) * (spec_.size / spec_.pool);
    Rng rng = make_stream(spec_.seed, 0x656E63);
    w1_.resize(spec_.hidden * in_dim_);
    w2_.resize(spec_.dim * spec_.hidden);
    const double s1 = spec_.gain1 / std::sqrt(static_cast<double>(in_dim_));
    const double s2 = spec_.gain2 / std::sqrt(static_cast<double>(spec_.hidden));
    for (auto& w : w1_) w = s1 * std_normal(rng);
    for (auto& w : w2_) w = s2 * std_normal(rng);
  }

  const ImageEncoderSpec& spec() const { return spec_; }
  std::size_t dim() const { return spec_.dim; }
  std::size_t input_dim() const { return in_dim_; }

  Trace forward(const Tensor& img) const {
    if (img.c != spec_.channels || img.h != spec_.size || img.w != spec_.size)
      throw ConfigError("ImageEncoder: image shape does not match encoder");
    Trace t;
    const Tensor pooled = nn::avgpool(img, spec_.pool);
    t.input = pooled.v;
    for (auto& x : t.input) x -= 0.5;
    t.h1.resize(spec_.hidden);
    for (std::size_t j = 0; j < spec_.hidden; ++j) {
      double s = 0.0;
      const double* row = w1_.data() + j * in_dim_;
      for (std::size_t i = 0; i < in_dim_; ++i) s += row[i] * t.input[i];
      t.h1[j] = std::tanh(s);
    }
    t.e.resize(spec_.dim);
    for (std::size_t k = 0; k < spec_.dim; ++k) {
      double s = 0.0;
      const double* row = w2_.data() + k * spec_.hidden;
      for (std::size_t j = 0; j < spec_.hidden; ++j) s += row[j] * t.h1[j];
      t.e[k] = std::tanh(s);
    }
    return t;
  }

  std::vector<double> encode(const Tensor& img) const { return forward(img).e; }

  /// Vector-Jacobian product: gradient of <g_e, e(x)> with respect to the image.
  Tensor vjp(const Trace& t, const std::vector<double>& g_e) const {
    std::vector<double> g_pre2(spec_.dim), g_h1(spec_.hidden, 0.0);
    for (std::size_t k = 0; k < spec_.dim; ++k) g_pre2[k] = g_e[k] * (1.0 - t.e[k] * t.e[k]);
    for (std::size_t k = 0; k < spec_.dim; ++k) {
      const double* row = w2_.data() + k * spec_.hidden;
      for (std::size_t j = 0; j < spec_.hidden; ++j) g_h1[j] += g_pre2[k] * row[j];
    }
    const std::size_t ps = spec_.size / spec_.pool;
    Tensor g_pool(spec_.channels, ps, ps);
    for (std::size_t j = 0; j < spec_.hidden; ++j) {
      const double g = g_h1[j] * (1.0 - t.h1[j] * t.h1[j]);
      const double* row = w1_.data() + j * in_dim_;
      for (std::size_t i = 0; i < in_dim_; ++i) g_pool.v[i] += g * row[i];
    }
    return nn::avgpool_backward(g_pool, spec_.pool);
  }

  std::uint64_t parameter_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const std::vector<double>& v) {
      for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        for (int b = 0; b < 8; ++b) {
          h ^= (bits >> (8 * b)) & 0xFF;
          h *= 1099511628211ULL;
        }
      }
    };
    mix(w1_);
    mix(w2_);
    return h;
  }

 private:
  ImageEncoderSpec spec_;
  std::size_t in_dim_ = 0;
  std::vector<double> w1_, w2_;
};

}  // namespace radet::det
