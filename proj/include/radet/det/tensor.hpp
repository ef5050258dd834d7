#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "radet/core/errors.hpp"

namespace radet::det {

/// Channel-major C x H x W tensor of doubles.
struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t c_, std::size_t h_, std::size_t w_, double fill = 0.0) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, fill) {}

  std::size_t size() const { return v.size(); }
  double& at(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
  double* plane(std::size_t ch) { return v.data() + ch * h * w; }
  const double* plane(std::size_t ch) const { return v.data() + ch * h * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  bool operator==(const Tensor&) const = default;
};

struct ConvShape {
  std::size_t cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  std::size_t weight_count() const { return cout * cin * k * k; }
  std::size_t param_count() const { return weight_count() + cout; }
  std::size_t out_size(std::size_t in) const { return (in + 2 * pad - k) / stride + 1; }
};

namespace nn {

// Weights are laid out [cout][cin][k][k], followed by cout biases.
inline Tensor conv2d(const Tensor& in, const ConvShape& s, std::span<const double> p) {
  if (in.c != s.cin) throw ConfigError("conv2d: channel mismatch");
  const std::size_t oh = s.out_size(in.h), ow = s.out_size(in.w);
  Tensor out(s.cout, oh, ow);
  const double* wt = p.data();
  const double* bias = p.data() + s.weight_count();
  const long pad = static_cast<long>(s.pad);
  for (std::size_t co = 0; co < s.cout; ++co) {
    double* o = out.plane(co);
    std::fill(o, o + oh * ow, bias[co]);
    for (std::size_t ci = 0; ci < s.cin; ++ci) {
      const double* src = in.plane(ci);
      for (std::size_t ky = 0; ky < s.k; ++ky)
        for (std::size_t kx = 0; kx < s.k; ++kx) {
          const double wv = wt[((co * s.cin + ci) * s.k + ky) * s.k + kx];
          if (wv == 0.0) continue;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * s.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
            const double* row = src + iy * in.w;
            double* orow = o + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * s.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
              orow[ox] += wv * row[ix];
            }
          }
        }
    }
  }
  return out;
}

/// Accumulates parameter gradients into `gp`; returns the input gradient when `need_input`.
inline Tensor conv2d_backward(const Tensor& in, const ConvShape& s, std::span<const double> p, const Tensor& gout,
                              std::span<double> gp, bool need_input = true) {
  const std::size_t oh = gout.h, ow = gout.w;
  Tensor gin;
  if (need_input) gin = Tensor(in.c, in.h, in.w);
  const double* wt = p.data();
  double* gw = gp.data();
  double* gb = gp.data() + s.weight_count();
  const long pad = static_cast<long>(s.pad);
  for (std::size_t co = 0; co < s.cout; ++co) {
    const double* g = gout.plane(co);
    double acc = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) acc += g[i];
    gb[co] += acc;
    for (std::size_t ci = 0; ci < s.cin; ++ci) {
      const double* src = in.plane(ci);
      double* dst = need_input ? gin.plane(ci) : nullptr;
      for (std::size_t ky = 0; ky < s.k; ++ky)
        for (std::size_t kx = 0; kx < s.k; ++kx) {
          const std::size_t wi = ((co * s.cin + ci) * s.k + ky) * s.k + kx;
          const double wv = wt[wi];
          double gwa = 0.0;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * s.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
            const double* row = src + iy * in.w;
            const double* grow = g + oy * ow;
            double* drow = dst ? dst + iy * in.w : nullptr;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * s.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
              gwa += grow[ox] * row[ix];
              if (drow) drow[ix] += wv * grow[ox];
            }
          }
          gw[wi] += gwa;
        }
    }
  }
  return gin;
}

inline Tensor avgpool(const Tensor& in, std::size_t f) {
  if (in.h % f || in.w % f) throw ConfigError("avgpool: size not divisible by pool factor");
  Tensor out(in.c, in.h / f, in.w / f);
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t ch = 0; ch < in.c; ++ch)
    for (std::size_t y = 0; y < in.h; ++y)
      for (std::size_t x = 0; x < in.w; ++x) out.at(ch, y / f, x / f) += in.at(ch, y, x) * inv;
  return out;
}

inline Tensor avgpool_backward(const Tensor& gout, std::size_t f) {
  Tensor gin(gout.c, gout.h * f, gout.w * f);
  const double inv = 1.0 / static_cast<double>(f * f);
  for (std::size_t ch = 0; ch < gin.c; ++ch)
    for (std::size_t y = 0; y < gin.h; ++y)
      for (std::size_t x = 0; x < gin.w; ++x) gin.at(ch, y, x) = gout.at(ch, y / f, x / f) * inv;
  return gin;
}

inline Tensor upsample2(const Tensor& in) {
  Tensor out(in.c, in.h * 2, in.w * 2);
  for (std::size_t ch = 0; ch < in.c; ++ch)
    for (std::size_t y = 0; y < out.h; ++y)
      for (std::size_t x = 0; x < out.w; ++x) out.at(ch, y, x) = in.at(ch, y / 2, x / 2);
  return out;
}

inline Tensor upsample2_backward(const Tensor& gout) {
  Tensor gin(gout.c, gout.h / 2, gout.w / 2);
  for (std::size_t ch = 0; ch < gout.c; ++ch)
    for (std::size_t y = 0; y < gout.h; ++y)
      for (std::size_t x = 0; x < gout.w; ++x) gin.at(ch, y / 2, x / 2) += gout.at(ch, y, x);
  return gin;
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw ConfigError("concat: spatial mismatch");
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<long>(a.size()));
  return out;
}

/// Splits a concatenated gradient back into the first `ca` channels and the rest.
inline std::pair<Tensor, Tensor> split(const Tensor& g, std::size_t ca) {
  Tensor a(ca, g.h, g.w), b(g.c - ca, g.h, g.w);
  std::copy(g.v.begin(), g.v.begin() + static_cast<long>(a.size()), a.v.begin());
  std::copy(g.v.begin() + static_cast<long>(a.size()), g.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline Tensor silu(const Tensor& pre) {
  Tensor out = pre;
  for (auto& x : out.v) x = silu(x);
  return out;
}

inline Tensor silu_backward(const Tensor& pre, Tensor g) {
  for (std::size_t i = 0; i < g.size(); ++i) g.v[i] *= silu_grad(pre.v[i]);
  return g;
}

/// y = W x + b with W stored row-major [out][in] followed by b.
inline std::vector<double> linear(std::span<const double> x, std::size_t out_dim, std::span<const double> p) {
  const std::size_t in_dim = x.size();
  std::vector<double> y(out_dim);
  for (std::size_t o = 0; o < out_dim; ++o) {
    double s = p[out_dim * in_dim + o];
    const double* row = p.data() + o * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) s += row[i] * x[i];
    y[o] = s;
  }
  return y;
}

inline std::vector<double> linear_backward(std::span<const double> x, std::span<const double> gy,
                                           std::span<const double> p, std::span<double> gp) {
  const std::size_t in_dim = x.size(), out_dim = gy.size();
  std::vector<double> gx(in_dim, 0.0);
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double g = gy[o];
    if (g == 0.0) continue;
    const double* row = p.data() + o * in_dim;
    double* grow = gp.data() + o * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) {
      grow[i] += g * x[i];
      gx[i] += g * row[i];
    }
    gp[out_dim * in_dim + o] += g;
  }
  return gx;
}

inline std::size_t linear_params(std::size_t in_dim, std::size_t out_dim) { return in_dim * out_dim + out_dim; }

}  // namespace nn
}  // namespace radet::det
