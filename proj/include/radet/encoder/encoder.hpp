#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "radet/core/dual.hpp"
#include "radet/core/errors.hpp"
#include "radet/core/matrix.hpp"
#include "radet/core/rng.hpp"
#include "radet/testbed/manifold.hpp"

namespace radet::enc {

/// f(x) = A x
struct LinearMap {
  Matrix a;

  std::size_t in_dim() const { return a.cols; }
  std::size_t out_dim() const { return a.rows; }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    for (std::size_t r = 0; r < a.rows; ++r) {
      T s = T(0.0);
      for (std::size_t c = 0; c < a.cols; ++c) s += T(a(r, c)) * x[c];
      out[r] = s;
    }
  }

  Matrix jacobian(std::span<const double>) const { return a; }
};

/// f_i(x) = sum_j A_ij x_j + x^T Q_i x
struct QuadraticMap {
  Matrix linear;               // d x n
  std::vector<Matrix> quad;    // d matrices, each n x n

  std::size_t in_dim() const { return linear.cols; }
  std::size_t out_dim() const { return linear.rows; }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    const auto n = in_dim();
    for (std::size_t i = 0; i < out_dim(); ++i) {
      T s = T(0.0);
      for (std::size_t j = 0; j < n; ++j) s += T(linear(i, j)) * x[j];
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k)
          if (quad[i](j, k) != 0.0) s += T(quad[i](j, k)) * x[j] * x[k];
      out[i] = s;
    }
  }

  Matrix jacobian(std::span<const double> x) const {
    const auto n = in_dim();
    Matrix j = linear;
    for (std::size_t i = 0; i < out_dim(); ++i)
      for (std::size_t c = 0; c < n; ++c)
        for (std::size_t k = 0; k < n; ++k) j(i, c) += (quad[i](c, k) + quad[i](k, c)) * x[k];
    return j;
  }
};

enum class Activation { identity, tanh };

/// Fixed-weight fully connected network with tanh hidden units.
struct SmoothNet {
  std::vector<std::size_t> widths;
  std::vector<Matrix> weights;              // layer l: widths[l+1] x widths[l]
  std::vector<std::vector<double>> biases;  // layer l: widths[l+1]
  Activation output_activation = Activation::identity;

  std::size_t in_dim() const { return widths.front(); }
  std::size_t out_dim() const { return widths.back(); }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    using std::tanh;
    std::vector<T> cur(x.begin(), x.end()), next;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto& w = weights[l];
      next.assign(w.rows, T(0.0));
      for (std::size_t r = 0; r < w.rows; ++r) {
        T s = T(biases[l][r]);
        for (std::size_t c = 0; c < w.cols; ++c) s += T(w(r, c)) * cur[c];
        const bool last = l + 1 == weights.size();
        next[r] = (!last || output_activation == Activation::tanh) ? tanh(s) : s;
      }
      cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), out.begin());
  }

  /// Chain rule through the layers (reverse accumulation of J = D_L W_L ... D_1 W_1).
  Matrix jacobian(std::span<const double> x) const {
    std::vector<double> cur(x.begin(), x.end());
    std::vector<std::vector<double>> derivs;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto& w = weights[l];
      std::vector<double> next(w.rows), der(w.rows);
      for (std::size_t r = 0; r < w.rows; ++r) {
        double s = biases[l][r];
        for (std::size_t c = 0; c < w.cols; ++c) s += w(r, c) * cur[c];
        const bool last = l + 1 == weights.size();
        if (!last || output_activation == Activation::tanh) {
          next[r] = std::tanh(s);
          der[r] = 1.0 - next[r] * next[r];
        } else {
          next[r] = s;
          der[r] = 1.0;
        }
      }
      derivs.push_back(std::move(der));
      cur.swap(next);
    }
    Matrix j = Matrix::identity(out_dim());
    for (std::size_t l = weights.size(); l-- > 0;) {
      const auto& w = weights[l];
      Matrix scaled(j.rows, w.rows);
      for (std::size_t r = 0; r < j.rows; ++r)
        for (std::size_t c = 0; c < w.rows; ++c) scaled(r, c) = j(r, c) * derivs[l][c];
      Matrix prod(j.rows, w.cols);
      for (std::size_t r = 0; r < j.rows; ++r)
        for (std::size_t k = 0; k < w.rows; ++k) {
          const double s = scaled(r, k);
          if (s == 0.0) continue;
          for (std::size_t c = 0; c < w.cols; ++c) prod(r, c) += s * w(k, c);
        }
      j = std::move(prod);
    }
    return j;
  }
};

/// Encoder with tangent/normal anisotropy around a graph manifold.
///
/// With u = x_{1:m}, w = x - phi(u), a(x) = phi(u) + P_T(u) w and
/// r^2 = |P_N(u) w|^2, the map is
///
///   f(x) = kappa_n (a + k nu) + (kappa_t - kappa_n) rho(k^2 r^2) (a(x) - x_ref),
///   rho(r^2) = exp(-r^2 / (2 s^2)),  nu = x - a,  k = (1 + r^2 / R^2)^(-1/2).
///
/// k compresses the normal offset so outputs stay bounded off the manifold;
/// far away G decays towards m kappa_n^2. R = inf gives the plain linear
/// far field kappa_n x.
///
/// On the manifold J_f = kappa_t P_T + kappa_n P_N, so the directional
/// derivative norm is exactly kappa_t along unit tangents and kappa_n along
/// unit normals, and G = m kappa_t^2 + (n - m) kappa_n^2 is constant there.
/// Tangent invariance fades over the width s, so G grows inside a small tube.
/// kappa_t == kappa_n with R = inf reduces to the isotropic linear map kappa x.
struct AnisotropicMap {
  std::shared_ptr<const testbed::ManifoldModel> manifold;
  double kappa_t = 0.1;
  double kappa_n = 1.0;
  double width = 0.25;
  double saturation = 1.0;  // R
  double max_normal_offset = std::numeric_limits<double>::infinity();
  std::vector<double> reference;  // x_ref, chart(0) by default

  std::size_t in_dim() const { return manifold->ambient_dim(); }
  std::size_t out_dim() const { return manifold->ambient_dim(); }

  /// Squared normal offset r^2 of x from the manifold (vertical-chart frame).
  double normal_offset_sq(std::span<const double> x) const {
    double r2 = 0.0;
    decompose<double>(x, nullptr, &r2);
    return r2;
  }

  template <class T>
  void apply(std::span<const T> x, std::span<T> out) const {
    using std::exp;
    const auto n = in_dim();
    std::vector<T> a(n);
    T r2 = T(0.0);
    decompose<T>(x, &a, &r2);
    if (value_of(r2) > max_normal_offset * max_normal_offset) {
      std::ostringstream os;
      os << "anisotropic encoder: normal offset " << std::sqrt(value_of(r2))
         << " exceeds the tubular neighbourhood radius " << max_normal_offset;
      throw DomainError(os.str());
    }
    using std::sqrt;
    T k = T(1.0);
    if (std::isfinite(saturation)) k = T(1.0) / sqrt(T(1.0) + r2 / T(saturation * saturation));
    const T rho = exp(-(k * k * r2) / T(2.0 * width * width));
    const T mix = T(kappa_t - kappa_n) * rho;
    for (std::size_t i = 0; i < n; ++i)
      out[i] = T(kappa_n) * (a[i] + k * (x[i] - a[i])) + mix * (a[i] - T(reference[i]));
  }

 private:
  template <class T>
  void decompose(std::span<const T> x, std::vector<T>* a_out, T* r2_out) const {
    const auto m = manifold->intrinsic_dim();
    const auto n = manifold->ambient_dim();
    const auto c = n - m;
    std::span<const T> u = x.first(m);
    std::vector<T> g(c);
    manifold->graph<T>(u, g);
    std::vector<T> dg;
    manifold->graph_jacobian<T>(u, dg);
    // w = (0, x_b - g(u)); Dphi^T w = Dg^T w_b.
    std::vector<T> wb(c);
    for (std::size_t k = 0; k < c; ++k) wb[k] = x[m + k] - g[k];
    std::vector<T> rhs(m, T(0.0));
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < c; ++k) rhs[j] += dg[k * m + j] * wb[k];
    std::vector<T> s(m * m, T(0.0));
    for (std::size_t i = 0; i < m; ++i) {
      s[i * m + i] = T(1.0);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < c; ++k) s[i * m + j] += dg[k * m + i] * dg[k * m + j];
    }
    std::vector<T> z = rhs;
    cholesky_solve(s, z, m);  // z = (I + Dg^T Dg)^{-1} Dg^T w_b
    T wpw = T(0.0), ww = T(0.0);
    for (std::size_t j = 0; j < m; ++j) wpw += rhs[j] * z[j];
    for (std::size_t k = 0; k < c; ++k) ww += wb[k] * wb[k];
    *r2_out = ww - wpw;
    if (a_out) {
      auto& a = *a_out;
      // a = phi(u) + P_T w, P_T w = (z, Dg z)
      for (std::size_t j = 0; j < m; ++j) a[j] = u[j] + z[j];
      for (std::size_t k = 0; k < c; ++k) {
        T dz = T(0.0);
        for (std::size_t j = 0; j < m; ++j) dz += dg[k * m + j] * z[j];
        a[m + k] = g[k] + dz;
      }
    }
  }
};

/// Tag for embeddings computed outside this process; cannot be evaluated.
struct ExternalTag {
  std::size_t dim = 0;
  std::string name;
  std::size_t in_dim() const { return 0; }
  std::size_t out_dim() const { return dim; }
};

enum class EncoderKind { linear, quadratic, anisotropic, smooth_net, external };

inline const char* to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::linear: return "linear";
    case EncoderKind::quadratic: return "quadratic";
    case EncoderKind::anisotropic: return "anisotropic";
    case EncoderKind::smooth_net: return "smooth_net";
    case EncoderKind::external: return "external";
  }
  return "?";
}

enum class JacobianMode { analytic, central_difference };

/// Fixed C^2 feature map with Jacobian access. Immutable; safe to share.
class EncoderHandle {
 public:
  using Map = std::variant<LinearMap, QuadraticMap, AnisotropicMap, SmoothNet, ExternalTag>;

  explicit EncoderHandle(Map map, JacobianMode mode = JacobianMode::analytic) : map_(std::move(map)), mode_(mode) {}

  EncoderKind kind() const { return static_cast<EncoderKind>(map_.index()); }
  JacobianMode jacobian_mode() const { return mode_; }
  const Map& map() const { return map_; }
  std::size_t in_dim() const {
    return std::visit([](const auto& m) { return m.in_dim(); }, map_);
  }
  std::size_t out_dim() const {
    return std::visit([](const auto& m) { return m.out_dim(); }, map_);
  }

  EncoderHandle with_mode(JacobianMode mode) const { return EncoderHandle(map_, mode); }

  void eval(std::span<const double> x, std::span<double> out) const {
    check_input(x);
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, ExternalTag>) {
            throw ConfigError("external encoder cannot be evaluated in-process");
          } else {
            m.template apply<double>(x, out);
          }
        },
        map_);
  }

  std::vector<double> eval(std::span<const double> x) const {
    std::vector<double> out(out_dim());
    eval(x, out);
    return out;
  }

  /// d x n Jacobian, exact in analytic mode, central differences otherwise.
  Matrix jacobian(std::span<const double> x) const {
    check_input(x);
    Matrix j = mode_ == JacobianMode::analytic ? analytic_jacobian(x) : finite_difference_jacobian(x);
    for (std::size_t r = 0; r < j.rows; ++r)
      for (std::size_t c = 0; c < j.cols; ++c)
        if (!std::isfinite(j(r, c))) {
          std::ostringstream os;
          os << "jacobian: non-finite entry (" << r << ", " << c << ") at x = [";
          for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
          os << "]";
          throw NumericError(os.str());
        }
    return j;
  }

  /// Default step h = 1e-4 (1 + |x|_inf).
  static double default_step(std::span<const double> x) {
    double mx = 0.0;
    for (double v : x) mx = std::max(mx, std::abs(v));
    return 1e-4 * (1.0 + mx);
  }

  Matrix finite_difference_jacobian(std::span<const double> x, double h = 0.0) const {
    if (h <= 0.0) h = default_step(x);
    const auto n = in_dim(), d = out_dim();
    Matrix j(d, n);
    std::vector<double> xp(x.begin(), x.end()), fp(d), fm(d);
    for (std::size_t c = 0; c < n; ++c) {
      xp[c] = x[c] + h;
      eval(xp, fp);
      xp[c] = x[c] - h;
      eval(xp, fm);
      xp[c] = x[c];
      for (std::size_t r = 0; r < d; ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * h);
    }
    return j;
  }

  /// G(x) = |J_f(x)|_F^2
  double jacobian_energy(std::span<const double> x) const { return jacobian(x).frobenius_sq(); }

  /// Directional derivative J_f(x) v.
  std::vector<double> directional_derivative(std::span<const double> x, std::span<const double> v) const {
    return matvec(jacobian(x), v);
  }

  /// FNV-1a hash of the kind and every parameter, used to prove the encoder stays frozen.
  std::uint64_t parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&](const void* p, std::size_t len) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < len; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    auto mix = [&](double v) { mix_bytes(&v, sizeof v); };
    auto mix_m = [&](const Matrix& m) {
      for (double v : m.data) mix(v);
    };
    const auto k = static_cast<std::uint64_t>(kind());
    mix_bytes(&k, sizeof k);
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, LinearMap>) {
            mix_m(m.a);
          } else if constexpr (std::is_same_v<M, QuadraticMap>) {
            mix_m(m.linear);
            for (const auto& q : m.quad) mix_m(q);
          } else if constexpr (std::is_same_v<M, SmoothNet>) {
            for (const auto& w : m.weights) mix_m(w);
            for (const auto& b : m.biases)
              for (double v : b) mix(v);
          } else if constexpr (std::is_same_v<M, AnisotropicMap>) {
            mix(m.kappa_t);
            mix(m.kappa_n);
            mix(m.width);
            mix(m.saturation);
            for (double v : m.reference) mix(v);
            for (const auto& comp : m.manifold->waves())
              for (const auto& w : comp) {
                mix(w.amplitude);
                mix(w.phase);
                for (double f : w.freq) mix(f);
              }
          } else {
            mix(static_cast<double>(m.dim));
          }
        },
        map_);
    return h;
  }

 private:
  void check_input(std::span<const double> x) const {
    if (kind() != EncoderKind::external && x.size() != in_dim())
      throw ConfigError("encoder: input dimension " + std::to_string(x.size()) + " != " + std::to_string(in_dim()));
  }

  Matrix analytic_jacobian(std::span<const double> x) const {
    return std::visit(
        [&](const auto& m) -> Matrix {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, ExternalTag>) {
            throw ConfigError("external encoder has no Jacobian");
          } else if constexpr (std::is_same_v<M, AnisotropicMap>) {
            return forward_mode_jacobian(m, x);
          } else {
            return m.jacobian(x);
          }
        },
        map_);
  }

  template <class M>
  static Matrix forward_mode_jacobian(const M& m, std::span<const double> x) {
    const auto n = m.in_dim(), d = m.out_dim();
    Matrix j(d, n);
    std::vector<Dual> xd(n), out(d);
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t i = 0; i < n; ++i) xd[i] = Dual(x[i], i == c ? 1.0 : 0.0);
      m.template apply<Dual>(xd, out);
      for (std::size_t r = 0; r < d; ++r) j(r, c) = out[r].d;
    }
    return j;
  }

  Map map_;
  JacobianMode mode_;
};

// ---------------------------------------------------------------------------
// Constructors

inline EncoderHandle make_linear(Matrix a) {
  if (a.rows == 0 || a.cols == 0) throw ConfigError("make_linear: empty matrix");
  return EncoderHandle(LinearMap{std::move(a)});
}

inline EncoderHandle make_quadratic(Matrix linear, std::vector<Matrix> quad) {
  if (linear.rows == 0 || linear.cols == 0) throw ConfigError("make_quadratic: empty linear part");
  if (quad.size() != linear.rows) throw ConfigError("make_quadratic: need one quadratic form per output");
  for (const auto& q : quad)
    if (q.rows != linear.cols || q.cols != linear.cols) throw ConfigError("make_quadratic: quadratic form shape");
  return EncoderHandle(QuadraticMap{std::move(linear), std::move(quad)});
}

/// Random fixed-weight tanh network. Weights ~ N(0, 1/fan_in), biases ~ N(0, 0.01).
inline EncoderHandle make_smooth_net(std::vector<std::size_t> widths, std::uint64_t seed,
                                     const std::string& activation = "tanh",
                                     Activation output_activation = Activation::identity) {
  if (activation != "tanh")
    throw ConfigError("make_smooth_net: activation '" + activation + "' is not C^2; only tanh is supported");
  if (widths.size() < 2) throw ConfigError("make_smooth_net: need at least input and output widths");
  for (auto w : widths)
    if (w == 0) throw ConfigError("make_smooth_net: zero width");
  SmoothNet net;
  net.widths = widths;
  net.output_activation = output_activation;
  Rng rng = make_stream(seed, 0x6E6574);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Matrix w(widths[l + 1], widths[l]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    for (auto& v : w.data) v = scale * std_normal(rng);
    std::vector<double> b(widths[l + 1]);
    for (auto& v : b) v = 0.1 * std_normal(rng);
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return EncoderHandle(std::move(net));
}

struct AnisotropicSpec {
  double kappa_t = 0.1;
  double kappa_n = 2.0;
  double width = 0.25;
  double saturation = 1.0;
  double max_normal_offset = std::numeric_limits<double>::infinity();
};

inline EncoderHandle make_anisotropic(std::shared_ptr<const testbed::ManifoldModel> manifold,
                                      const AnisotropicSpec& spec) {
  if (!manifold) throw ConfigError("make_anisotropic: manifold required");
  if (!(spec.kappa_t > 0.0) || !(spec.kappa_t <= spec.kappa_n))
    throw ConfigError("make_anisotropic: need 0 < kappa_t <= kappa_n");
  if (!(spec.width > 0.0)) throw ConfigError("make_anisotropic: width must be positive");
  if (!(spec.saturation > 0.0)) throw ConfigError("make_anisotropic: saturation must be positive");
  AnisotropicMap m;
  m.manifold = std::move(manifold);
  m.kappa_t = spec.kappa_t;
  m.kappa_n = spec.kappa_n;
  m.width = spec.width;
  m.saturation = spec.saturation;
  m.max_normal_offset = spec.max_normal_offset;
  const std::vector<double> origin(m.manifold->intrinsic_dim(), 0.0);
  m.reference = m.manifold->chart(origin);
  return EncoderHandle(std::move(m));
}

inline EncoderHandle make_external(std::size_t dim, std::string name = "external") {
  return EncoderHandle(ExternalTag{dim, std::move(name)});
}

// ---------------------------------------------------------------------------
// Jacobian energy

inline Matrix jacobian(const EncoderHandle& enc, std::span<const double> x) { return enc.jacobian(x); }
inline double jacobian_energy(const EncoderHandle& enc, std::span<const double> x) { return enc.jacobian_energy(x); }

inline constexpr double kBoundSafetyFactor = 1.25;

struct JacobianEnergyProfile {
  testbed::PointSet samples;
  std::vector<double> energy;
  double raw_max = 0.0;
  double b_hat = 0.0;  // raw_max * safety factor
};

/// Empirical sup of G over k draws from `sampler`, inflated by the safety factor.
inline JacobianEnergyProfile estimate_B(const EncoderHandle& enc,
                                        const std::function<testbed::PointSet(std::size_t, Rng&)>& sampler,
                                        std::size_t k, Rng& rng, double safety = kBoundSafetyFactor) {
  if (k < 1000) throw ConfigError("estimate_B: need k >= 1000 probe points");
  JacobianEnergyProfile p;
  p.samples = sampler(k, rng);
  p.energy.resize(p.samples.size());
  for (std::size_t i = 0; i < p.samples.size(); ++i) {
    p.energy[i] = enc.jacobian_energy(p.samples[i]);
    p.raw_max = std::max(p.raw_max, p.energy[i]);
  }
  p.b_hat = p.raw_max * safety;
  return p;
}

}  // namespace radet::enc
