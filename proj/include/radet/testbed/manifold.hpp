#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/matrix.hpp"
#include "radet/core/rng.hpp"

namespace radet::testbed {

/// Flat storage for k points of a fixed dimension.
struct PointSet {
  std::size_t dim = 0;
  std::vector<double> data;

  PointSet() = default;
  PointSet(std::size_t count, std::size_t d) : dim(d), data(count * d, 0.0) {}

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  bool empty() const { return size() == 0; }
  std::span<double> operator[](std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> operator[](std::size_t i) const { return {data.data() + i * dim, dim}; }

  void push_back(std::span<const double> p) {
    if (dim == 0) dim = p.size();
    if (p.size() != dim) throw ConfigError("PointSet::push_back: dimension mismatch");
    data.insert(data.end(), p.begin(), p.end());
  }

  bool operator==(const PointSet&) const = default;
};

/// One term a * sin(<freq, t> + phase) of a graph component.
struct Wave {
  double amplitude = 0.0;
  double phase = 0.0;
  std::vector<double> freq;  // length m
};

struct ManifoldSpec {
  std::size_t intrinsic_dim = 1;
  std::size_t ambient_dim = 4;
  std::size_t num_waves = 3;   // per graph component, for random coefficients
  double coef_scale = 0.5;     // amplitudes ~ U(-coef_scale, coef_scale)
  double freq_scale = 1.0;     // frequencies ~ N(0, freq_scale^2)
  double box = 2.5;            // latent law truncated to [-box, box]^m
  std::uint64_t seed = 7;
  /// When non-empty, replaces the random coefficients: one wave list per
  /// graph component (size n - m).
  std::vector<std::vector<Wave>> explicit_waves;
  bool use_explicit = false;
};

inline constexpr double kMaxAmplitude = 10.0;
inline constexpr double kMaxFrequency = 10.0;

/// Graph-type embedded manifold t -> (t, g(t)) with g a finite sum of sines.
/// Immutable after construction.
class ManifoldModel {
 public:
  explicit ManifoldModel(ManifoldSpec spec) : spec_(std::move(spec)) {
    const auto m = spec_.intrinsic_dim;
    const auto n = spec_.ambient_dim;
    if (m < 1 || m >= n || n > 64)
      throw ConfigError("make_manifold: need 1 <= m < n <= 64 (got m=" + std::to_string(m) +
                        ", n=" + std::to_string(n) + ")");
    if (!(spec_.box > 0.0)) throw ConfigError("make_manifold: box must be positive");
    if (spec_.use_explicit) {
      if (spec_.explicit_waves.size() != n - m)
        throw ConfigError("make_manifold: explicit waves need one list per graph component");
      waves_ = spec_.explicit_waves;
    } else {
      if (!(spec_.coef_scale >= 0.0) || spec_.coef_scale > kMaxAmplitude)
        throw ConfigError("make_manifold: coef_scale out of bounds");
      Rng rng = make_stream(spec_.seed, 0x6D616E69);
      waves_.resize(n - m);
      for (auto& comp : waves_) {
        comp.resize(spec_.num_waves);
        for (auto& w : comp) {
          w.amplitude = spec_.coef_scale * (2.0 * uniform01(rng) - 1.0);
          w.phase = 2.0 * std::numbers::pi * uniform01(rng);
          w.freq.resize(m);
          for (auto& f : w.freq) f = spec_.freq_scale * std_normal(rng);
        }
      }
    }
    for (const auto& comp : waves_)
      for (const auto& w : comp) {
        if (w.freq.size() != m) throw ConfigError("make_manifold: wave frequency has wrong length");
        if (!std::isfinite(w.amplitude) || std::abs(w.amplitude) > kMaxAmplitude)
          throw ConfigError("make_manifold: amplitude out of bounds");
        for (double f : w.freq)
          if (!std::isfinite(f) || std::abs(f) > kMaxFrequency)
            throw ConfigError("make_manifold: frequency out of bounds");
      }
  }

  static ManifoldModel flat(std::size_t m, std::size_t n) {
    ManifoldSpec s;
    s.intrinsic_dim = m;
    s.ambient_dim = n;
    s.use_explicit = true;
    s.explicit_waves.assign(n - m, {});
    return ManifoldModel(s);
  }

  /// m = 1, n = 2, g(t) = sin(t).
  static ManifoldModel sine() {
    ManifoldSpec s;
    s.intrinsic_dim = 1;
    s.ambient_dim = 2;
    s.use_explicit = true;
    s.explicit_waves = {{Wave{1.0, 0.0, {1.0}}}};
    return ManifoldModel(s);
  }

  const ManifoldSpec& spec() const { return spec_; }
  std::size_t intrinsic_dim() const { return spec_.intrinsic_dim; }
  std::size_t ambient_dim() const { return spec_.ambient_dim; }
  std::size_t codim() const { return spec_.ambient_dim - spec_.intrinsic_dim; }
  const std::vector<std::vector<Wave>>& waves() const { return waves_; }

  /// g(t), templated on the scalar so it can be differentiated exactly.
  template <class T>
  void graph(std::span<const T> t, std::span<T> out) const {
    using std::sin;
    for (std::size_t k = 0; k < waves_.size(); ++k) {
      T acc = T(0.0);
      for (const auto& w : waves_[k]) {
        T arg = T(w.phase);
        for (std::size_t j = 0; j < t.size(); ++j) arg += T(w.freq[j]) * t[j];
        acc += T(w.amplitude) * sin(arg);
      }
      out[k] = acc;
    }
  }

  /// Dg(t): (n - m) x m, row k holds d g_k / d t.
  template <class T>
  void graph_jacobian(std::span<const T> t, std::vector<T>& out) const {
    using std::cos;
    const auto m = intrinsic_dim();
    out.assign(codim() * m, T(0.0));
    for (std::size_t k = 0; k < waves_.size(); ++k)
      for (const auto& w : waves_[k]) {
        T arg = T(w.phase);
        for (std::size_t j = 0; j < m; ++j) arg += T(w.freq[j]) * t[j];
        const T c = T(w.amplitude) * cos(arg);
        for (std::size_t j = 0; j < m; ++j) out[k * m + j] += c * T(w.freq[j]);
      }
  }

  std::vector<double> chart(std::span<const double> t) const {
    if (t.size() != intrinsic_dim()) throw ConfigError("chart: latent dimension mismatch");
    std::vector<double> x(ambient_dim());
    std::copy(t.begin(), t.end(), x.begin());
    graph<double>(t, std::span<double>(x).subspan(intrinsic_dim()));
    return x;
  }

  std::vector<double> coords(std::span<const double> x) const {
    return {x.begin(), x.begin() + static_cast<std::ptrdiff_t>(intrinsic_dim())};
  }

  /// Max-abs residual of the graph equation x_b = g(x_a).
  double chart_residual(std::span<const double> x) const {
    if (x.size() != ambient_dim()) throw ConfigError("chart_residual: dimension mismatch");
    std::vector<double> g(codim());
    graph<double>(x.first(intrinsic_dim()), g);
    double r = 0.0;
    for (std::size_t k = 0; k < codim(); ++k) r = std::max(r, std::abs(x[intrinsic_dim() + k] - g[k]));
    return r;
  }

  /// Orthonormal tangent basis at chart point t, as an n x m matrix.
  Matrix tangent_basis(std::span<const double> t) const {
    const auto m = intrinsic_dim(), n = ambient_dim();
    std::vector<double> dg;
    graph_jacobian<double>(t, dg);
    Matrix cols(n, m);
    for (std::size_t j = 0; j < m; ++j) {
      cols(j, j) = 1.0;
      for (std::size_t k = 0; k < codim(); ++k) cols(m + k, j) = dg[k * m + j];
    }
    return gram_schmidt(cols);
  }

  /// Orthonormal normal basis, n x (n - m). Spans the columns of [-Dg^T; I].
  Matrix normal_basis(std::span<const double> t) const {
    const auto m = intrinsic_dim(), n = ambient_dim();
    std::vector<double> dg;
    graph_jacobian<double>(t, dg);
    Matrix cols(n, codim());
    for (std::size_t k = 0; k < codim(); ++k) {
      for (std::size_t j = 0; j < m; ++j) cols(j, k) = -dg[k * m + j];
      cols(m + k, k) = 1.0;
    }
    return gram_schmidt(cols);
  }

  std::vector<double> sample_latent(Rng& rng) const {
    std::vector<double> t(intrinsic_dim());
    for (auto& v : t) {
      double z;
      do {
        z = std_normal(rng);
      } while (std::abs(z) > spec_.box);
      v = z;
    }
    return t;
  }

  PointSet sample_real(std::size_t k, Rng& rng) const {
    PointSet out(k, ambient_dim());
    for (std::size_t i = 0; i < k; ++i) {
      const auto t = sample_latent(rng);
      const auto x = chart(t);
      std::copy(x.begin(), x.end(), out[i].begin());
    }
    return out;
  }

 private:
  static Matrix gram_schmidt(Matrix cols) {
    for (std::size_t j = 0; j < cols.cols; ++j) {
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t p = 0; p < j; ++p) {
          double dot = 0.0;
          for (std::size_t i = 0; i < cols.rows; ++i) dot += cols(i, j) * cols(i, p);
          for (std::size_t i = 0; i < cols.rows; ++i) cols(i, j) -= dot * cols(i, p);
        }
      double nrm = 0.0;
      for (std::size_t i = 0; i < cols.rows; ++i) nrm += cols(i, j) * cols(i, j);
      nrm = std::sqrt(nrm);
      for (std::size_t i = 0; i < cols.rows; ++i) cols(i, j) /= nrm;
    }
    return cols;
  }

  ManifoldSpec spec_;
  std::vector<std::vector<Wave>> waves_;
};

inline ManifoldModel make_manifold(const ManifoldSpec& spec) { return ManifoldModel(spec); }

inline PointSet sample_real(const ManifoldModel& model, std::size_t k, Rng& rng) {
  return model.sample_real(k, rng);
}

/// The generator's training set D: N_tr anchors drawn from the real law.
struct TrainingSet {
  PointSet anchors;
  std::size_t size() const { return anchors.size(); }
};

inline TrainingSet make_training_set(const ManifoldModel& model, std::size_t n_tr, Rng& rng) {
  if (n_tr < 1) throw ConfigError("make_training_set: need at least one anchor");
  return TrainingSet{model.sample_real(n_tr, rng)};
}

}  // namespace radet::testbed
