#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/rng.hpp"
#include "radet/core/stats.hpp"
#include "radet/testbed/manifold.hpp"

namespace radet::testbed {

namespace detail {

/// log (1/N) sum_i N(x | c_i, sigma^2 I), log-sum-exp stabilised.
inline double log_isotropic_mixture(const PointSet& centers, double sigma, std::span<const double> x) {
  const std::size_t n = centers.dim;
  if (x.size() != n) throw ConfigError("log density: query dimension mismatch");
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> terms(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto c = centers[i];
    double d2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) d2 += (x[j] - c[j]) * (x[j] - c[j]);
    terms[i] = -d2 * inv2s2;
  }
  const double norm = -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * sigma * sigma) -
                      std::log(static_cast<double>(centers.size()));
  return log_sum_exp(terms) + norm;
}

inline void sample_isotropic_mixture(const PointSet& centers, double sigma, Rng& rng, std::span<double> out) {
  std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
  const auto c = centers[pick(rng)];
  for (std::size_t j = 0; j < centers.dim; ++j) out[j] = c[j] + sigma * std_normal(rng);
}

}  // namespace detail

/// Training-neighbourhood mixture: equal-weight N(x_i, eps0^2 I_n) over anchors.
class TubeMixture {
 public:
  TubeMixture(PointSet anchors, double eps0) : anchors_(std::move(anchors)), eps0_(eps0) {
    if (!(eps0_ > 0.0) || !std::isfinite(eps0_)) throw ConfigError("TubeMixture: eps0 must be positive");
    if (anchors_.empty()) throw ConfigError("TubeMixture: need at least one anchor");
  }

  const PointSet& anchors() const { return anchors_; }
  double eps0() const { return eps0_; }
  std::size_t dim() const { return anchors_.dim; }

  double logdensity(std::span<const double> x) const {
    return detail::log_isotropic_mixture(anchors_, eps0_, x);
  }

  PointSet sample(std::size_t k, Rng& rng) const {
    PointSet out(k, dim());
    for (std::size_t i = 0; i < k; ++i) detail::sample_isotropic_mixture(anchors_, eps0_, rng, out[i]);
    return out;
  }

 private:
  PointSet anchors_;
  double eps0_;
};

inline double tube_logdensity(const TubeMixture& tube, std::span<const double> x) { return tube.logdensity(x); }
inline PointSet tube_sample(const TubeMixture& tube, std::size_t k, Rng& rng) { return tube.sample(k, rng); }

struct GenSpec {
  double lambda = 1.0;       // memorization weight in [0, 1]
  double sigma_mem = 0.05;   // anchor-centred component scale
  double sigma_broad = 1.0;  // broad component scale
  std::vector<double> broad_center;  // defaults to the anchor mean when empty
};

/// Density-known generator: lambda * mem + (1 - lambda) * broad, where mem is
/// an isotropic mixture around the training anchors and broad is one wide
/// Gaussian. Larger lambda means more memorization.
class GenModel {
 public:
  GenModel(PointSet anchors, GenSpec spec) : anchors_(std::move(anchors)), spec_(std::move(spec)) {
    if (anchors_.empty()) throw ConfigError("GenModel: need at least one anchor");
    if (!(spec_.lambda >= 0.0 && spec_.lambda <= 1.0)) throw ConfigError("GenModel: lambda must lie in [0, 1]");
    if (!(spec_.sigma_mem > 0.0) || !(spec_.sigma_broad > 0.0))
      throw ConfigError("GenModel: component scales must be positive");
    if (spec_.broad_center.empty()) {
      spec_.broad_center.assign(anchors_.dim, 0.0);
      for (std::size_t i = 0; i < anchors_.size(); ++i)
        for (std::size_t j = 0; j < anchors_.dim; ++j) spec_.broad_center[j] += anchors_[i][j];
      for (auto& c : spec_.broad_center) c /= static_cast<double>(anchors_.size());
    }
    if (spec_.broad_center.size() != anchors_.dim) throw ConfigError("GenModel: broad centre dimension mismatch");
    broad_.push_back(spec_.broad_center);
  }

  const GenSpec& spec() const { return spec_; }
  double lambda() const { return spec_.lambda; }
  std::size_t dim() const { return anchors_.dim; }
  const PointSet& anchors() const { return anchors_; }

  double mem_logdensity(std::span<const double> x) const {
    return detail::log_isotropic_mixture(anchors_, spec_.sigma_mem, x);
  }
  double broad_logdensity(std::span<const double> x) const {
    return detail::log_isotropic_mixture(broad_, spec_.sigma_broad, x);
  }

  double logdensity(std::span<const double> x) const {
    const double lam = spec_.lambda;
    if (lam == 1.0) return mem_logdensity(x);
    if (lam == 0.0) return broad_logdensity(x);
    const double terms[2] = {std::log(lam) + mem_logdensity(x), std::log1p(-lam) + broad_logdensity(x)};
    return log_sum_exp(terms);
  }

  PointSet sample(std::size_t k, Rng& rng) const {
    PointSet out(k, dim());
    for (std::size_t i = 0; i < k; ++i) {
      if (uniform01(rng) < spec_.lambda)
        detail::sample_isotropic_mixture(anchors_, spec_.sigma_mem, rng, out[i]);
      else
        detail::sample_isotropic_mixture(broad_, spec_.sigma_broad, rng, out[i]);
    }
    return out;
  }

 private:
  PointSet anchors_;
  GenSpec spec_;
  PointSet broad_;
};

inline double gen_logdensity(const GenModel& gen, std::span<const double> x) { return gen.logdensity(x); }
inline PointSet gen_sample(const GenModel& gen, std::size_t k, Rng& rng) { return gen.sample(k, rng); }

}  // namespace radet::testbed
