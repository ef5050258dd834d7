#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "radet/core/errors.hpp"
#include "radet/core/rng.hpp"

namespace radet::shift {

enum class ProbeLawKind { gaussian, sphere };

/// Isotropic probe with E[delta] = 0 and E[delta delta^T] = (eps^2 / n) I_n.
struct ProbeLaw {
  double eps = 0.1;
  std::size_t dim = 1;
  ProbeLawKind law = ProbeLawKind::gaussian;

  ProbeLaw() = default;
  ProbeLaw(double e, std::size_t n, ProbeLawKind l = ProbeLawKind::gaussian) : eps(e), dim(n), law(l) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("ProbeLaw: eps must be finite and >= 0");
    if (dim == 0) throw ConfigError("ProbeLaw: dimension must be positive");
  }

  double coordinate_variance() const { return eps * eps / static_cast<double>(dim); }

  void draw(Rng& rng, std::span<double> out) const {
    if (law == ProbeLawKind::gaussian) {
      const double sd = eps / std::sqrt(static_cast<double>(dim));
      for (auto& v : out) v = sd * std_normal(rng);
      return;
    }
    double nrm = 0.0;
    do {
      nrm = 0.0;
      for (auto& v : out) {
        v = std_normal(rng);
        nrm += v * v;
      }
    } while (nrm == 0.0);
    const double scale = eps / std::sqrt(nrm);
    for (auto& v : out) v *= scale;
  }
};

}  // namespace radet::shift
