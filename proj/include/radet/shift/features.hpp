#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "radet/core/errors.hpp"

namespace radet::shift {

// Discrepancy features between a clean embedding e and its perturbed
// counterpart e'. Embeddings are used raw (no normalisation).

inline double cosine_sim(std::span<const double> e, std::span<const double> ep) {
  if (e.size() != ep.size()) throw ConfigError("cosine_sim: dimension mismatch");
  double dot = 0.0, ne = 0.0, np = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    dot += e[i] * ep[i];
    ne += e[i] * e[i];
    np += ep[i] * ep[i];
  }
  if (ne == 0.0 || np == 0.0) throw DomainError("cosine_sim: zero-norm embedding");
  const double c = dot / (std::sqrt(ne) * std::sqrt(np));
  return std::clamp(c, -1.0, 1.0);
}

inline std::vector<double> diff_vector(std::span<const double> e, std::span<const double> ep) {
  if (e.size() != ep.size()) throw ConfigError("diff_vector: dimension mismatch");
  std::vector<double> d(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) d[i] = e[i] - ep[i];
  return d;
}

inline double l2_distance(std::span<const double> e, std::span<const double> ep) {
  if (e.size() != ep.size()) throw ConfigError("l2_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) s += (e[i] - ep[i]) * (e[i] - ep[i]);
  return std::sqrt(s);
}

/// Diagonal-restricted covariance approximation over a batch of B pairs
/// (rows of `batch_e` / `batch_ep`, each of length D):
///   (1/D) sum_j (1/B) sum_b (e_bj - mean_j)(e'_bj - mean'_j).
/// Population convention (divide by B).
inline double dca(std::span<const std::vector<double>> batch_e, std::span<const std::vector<double>> batch_ep) {
  const std::size_t b = batch_e.size();
  if (b < 2) throw DomainError("dca: batch size must be >= 2");
  if (batch_ep.size() != b) throw ConfigError("dca: batch size mismatch");
  const std::size_t d = batch_e[0].size();
  if (d == 0) throw ConfigError("dca: empty embeddings");
  std::vector<double> me(d, 0.0), mp(d, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (batch_e[i].size() != d || batch_ep[i].size() != d) throw ConfigError("dca: embedding dimension mismatch");
    for (std::size_t j = 0; j < d; ++j) {
      me[j] += batch_e[i][j];
      mp[j] += batch_ep[i][j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    me[j] /= static_cast<double>(b);
    mp[j] /= static_cast<double>(b);
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double cov = 0.0;
    for (std::size_t i = 0; i < b; ++i) cov += (batch_e[i][j] - me[j]) * (batch_ep[i][j] - mp[j]);
    acc += cov / static_cast<double>(b);
  }
  return acc / static_cast<double>(d);
}

}  // namespace radet::shift
