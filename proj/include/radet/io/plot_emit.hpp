#pragma once

#include <algorithm>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "radet/bound/side_bound.hpp"
#include "radet/core/errors.hpp"
#include "radet/io/reports.hpp"
#include "radet/shift/shift.hpp"

namespace radet::io {

struct SimilarityHistogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> real, fake;
};

/// Histogram of clean/perturbed cosine similarities per class over the data range.
inline SimilarityHistogram similarity_histogram(std::span<const double> sims, std::span<const int> labels,
                                                std::size_t bins = 40) {
  if (sims.size() != labels.size()) throw ConfigError("similarity_histogram: size mismatch");
  if (bins == 0) throw ConfigError("similarity_histogram: need at least one bin");
  SimilarityHistogram h;
  h.real.assign(bins, 0);
  h.fake.assign(bins, 0);
  if (sims.empty()) {
    h.edges.assign(bins + 1, 0.0);
    return h;
  }
  double lo = *std::min_element(sims.begin(), sims.end());
  double hi = *std::max_element(sims.begin(), sims.end());
  if (!(hi > lo)) {
    lo -= 0.5e-3;
    hi += 0.5e-3;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + width * static_cast<double>(b));
  h.edges.back() = hi;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    auto b = static_cast<std::size_t>((sims[i] - lo) / width);
    b = std::min(b, bins - 1);
    (labels[i] == 1 ? h.real : h.fake)[b] += 1;
  }
  return h;
}

inline std::string similarity_histogram_csv(const SimilarityHistogram& h) {
  std::string out = "bin_lo,bin_hi,count_real,count_fake\n";
  for (std::size_t b = 0; b < h.real.size(); ++b)
    out += num(h.edges[b]) + "," + num(h.edges[b + 1]) + "," + std::to_string(h.real[b]) + "," +
           std::to_string(h.fake[b]) + "\n";
  return out;
}

/// Small-eps differential shift against memorization level, from a bound sweep.
inline std::string memorization_csv(const bound::BoundReport& r) {
  std::string out = "lambda,delta,stderr,m_hat,bound\n";
  for (const auto& x : r.rows)
    out += num(x.lambda) + "," + num(x.empirical_gap) + "," + num(x.gap_se) + "," + num(x.m_hat) + "," +
           num(x.bound_value) + "\n";
  return out;
}

struct PlotInputs {
  std::optional<shift::ShiftCurve> curve;
  std::optional<bound::BoundReport> bound;
  std::optional<SimilarityHistogram> similarity;
};

inline constexpr const char* kPlotSimilarity = "fig2_similarity_hist.csv";
inline constexpr const char* kPlotShiftCurve = "fig6a_shift_curve.csv";
inline constexpr const char* kPlotMemorization = "fig6b_memorization.csv";

/// Writes one CSV per available figure analog; returns the written paths.
inline std::vector<std::string> plot_emit(const PlotInputs& in, const std::string& dir, std::ostream& warn = std::cerr) {
  const bool has_curve = in.curve && !in.curve->rows.empty();
  const bool has_bound = in.bound && !in.bound->rows.empty();
  const bool has_sim = in.similarity && !in.similarity->real.empty();
  std::vector<std::string> written;
  if (!has_curve && !has_bound && !has_sim) {
    warn << "warning: plot_emit: empty report, no plot data written\n";
    return written;
  }
  ensure_dir(dir);
  if (has_sim) {
    written.push_back(join_path(dir, kPlotSimilarity));
    write_text(written.back(), similarity_histogram_csv(*in.similarity));
  }
  if (has_curve) {
    written.push_back(join_path(dir, kPlotShiftCurve));
    write_text(written.back(), shift_curve_csv(*in.curve));
  }
  if (has_bound) {
    written.push_back(join_path(dir, kPlotMemorization));
    write_text(written.back(), memorization_csv(*in.bound));
  }
  return written;
}

}  // namespace radet::io
