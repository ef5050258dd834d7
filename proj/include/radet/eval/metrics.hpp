#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "radet/core/errors.hpp"

namespace radet::eval {

/// Fraction correct; a score equal to the threshold is predicted positive.
inline double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  if (scores.empty() || scores.size() != labels.size()) throw ConfigError("accuracy: empty or mismatched input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ConfigError("accuracy: labels must be 0 or 1");
    const int pred = scores[i] >= threshold ? 1 : 0;
    correct += pred == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

enum class TieOrder { stable, best, worst };

struct ApResult {
  double ap = 0.0;
  double ap_best = 0.0;   // positives first within tied scores
  double ap_worst = 0.0;  // positives last within tied scores
  bool has_ties = false;
};

namespace detail {

inline double ap_from_order(std::span<const int> labels, const std::vector<std::size_t>& order) {
  double sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r)
    if (labels[order[r]] == 1) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(r + 1);
    }
  return sum / static_cast<double>(tp);
}

inline std::vector<std::size_t> ranking(std::span<const double> scores, std::span<const int> labels, TieOrder tie) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (tie == TieOrder::best) return labels[a] > labels[b];
    if (tie == TieOrder::worst) return labels[a] < labels[b];
    return false;
  });
  return idx;
}

inline void check(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("average_precision: size mismatch");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError("average_precision: labels must be 0 or 1");
    pos += y == 1;
  }
  if (pos == 0) throw DomainError("average_precision: no positive labels");
}

}  // namespace detail

/// AP as the step integral of precision over recall, one step per distinct
/// score threshold, so tied scores are scored as a group and input order never
/// matters. The best/worst tie orderings are reported alongside.
inline ApResult average_precision_detail(std::span<const double> scores, std::span<const int> labels) {
  detail::check(scores, labels);
  ApResult r;
  const auto order = detail::ranking(scores, labels, TieOrder::stable);
  std::size_t tp = 0, pos = 0;
  for (int y : labels) pos += y == 1;
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    std::size_t end = k, group_tp = 0;
    while (end < order.size() && scores[order[end]] == scores[order[k]]) group_tp += labels[order[end++]] == 1;
    tp += group_tp;
    sum += static_cast<double>(group_tp) * static_cast<double>(tp) / static_cast<double>(end);
    k = end;
  }
  r.ap = sum / static_cast<double>(pos);
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  r.has_ties = std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
  if (r.has_ties) {
    r.ap_best = detail::ap_from_order(labels, detail::ranking(scores, labels, TieOrder::best));
    r.ap_worst = detail::ap_from_order(labels, detail::ranking(scores, labels, TieOrder::worst));
  } else {
    r.ap_best = r.ap_worst = r.ap;
  }
  return r;
}

inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  return average_precision_detail(scores, labels).ap;
}

/// Interpolated AP: precision replaced by its running maximum from the right.
inline double interpolated_average_precision(std::span<const double> scores, std::span<const int> labels) {
  detail::check(scores, labels);
  const auto order = detail::ranking(scores, labels, TieOrder::stable);
  std::vector<double> prec(order.size());
  std::vector<bool> is_pos(order.size());
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    is_pos[r] = labels[order[r]] == 1;
    tp += is_pos[r];
    prec[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  for (std::size_t r = order.size(); r-- > 1;) prec[r - 1] = std::max(prec[r - 1], prec[r]);
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r)
    if (is_pos[r]) sum += prec[r];
  return sum / static_cast<double>(tp);
}

}  // namespace radet::eval
