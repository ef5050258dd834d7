#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/json_util.hpp"
#include "radet/core/parallel.hpp"
#include "radet/det/detector.hpp"
#include "radet/det/train.hpp"
#include "radet/eval/degrade.hpp"
#include "radet/eval/metrics.hpp"

namespace radet::eval {

using det::Branch;
using det::Detector;
using det::ImageSet;
using det::kNumBranches;

struct Degradation {
  enum class Kind { none, blur, jpeg };
  Kind kind = Kind::none;
  double strength = 0.0;  // sigma for blur, QF for jpeg

  static Degradation identity() { return {}; }
  static Degradation blur(double sigma) { return {Kind::blur, sigma}; }
  static Degradation jpeg(int qf) { return {Kind::jpeg, static_cast<double>(qf)}; }

  std::string name() const {
    switch (kind) {
      case Kind::blur: return "blur";
      case Kind::jpeg: return "jpeg";
      default: return "none";
    }
  }

  Image apply(const Image& img) const {
    switch (kind) {
      case Kind::blur: return gaussian_blur(img, strength);
      case Kind::jpeg: return jpeg_like(img, static_cast<int>(strength));
      default: return img;
    }
  }
};

struct RobustnessGrid {
  std::vector<double> blur_sigmas = {0.8, 1.0, 1.5};
  std::vector<int> jpeg_qfs = {95, 90, 85};
  bool include_baseline = true;

  std::vector<Degradation> degradations() const {
    std::vector<Degradation> out;
    if (include_baseline) out.push_back(Degradation::identity());
    for (double s : blur_sigmas) {
      if (!(s > 0.0)) throw ConfigError("robustness grid: blur sigma must be > 0");
      out.push_back(Degradation::blur(s));
    }
    for (int q : jpeg_qfs) {
      if (q < 1 || q > 100) throw ConfigError("robustness grid: QF must be in [1,100]");
      out.push_back(Degradation::jpeg(q));
    }
    return out;
  }
};

struct SourceRow {
  std::string source;
  std::size_t n = 0;
  double acc = 0.0;  // percent
  double ap = 0.0;   // percent
};

struct DegradationRow {
  std::string kind;
  double strength = 0.0;
  double acc = 0.0;
  double ap = 0.0;
  /// AP (percent) of each branch logit alone; NaN for disabled branches.
  std::array<double, kNumBranches> branch_ap{};
};

struct EvalReport {
  std::vector<SourceRow> sources;
  double mean_acc = 0.0;
  double mean_ap = 0.0;
  std::vector<DegradationRow> degradations;
  bool empty() const { return sources.empty() && degradations.empty(); }
};

struct Scored {
  std::vector<double> prob;
  std::array<std::vector<double>, kNumBranches> branch_logit;
};

inline Scored score_all(const Detector& model, const ImageSet& data, const Degradation& deg, unsigned threads) {
  det::check_labels(data.labels);
  if (data.size() != data.labels.size()) throw ConfigError("evaluate: images/labels size mismatch");
  Scored s;
  s.prob.resize(data.size());
  for (auto& b : s.branch_logit) b.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto out = model.logits(deg.apply(data.images[i]));
    s.prob[i] = out.probability();
    for (std::size_t b = 0; b < kNumBranches; ++b) s.branch_logit[b][i] = out.logit[b];
  });
  return s;
}

inline EvalReport evaluate(const Detector& model, const std::vector<std::pair<std::string, ImageSet>>& datasets,
                           unsigned threads = 1) {
  EvalReport r;
  for (const auto& [name, data] : datasets) {
    if (data.size() == 0) throw ConfigError("evaluate: dataset '" + name + "' is empty");
    const auto s = score_all(model, data, Degradation::identity(), threads);
    SourceRow row;
    row.source = name;
    row.n = data.size();
    row.acc = 100.0 * accuracy(s.prob, data.labels);
    row.ap = 100.0 * average_precision(s.prob, data.labels);
    r.sources.push_back(row);
  }
  if (!r.sources.empty()) {
    for (const auto& row : r.sources) {
      r.mean_acc += row.acc;
      r.mean_ap += row.ap;
    }
    r.mean_acc /= static_cast<double>(r.sources.size());
    r.mean_ap /= static_cast<double>(r.sources.size());
  }
  return r;
}

inline DegradationRow degradation_row(const Detector& model, const ImageSet& data, const Degradation& deg,
                                      unsigned threads) {
  const auto s = score_all(model, data, deg, threads);
  DegradationRow row;
  row.kind = deg.name();
  row.strength = deg.strength;
  row.acc = 100.0 * accuracy(s.prob, data.labels);
  row.ap = 100.0 * average_precision(s.prob, data.labels);
  for (std::size_t b = 0; b < kNumBranches; ++b)
    row.branch_ap[b] = model.config().enabled(static_cast<Branch>(b))
                           ? 100.0 * average_precision(s.branch_logit[b], data.labels)
                           : std::numeric_limits<double>::quiet_NaN();
  return row;
}

inline EvalReport robustness_sweep(const Detector& model, const ImageSet& data, const RobustnessGrid& grid = {},
                                   unsigned threads = 1) {
  if (data.size() == 0) throw ConfigError("robustness_sweep: empty dataset");
  EvalReport r;
  for (const auto& deg : grid.degradations()) r.degradations.push_back(degradation_row(model, data, deg, threads));
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string sources_csv(const EvalReport& r) {
  std::string out = "source,n,acc,ap\n";
  for (const auto& row : r.sources)
    out += row.source + "," + std::to_string(row.n) + "," + fmt_num(row.acc) + "," + fmt_num(row.ap) + "\n";
  if (!r.sources.empty()) out += "mean,," + fmt_num(r.mean_acc) + "," + fmt_num(r.mean_ap) + "\n";
  return out;
}

inline std::string degradations_csv(const EvalReport& r) {
  std::string out = "kind,strength,acc,ap,ap_sem,ap_dist,ap_diff,ap_res\n";
  for (const auto& row : r.degradations) {
    out += row.kind + "," + fmt_num(row.strength) + "," + fmt_num(row.acc) + "," + fmt_num(row.ap);
    for (double v : row.branch_ap) out += "," + fmt_num(v);
    out += "\n";
  }
  return out;
}

inline Json to_json(const EvalReport& r) {
  Json j;
  j["sources"] = Json::array();
  for (const auto& row : r.sources) j["sources"].push_back({{"source", row.source}, {"n", row.n}, {"acc", row.acc}, {"ap", row.ap}});
  j["mean_acc"] = r.mean_acc;
  j["mean_ap"] = r.mean_ap;
  j["degradations"] = Json::array();
  for (const auto& row : r.degradations) {
    Json b = Json::object();
    for (std::size_t k = 0; k < kNumBranches; ++k)
      b[det::kBranchNames[k]] = std::isnan(row.branch_ap[k]) ? Json(nullptr) : Json(row.branch_ap[k]);
    j["degradations"].push_back(
        {{"kind", row.kind}, {"strength", row.strength}, {"acc", row.acc}, {"ap", row.ap}, {"branch_ap", b}});
  }
  return j;
}

inline EvalReport eval_report_from_json(const Json& j) {
  require_known_keys(j, {"sources", "mean_acc", "mean_ap", "degradations"}, "eval report");
  EvalReport r;
  read_opt(j, "mean_acc", r.mean_acc, "eval report");
  read_opt(j, "mean_ap", r.mean_ap, "eval report");
  if (j.contains("sources"))
    for (const auto& s : j.at("sources")) {
      SourceRow row;
      read_req(s, "source", row.source, "eval report.sources");
      read_req(s, "n", row.n, "eval report.sources");
      read_req(s, "acc", row.acc, "eval report.sources");
      read_req(s, "ap", row.ap, "eval report.sources");
      r.sources.push_back(row);
    }
  if (j.contains("degradations"))
    for (const auto& d : j.at("degradations")) {
      DegradationRow row;
      read_req(d, "kind", row.kind, "eval report.degradations");
      read_req(d, "strength", row.strength, "eval report.degradations");
      read_req(d, "acc", row.acc, "eval report.degradations");
      read_req(d, "ap", row.ap, "eval report.degradations");
      const auto& b = d.at("branch_ap");
      for (std::size_t k = 0; k < kNumBranches; ++k) {
        const auto& v = b.at(det::kBranchNames[k]);
        row.branch_ap[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      }
      r.degradations.push_back(row);
    }
  return r;
}

}  // namespace radet::eval
