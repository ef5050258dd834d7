#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "radet/bound/side_bound.hpp"
#include "radet/core/errors.hpp"
#include "radet/core/json_util.hpp"
#include "radet/shift/shift.hpp"
#include "radet/testbed/manifold.hpp"

namespace radet::io {

// ---------------------------------------------------------------------------
// Files and directories

inline std::string default_output_dir() {
  const char* env = std::getenv("RADET_OUT_DIR");
  return (env && *env) ? std::string(env) : std::string("radet_out");
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// ---------------------------------------------------------------------------
// CSV

/// Round-trippable decimal text.
inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("csv: missing column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') throw IoError("csv: CR line ending on line " + std::to_string(lineno));
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) throw IoError("csv: wrong column count on line " + std::to_string(lineno));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw IoError("csv: missing header");
  return t;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(what + ": not a number: '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// ShiftCurve: epsilon,delta,stderr,ci_lo,ci_hi

inline constexpr const char* kShiftCurveHeader = "epsilon,delta,stderr,ci_lo,ci_hi";

inline std::string shift_curve_csv(const shift::ShiftCurve& c) {
  std::string out = std::string(kShiftCurveHeader) + "\n";
  for (const auto& r : c.rows)
    out += num(r.epsilon) + "," + num(r.delta) + "," + num(r.std_error) + "," + num(r.ci_lo) + "," + num(r.ci_hi) + "\n";
  return out;
}

inline shift::ShiftCurve shift_curve_from_csv(const std::string& text) {
  const auto t = parse_csv(text);
  std::string head;
  for (std::size_t i = 0; i < t.header.size(); ++i) head += (i ? "," : "") + t.header[i];
  if (head != kShiftCurveHeader) throw IoError("shift curve csv: header must be '" + std::string(kShiftCurveHeader) + "'");
  shift::ShiftCurve c;
  for (const auto& row : t.rows)
    c.rows.push_back({parse_double(row[0], "epsilon"), parse_double(row[1], "delta"), parse_double(row[2], "stderr"),
                      parse_double(row[3], "ci_lo"), parse_double(row[4], "ci_hi")});
  if (!c.rows.empty()) {
    for (std::size_t i = 1; i < c.rows.size(); ++i)
      if (c.rows[i].delta > c.rows[c.argmax].delta) c.argmax = i;
    c.interior_argmax = c.argmax > 0 && c.argmax + 1 < c.rows.size();
    c.eps_turn = c.rows[c.argmax].epsilon;
  }
  return c;
}

// ---------------------------------------------------------------------------
// BoundReport

inline constexpr const char* kBoundHeader =
    "lambda,m_hat,m_se,m_clamped,delta_hat,delta_se,b_hat,bound,empirical_gap,gap_se,margin,margin_se,"
    "sqrt_half_m_boot_se,g_ptheta,g_q,dv_holds,dv_holds_within_uncertainty,passes,eps,eps0";

inline std::string bound_report_csv(const bound::BoundReport& r) {
  std::string out = std::string(kBoundHeader) + "\n";
  auto b = [](bool v) { return std::string(v ? "1" : "0"); };
  for (const auto& x : r.rows)
    out += num(x.lambda) + "," + num(x.m_hat) + "," + num(x.m_se) + "," + b(x.m_clamped) + "," + num(x.delta_hat) + "," +
           num(x.delta_se) + "," + num(x.b_hat) + "," + num(x.bound_value) + "," + num(x.empirical_gap) + "," +
           num(x.gap_se) + "," + num(x.margin) + "," + num(x.margin_se) + "," + num(x.sqrt_half_m_boot_se) + "," +
           num(x.g_ptheta) + "," + num(x.g_q) + "," + b(x.dv_holds) + "," + b(x.dv_holds_within_uncertainty) + "," +
           b(x.passes) + "," + num(x.eps) + "," + num(x.eps0) + "\n";
  return out;
}

inline Json to_json(const bound::BoundRow& x) {
  return Json{{"lambda", x.lambda},
              {"m_hat", x.m_hat},
              {"m_se", x.m_se},
              {"m_clamped", x.m_clamped},
              {"delta_hat", x.delta_hat},
              {"delta_se", x.delta_se},
              {"b_hat", x.b_hat},
              {"bound", x.bound_value},
              {"empirical_gap", x.empirical_gap},
              {"gap_se", x.gap_se},
              {"margin", x.margin},
              {"margin_se", x.margin_se},
              {"sqrt_half_m_boot_se", x.sqrt_half_m_boot_se},
              {"g_ptheta", x.g_ptheta},
              {"g_q", x.g_q},
              {"dv_holds", x.dv_holds},
              {"dv_holds_within_uncertainty", x.dv_holds_within_uncertainty},
              {"passes", x.passes},
              {"eps", x.eps},
              {"eps0", x.eps0}};
}

inline Json to_json(const bound::BoundReport& r) {
  Json rows = Json::array();
  for (const auto& x : r.rows) rows.push_back(to_json(x));
  return Json{{"rows", rows},
              {"eps", r.eps},
              {"eps0", r.eps0},
              {"b_raw_max", r.b_raw_max},
              {"regime_ratio", r.regime_ratio},
              {"regime_confirmed", r.regime_confirmed},
              {"m_strictly_decreasing", r.m_strictly_decreasing},
              {"bound_non_decreasing", r.bound_non_decreasing},
              {"gap_spearman", r.gap_spearman},
              {"status", r.failed ? "FAILED" : "OK"},
              {"failed_rows", r.failed_rows}};
}

inline bound::BoundReport bound_report_from_json(const Json& j) {
  const std::string w = "bound report";
  require_known_keys(j,
                     {"rows", "eps", "eps0", "b_raw_max", "regime_ratio", "regime_confirmed", "m_strictly_decreasing",
                      "bound_non_decreasing", "gap_spearman", "status", "failed_rows"},
                     w);
  bound::BoundReport r;
  read_req(j, "eps", r.eps, w);
  read_req(j, "eps0", r.eps0, w);
  read_opt(j, "b_raw_max", r.b_raw_max, w);
  read_opt(j, "regime_ratio", r.regime_ratio, w);
  read_opt(j, "regime_confirmed", r.regime_confirmed, w);
  read_opt(j, "m_strictly_decreasing", r.m_strictly_decreasing, w);
  read_opt(j, "bound_non_decreasing", r.bound_non_decreasing, w);
  read_opt(j, "gap_spearman", r.gap_spearman, w);
  read_opt(j, "failed_rows", r.failed_rows, w);
  std::string status;
  read_req(j, "status", status, w);
  r.failed = status == "FAILED";
  for (const auto& x : j.at("rows")) {
    bound::BoundRow b;
    const std::string rw = w + ".rows";
    read_req(x, "lambda", b.lambda, rw);
    read_req(x, "m_hat", b.m_hat, rw);
    read_opt(x, "m_se", b.m_se, rw);
    read_opt(x, "m_clamped", b.m_clamped, rw);
    read_req(x, "delta_hat", b.delta_hat, rw);
    read_opt(x, "delta_se", b.delta_se, rw);
    read_req(x, "b_hat", b.b_hat, rw);
    read_req(x, "bound", b.bound_value, rw);
    read_req(x, "empirical_gap", b.empirical_gap, rw);
    read_opt(x, "gap_se", b.gap_se, rw);
    read_opt(x, "margin", b.margin, rw);
    read_opt(x, "margin_se", b.margin_se, rw);
    read_opt(x, "sqrt_half_m_boot_se", b.sqrt_half_m_boot_se, rw);
    read_opt(x, "g_ptheta", b.g_ptheta, rw);
    read_opt(x, "g_q", b.g_q, rw);
    read_opt(x, "dv_holds", b.dv_holds, rw);
    read_opt(x, "dv_holds_within_uncertainty", b.dv_holds_within_uncertainty, rw);
    read_opt(x, "passes", b.passes, rw);
    read_opt(x, "eps", b.eps, rw);
    read_opt(x, "eps0", b.eps0, rw);
    r.rows.push_back(b);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sample dumps: dim0,...,dim{n-1}

inline std::string points_csv(const testbed::PointSet& pts) {
  std::string out;
  for (std::size_t j = 0; j < pts.dim; ++j) out += (j ? ",dim" : "dim") + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.dim; ++j) out += (j ? "," : "") + num(pts[i][j]);
    out += "\n";
  }
  return out;
}

inline testbed::PointSet points_from_csv(const std::string& text) {
  const auto t = parse_csv(text);
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] != "dim" + std::to_string(j)) throw IoError("sample csv: header must be dim0,...,dim{n-1}");
  testbed::PointSet pts(t.rows.size(), t.header.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < pts.dim; ++j) pts[i][j] = parse_double(t.rows[i][j], "sample csv");
  return pts;
}

}  // namespace radet::io
