#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/parallel.hpp"
#include "radet/core/rng.hpp"
#include "radet/core/stats.hpp"
#include "radet/encoder/encoder.hpp"
#include "radet/shift/probe.hpp"
#include "radet/testbed/densities.hpp"
#include "radet/testbed/manifold.hpp"

namespace radet::shift {

using testbed::PointSet;

/// Monte-Carlo estimate of Shift_eps(x) = E_delta |f(x + delta) - f(x)|^2.
struct ShiftEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
};

inline void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite encoder output");
}

inline ShiftEstimate shift_mc(const enc::EncoderHandle& enc, std::span<const double> x, const ProbeLaw& probe,
                              std::size_t k, Rng& rng) {
  if (k < 100) throw ConfigError("shift_mc: need k >= 100 probe draws");
  if (probe.dim != x.size()) throw ConfigError("shift_mc: probe dimension mismatch");
  const auto fx = enc.eval(x);
  check_finite(fx, "shift_mc");
  std::vector<double> delta(x.size()), xp(x.size()), fp(fx.size()), vals(k);
  for (std::size_t s = 0; s < k; ++s) {
    probe.draw(rng, delta);
    for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] + delta[i];
    enc.eval(xp, fp);
    double d2 = 0.0;
    for (std::size_t i = 0; i < fp.size(); ++i) d2 += (fp[i] - fx[i]) * (fp[i] - fx[i]);
    if (!std::isfinite(d2)) throw NumericError("shift_mc: non-finite encoder output");
    vals[s] = d2;
  }
  const auto est = summarize(vals);
  return {est.mean, est.std_error, k};
}

/// Leading-order value (eps^2 / n) G(x).
inline double leading_shift(const enc::EncoderHandle& enc, std::span<const double> x, double eps) {
  return eps * eps / static_cast<double>(x.size()) * enc.jacobian_energy(x);
}

struct ExpansionRow {
  double eps = 0.0;
  double shift = 0.0;     // estimated Shift_eps(x)
  double leading = 0.0;   // (eps^2 / n) G(x)
  double residual = 0.0;  // |Shift - leading|
  double residual_stderr = 0.0;
};

struct ExpansionReport {
  std::vector<ExpansionRow> rows;
  double slope = std::numeric_limits<double>::quiet_NaN();  // log-log slope of residual vs eps
  std::size_t fitted_points = 0;
};

/// Residual of the small-noise expansion Shift = (eps^2/n) G + O(eps^4).
///
/// The residual is estimated per draw as
///   (|f(x+d) - f(x)|^2 + |f(x-d) - f(x)|^2) / 2 - |J d|^2,
/// whose mean is exactly Shift_eps(x) - (eps^2/n) G(x) because
/// E[|J d|^2] = (eps^2/n) |J|_F^2. Pairing each draw with its mirror and with
/// the exact Jacobian term removes the O(eps^2) and O(eps^3) noise, which
/// would otherwise swamp an O(eps^4) signal at eps = 1e-3.
inline ExpansionReport expansion_residual(const enc::EncoderHandle& enc, std::span<const double> x,
                                          std::span<const double> eps_grid, std::size_t k, Rng& rng,
                                          ProbeLawKind law = ProbeLawKind::gaussian, double fit_max_eps = 0.0) {
  const auto n = x.size();
  const auto fx = enc.eval(x);
  const auto jac = enc.jacobian(x);
  const double g = jac.frobenius_sq();
  ExpansionReport rep;
  std::vector<double> lx, ly;
  std::vector<double> delta(n), xp(n), xm(n), fp(fx.size()), fm(fx.size()), vals, shifts;
  for (double eps : eps_grid) {
    ExpansionRow row;
    row.eps = eps;
    row.leading = eps * eps / static_cast<double>(n) * g;
    if (eps == 0.0) {
      rep.rows.push_back(row);
      continue;
    }
    const ProbeLaw probe(eps, n, law);
    vals.assign(k, 0.0);
    shifts.assign(k, 0.0);
    for (std::size_t s = 0; s < k; ++s) {
      probe.draw(rng, delta);
      for (std::size_t i = 0; i < n; ++i) {
        xp[i] = x[i] + delta[i];
        xm[i] = x[i] - delta[i];
      }
      enc.eval(xp, fp);
      enc.eval(xm, fm);
      double sp = 0.0, sm = 0.0;
      for (std::size_t i = 0; i < fx.size(); ++i) {
        sp += (fp[i] - fx[i]) * (fp[i] - fx[i]);
        sm += (fm[i] - fx[i]) * (fm[i] - fx[i]);
      }
      const auto jd = matvec(jac, delta);
      double lin = 0.0;
      for (double v : jd) lin += v * v;
      shifts[s] = 0.5 * (sp + sm);
      vals[s] = shifts[s] - lin;
    }
    const auto r = summarize(vals);
    row.shift = summarize(shifts).mean;
    row.residual = std::abs(r.mean);
    row.residual_stderr = r.std_error;
    rep.rows.push_back(row);
    if ((fit_max_eps <= 0.0 || eps <= fit_max_eps) && row.residual > 0.0) {
      lx.push_back(std::log(eps));
      ly.push_back(std::log(row.residual));
    }
  }
  rep.fitted_points = lx.size();
  if (lx.size() >= 2) rep.slope = ols_slope(lx, ly);
  return rep;
}

/// Difference of mean Shift between two populations, with pooled stderr.
struct DifferentialShift {
  double delta = 0.0;
  double std_error = 0.0;
  double mean_gen = 0.0;
  double mean_real = 0.0;
  std::vector<double> per_point_gen;
  std::vector<double> per_point_real;

  double ci_lo() const { return delta - 1.959963984540054 * std_error; }
  double ci_hi() const { return delta + 1.959963984540054 * std_error; }
};

inline std::vector<double> per_point_shift(const enc::EncoderHandle& enc, const PointSet& pts, const ProbeLaw& probe,
                                           std::size_t k, std::uint64_t seed, std::uint64_t stream_base,
                                           unsigned threads) {
  std::vector<double> out(pts.size());
  parallel_for(pts.size(), threads, [&](std::size_t i) {
    Rng rng = make_stream(seed, stream_base + i);
    out[i] = shift_mc(enc, pts[i], probe, k, rng).mean;
  });
  return out;
}

inline constexpr std::size_t kMinPopulation = 32;

inline DifferentialShift differential_shift(const enc::EncoderHandle& enc, const PointSet& real_pts,
                                            const PointSet& gen_pts, const ProbeLaw& probe, std::size_t k,
                                            std::uint64_t seed, unsigned threads = 1) {
  if (real_pts.empty() || gen_pts.empty()) throw DomainError("differential_shift: empty population");
  if (real_pts.size() < kMinPopulation || gen_pts.size() < kMinPopulation)
    throw ConfigError("differential_shift: need >= 32 points per population");
  DifferentialShift d;
  d.per_point_gen = per_point_shift(enc, gen_pts, probe, k, seed, 0x1000000000ULL, threads);
  d.per_point_real = per_point_shift(enc, real_pts, probe, k, seed, 0x2000000000ULL, threads);
  const auto g = summarize(d.per_point_gen);
  const auto r = summarize(d.per_point_real);
  d.mean_gen = g.mean;
  d.mean_real = r.mean;
  d.delta = g.mean - r.mean;
  d.std_error = std::sqrt(g.std_error * g.std_error + r.std_error * r.std_error);
  return d;
}

struct ShiftCurveRow {
  double epsilon = 0.0;
  double delta = 0.0;
  double std_error = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Delta(eps) = E_gen[Shift_eps] - E_real[Shift_eps] over an eps grid.
struct ShiftCurve {
  std::vector<ShiftCurveRow> rows;
  std::size_t argmax = 0;
  bool interior_argmax = false;
  double eps_turn = 0.0;
};

struct ShiftScanOptions {
  std::size_t points = 256;   // per population
  std::size_t draws = 10000;  // probe draws per point
  ProbeLawKind law = ProbeLawKind::gaussian;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

inline ShiftCurve shift_scan(const enc::EncoderHandle& enc, const testbed::ManifoldModel& model,
                             const testbed::GenModel& gen, std::span<const double> eps_grid,
                             const ShiftScanOptions& opt) {
  if (eps_grid.empty()) throw ConfigError("shift_scan: empty eps grid");
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    if (!(eps_grid[i] > 0.0)) throw ConfigError("shift_scan: eps must be positive");
    if (i > 0 && !(eps_grid[i] > eps_grid[i - 1])) throw ConfigError("shift_scan: eps grid must be strictly increasing");
  }
  Rng rr = make_stream(opt.seed, 0x7265616C);
  Rng rg = make_stream(opt.seed, 0x67656E);
  const auto real_pts = model.sample_real(opt.points, rr);
  const auto gen_pts = gen.sample(opt.points, rg);
  ShiftCurve curve;
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    const ProbeLaw probe(eps_grid[i], model.ambient_dim(), opt.law);
    const auto d = differential_shift(enc, real_pts, gen_pts, probe, opt.draws, opt.seed + 0x9E37 * (i + 1), opt.threads);
    curve.rows.push_back({eps_grid[i], d.delta, d.std_error, d.ci_lo(), d.ci_hi()});
  }
  for (std::size_t i = 1; i < curve.rows.size(); ++i)
    if (curve.rows[i].delta > curve.rows[curve.argmax].delta) curve.argmax = i;
  curve.interior_argmax = curve.argmax > 0 && curve.argmax + 1 < curve.rows.size();
  curve.eps_turn = curve.rows[curve.argmax].epsilon;
  return curve;
}

}  // namespace radet::shift
