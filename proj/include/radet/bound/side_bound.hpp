#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/parallel.hpp"
#include "radet/core/rng.hpp"
#include "radet/core/stats.hpp"
#include "radet/encoder/encoder.hpp"
#include "radet/shift/shift.hpp"
#include "radet/testbed/densities.hpp"
#include "radet/testbed/manifold.hpp"

namespace radet::bound {

using testbed::PointSet;

inline constexpr double kZ95 = 1.959963984540054;

// ---------------------------------------------------------------------------
// KL(q || p) by Monte Carlo under q

struct KlEstimate {
  double mean = 0.0;      // clamped at 0
  double raw_mean = 0.0;  // before clamping
  double std_error = 0.0;
  bool clamped = false;
  std::vector<double> log_ratios;  // log q(x_i) - log p(x_i)
};

using Sampler = std::function<PointSet(std::size_t, Rng&)>;
using LogDensity = std::function<double(std::span<const double>)>;

inline KlEstimate kl_mc(const Sampler& q_sampler, const LogDensity& q_logdensity, const LogDensity& p_logdensity,
                        std::size_t k, Rng& rng) {
  if (k < 10000) throw ConfigError("kl_mc: need k >= 1e4 samples");
  const auto xs = q_sampler(k, rng);
  KlEstimate out;
  out.log_ratios.resize(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lq = q_logdensity(xs[i]);
    const double lp = p_logdensity(xs[i]);
    if (!std::isfinite(lq)) throw NumericError("kl_mc: log q is not finite on a sample drawn from q");
    if (!std::isfinite(lp)) throw NumericError("kl_mc: log p is -inf on a sample drawn from q (p lacks support)");
    out.log_ratios[i] = lq - lp;
  }
  const auto s = summarize(out.log_ratios);
  out.raw_mean = s.mean;
  out.std_error = s.std_error;
  out.clamped = s.mean < 0.0;
  out.mean = std::max(0.0, s.mean);
  return out;
}

/// Bootstrap standard error of sqrt(max(KL, 0) / 2) from the per-sample log ratios.
inline double bootstrap_sqrt_half_kl_se(std::span<const double> log_ratios, std::size_t resamples, Rng& rng) {
  if (log_ratios.empty() || resamples < 2) return 0.0;
  std::uniform_int_distribution<std::size_t> pick(0, log_ratios.size() - 1);
  std::vector<double> stats(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < log_ratios.size(); ++i) s += log_ratios[pick(rng)];
    const double m = std::max(0.0, s / static_cast<double>(log_ratios.size()));
    stats[r] = std::sqrt(m / 2.0);
  }
  return std::sqrt(sample_variance(stats));
}

// ---------------------------------------------------------------------------
// Jacobian-energy gap Delta = E_q[G] - E_p[G]

struct GapEstimate {
  double delta = 0.0;
  double std_error = 0.0;
  double mean_q = 0.0;
  double mean_p = 0.0;
  double se_q = 0.0;
  double se_p = 0.0;

  double ci_lo() const { return delta - kZ95 * std_error; }
  double ci_hi() const { return delta + kZ95 * std_error; }
};

inline std::vector<double> energies(const enc::EncoderHandle& enc, const PointSet& pts, unsigned threads = 1) {
  std::vector<double> g(pts.size());
  parallel_for(pts.size(), threads, [&](std::size_t i) { g[i] = enc.jacobian_energy(pts[i]); });
  return g;
}

inline GapEstimate delta_gap(const enc::EncoderHandle& enc, const testbed::TubeMixture& tube,
                             const testbed::ManifoldModel& manifold, std::size_t k, Rng& rng, unsigned threads = 1) {
  if (k < 1000) throw ConfigError("delta_gap: need k >= 1e3 samples per population");
  const auto q_pts = tube.sample(k, rng);
  const auto p_pts = manifold.sample_real(k, rng);
  const auto gq = summarize(energies(enc, q_pts, threads));
  const auto gp = summarize(energies(enc, p_pts, threads));
  GapEstimate e;
  e.mean_q = gq.mean;
  e.mean_p = gp.mean;
  e.se_q = gq.std_error;
  e.se_p = gp.std_error;
  e.delta = gq.mean - gp.mean;
  e.std_error = std::sqrt(gq.std_error * gq.std_error + gp.std_error * gp.std_error);
  return e;
}

// ---------------------------------------------------------------------------
// E_{p_theta}[G] >= E_q[G] - B sqrt(M/2)

struct DvCheck {
  double lhs = 0.0;  // E_{p_theta}[G]
  double rhs = 0.0;  // E_q[G] - B sqrt(M / 2)
  bool holds = false;
  bool holds_within_uncertainty = false;
};

inline DvCheck dv_hoeffding_check(double g_ptheta_mean, double g_q_mean, double b, double m,
                                  double std_error = 0.0) {
  if (!(b > 0.0)) throw ConfigError("dv_hoeffding_check: B must be positive");
  if (!(m >= 0.0)) throw ConfigError("dv_hoeffding_check: M must be non-negative");
  DvCheck c;
  c.lhs = g_ptheta_mean;
  c.rhs = g_q_mean - b * std::sqrt(m / 2.0);
  c.holds = c.lhs >= c.rhs;
  c.holds_within_uncertainty = c.lhs + 2.0 * std_error >= c.rhs;
  return c;
}

/// Leading-order lower bound (eps^2 / n)(Delta - B sqrt(M / 2)). The O(eps^4)
/// remainder is not included.
inline double theorem_bound(double delta, double b, double m, double eps, double n) {
  if (!std::isfinite(delta) || !std::isfinite(b) || !std::isfinite(m) || !std::isfinite(eps))
    throw ConfigError("theorem_bound: inputs must be finite");
  if (!(eps > 0.0) || !(n > 0.0)) throw ConfigError("theorem_bound: eps and n must be positive");
  return eps * eps / n * (delta - b * std::sqrt(std::max(0.0, m) / 2.0));
}

// ---------------------------------------------------------------------------
// Sweep over memorization levels

struct BoundSweepConfig {
  testbed::ManifoldSpec manifold;
  std::size_t num_anchors = 32;
  double eps0 = 0.05;
  double sigma_mem = 0.0;  // 0 -> eps0
  double sigma_broad = 1.0;
  enc::AnisotropicSpec encoder;
  std::vector<double> lambdas = {0.0, 0.25, 0.5, 0.75, 1.0};
  double eps = 0.0;                                    // 0 -> chosen from eps_grid by the regime test
  std::vector<double> eps_grid = {0.005, 0.01, 0.02, 0.05};
  double regime_tolerance = 0.05;
  std::size_t kl_samples = 20000;
  std::size_t gap_samples = 4000;
  std::size_t points = 512;  // per population for the empirical shift gap
  std::size_t draws = 200;   // probe draws per point
  std::size_t b_samples = 4000;
  std::size_t bootstrap = 200;
  std::uint64_t seed = 2024;
  unsigned threads = 1;
};

struct BoundRow {
  double lambda = 0.0;
  double m_hat = 0.0, m_se = 0.0;
  bool m_clamped = false;
  double delta_hat = 0.0, delta_se = 0.0;
  double b_hat = 0.0;
  double bound_value = 0.0;
  double empirical_gap = 0.0, gap_se = 0.0;
  double margin = 0.0;
  double margin_se = 0.0;             // delta-method propagation
  double sqrt_half_m_boot_se = 0.0;   // bootstrap cross-check of sqrt(M/2)
  double g_ptheta = 0.0, g_q = 0.0;
  bool dv_holds = false;                     // point estimates only
  bool dv_holds_within_uncertainty = false;  // lhs + 2 se >= rhs
  bool passes = false;  // margin >= -2 * margin_se
  double eps = 0.0, eps0 = 0.0;
};

struct BoundReport {
  std::vector<BoundRow> rows;
  double eps = 0.0;
  double eps0 = 0.0;
  double b_raw_max = 0.0;
  double regime_ratio = 0.0;  // mean Shift / leading term at the chosen eps
  bool regime_confirmed = false;
  bool m_strictly_decreasing = false;
  bool bound_non_decreasing = false;
  double gap_spearman = 0.0;  // Spearman(lambda, empirical gap)
  bool failed = false;
  std::vector<std::size_t> failed_rows;
};

struct RegimeProbe {
  double eps = 0.0;
  double ratio = 0.0;
  bool confirmed = false;
};

/// Smallest grid eps where mean Shift / ((eps^2/n) mean G) lies within tolerance of 1.
inline RegimeProbe small_noise_regime(const enc::EncoderHandle& enc, const PointSet& pts,
                                      std::span<const double> eps_grid, double tolerance, std::size_t draws,
                                      std::uint64_t seed, unsigned threads = 1) {
  if (eps_grid.empty()) throw ConfigError("small_noise_regime: empty grid");
  const auto g = summarize(energies(enc, pts, threads));
  const double n = static_cast<double>(pts.dim);
  RegimeProbe first;
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    const double eps = eps_grid[i];
    const shift::ProbeLaw probe(eps, pts.dim);
    const auto s = summarize(shift::per_point_shift(enc, pts, probe, draws, seed, 0x3000000000ULL + i * 0x100000ULL, threads));
    RegimeProbe r{eps, s.mean / (eps * eps / n * g.mean), false};
    r.confirmed = std::abs(r.ratio - 1.0) <= tolerance;
    if (i == 0) first = r;
    if (r.confirmed) return r;
  }
  return first;
}

inline BoundReport bound_sweep(const BoundSweepConfig& cfg) {
  if (cfg.lambdas.empty()) throw ConfigError("bound_sweep: empty lambda grid");
  auto manifold = std::make_shared<const testbed::ManifoldModel>(cfg.manifold);
  const auto n = manifold->ambient_dim();
  Rng anchor_rng = make_stream(cfg.seed, 1);
  const auto train = testbed::make_training_set(*manifold, cfg.num_anchors, anchor_rng);
  const testbed::TubeMixture tube(train.anchors, cfg.eps0);
  const auto enc = enc::make_anisotropic(manifold, cfg.encoder);
  const double sigma_mem = cfg.sigma_mem > 0.0 ? cfg.sigma_mem : cfg.eps0;

  BoundReport rep;
  rep.eps0 = cfg.eps0;

  // B over the union of real, tube and broad-component supports.
  {
    testbed::GenSpec broad_spec{0.0, sigma_mem, cfg.sigma_broad, {}};
    const testbed::GenModel broad(train.anchors, broad_spec);
    Rng rb = make_stream(cfg.seed, 2);
    const auto prof = enc::estimate_B(
        enc,
        [&](std::size_t k, Rng& r) {
          PointSet out;
          const auto a = manifold->sample_real(k / 3, r);
          const auto b = tube.sample(k / 3, r);
          const auto c = broad.sample(k - 2 * (k / 3), r);
          for (const auto* s : {&a, &b, &c})
            for (std::size_t i = 0; i < s->size(); ++i) out.push_back((*s)[i]);
          return out;
        },
        cfg.b_samples, rb);
    rep.b_raw_max = prof.raw_max;
    rep.rows.resize(cfg.lambdas.size());
    for (auto& r : rep.rows) r.b_hat = prof.b_hat;
  }

  // Probe scale.
  {
    Rng rp = make_stream(cfg.seed, 3);
    PointSet pts = manifold->sample_real(64, rp);
    const auto tp = tube.sample(64, rp);
    for (std::size_t i = 0; i < tp.size(); ++i) pts.push_back(tp[i]);
    const auto reg = small_noise_regime(enc, pts, cfg.eps_grid, cfg.regime_tolerance, 400, cfg.seed + 17, cfg.threads);
    rep.eps = cfg.eps > 0.0 ? cfg.eps : reg.eps;
    rep.regime_ratio = reg.ratio;
    rep.regime_confirmed = reg.confirmed;
  }

  Rng rreal = make_stream(cfg.seed, 4);
  const auto real_pts = manifold->sample_real(cfg.points, rreal);
  const shift::ProbeLaw probe(rep.eps, n);

  for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
    auto& row = rep.rows[i];
    row.lambda = cfg.lambdas[i];
    row.eps = rep.eps;
    row.eps0 = cfg.eps0;
    const testbed::GenModel gen(train.anchors, testbed::GenSpec{row.lambda, sigma_mem, cfg.sigma_broad, {}});
    const std::uint64_t row_seed = splitmix64(cfg.seed + 0x100 * (i + 1));

    Rng rk = make_stream(row_seed, 1);
    const auto kl = kl_mc([&](std::size_t k, Rng& r) { return tube.sample(k, r); },
                          [&](std::span<const double> x) { return tube.logdensity(x); },
                          [&](std::span<const double> x) { return gen.logdensity(x); }, cfg.kl_samples, rk);
    row.m_hat = kl.mean;
    row.m_se = kl.std_error;
    row.m_clamped = kl.clamped;
    Rng rboot = make_stream(row_seed, 2);
    row.sqrt_half_m_boot_se = bootstrap_sqrt_half_kl_se(kl.log_ratios, cfg.bootstrap, rboot);

    Rng rd = make_stream(row_seed, 3);
    const auto gap = delta_gap(enc, tube, *manifold, cfg.gap_samples, rd, cfg.threads);
    row.delta_hat = gap.delta;
    row.delta_se = gap.std_error;
    row.g_q = gap.mean_q;

    Rng rg = make_stream(row_seed, 4);
    const auto gen_pts = gen.sample(cfg.points, rg);
    const auto g_gen = summarize(energies(enc, gen_pts, cfg.threads));
    row.g_ptheta = g_gen.mean;

    const auto diff = shift::differential_shift(enc, real_pts, gen_pts, probe, cfg.draws, row_seed + 5, cfg.threads);
    row.empirical_gap = diff.delta;
    row.gap_se = diff.std_error;

    row.bound_value = theorem_bound(row.delta_hat, row.b_hat, row.m_hat, rep.eps, static_cast<double>(n));
    row.margin = row.empirical_gap - row.bound_value;
    double sqrt_se = row.sqrt_half_m_boot_se;
    if (row.m_hat > 0.0) sqrt_se = row.m_se / (2.0 * std::sqrt(2.0 * row.m_hat));
    const double scale = rep.eps * rep.eps / static_cast<double>(n);
    row.margin_se = std::sqrt(row.gap_se * row.gap_se +
                              scale * scale * (row.delta_se * row.delta_se + row.b_hat * row.b_hat * sqrt_se * sqrt_se));
    row.passes = row.margin >= -2.0 * row.margin_se;

    const auto dv = dv_hoeffding_check(row.g_ptheta, row.g_q, row.b_hat, row.m_hat,
                                       std::sqrt(g_gen.std_error * g_gen.std_error + gap.se_q * gap.se_q));
    row.dv_holds = dv.holds;
    row.dv_holds_within_uncertainty = dv.holds_within_uncertainty;
  }

  // Trend checks, ordered by lambda.
  std::vector<std::size_t> order(rep.rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rep.rows[a].lambda < rep.rows[b].lambda; });
  rep.m_strictly_decreasing = true;
  rep.bound_non_decreasing = true;
  for (std::size_t j = 1; j < order.size(); ++j) {
    const auto& prev = rep.rows[order[j - 1]];
    const auto& cur = rep.rows[order[j]];
    if (!(cur.m_hat < prev.m_hat)) rep.m_strictly_decreasing = false;
    if (!(cur.bound_value >= prev.bound_value)) rep.bound_non_decreasing = false;
  }
  if (rep.rows.size() >= 2) {
    std::vector<double> lam, gap;
    for (const auto& r : rep.rows) {
      lam.push_back(r.lambda);
      gap.push_back(r.empirical_gap);
    }
    rep.gap_spearman = spearman(lam, gap);
  }
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    if (!rep.rows[i].passes || !rep.rows[i].dv_holds_within_uncertainty) rep.failed_rows.push_back(i);
  rep.failed = !rep.failed_rows.empty();
  return rep;
}

}  // namespace radet::bound
