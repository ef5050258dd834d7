#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "radet/core/rng.hpp"
#include "radet/encoder/encoder.hpp"
#include "radet/testbed/densities.hpp"
#include "radet/testbed/manifold.hpp"

using namespace radet;
using namespace radet::enc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// f(x) = (x1^2, x2)
EncoderHandle square_first() {
  Matrix lin(2, 2);
  lin(1, 1) = 1.0;
  Matrix q0(2, 2), q1(2, 2);
  q0(0, 0) = 1.0;
  return make_quadratic(lin, {q0, q1});
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = std_normal(rng);
  return m;
}

double max_rel_diff(const Matrix& a, const Matrix& b) {
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    scale = std::max(scale, std::abs(a.data[i]));
    diff = std::max(diff, std::abs(a.data[i] - b.data[i]));
  }
  return diff / std::max(scale, 1e-300);
}

}  // namespace

TEST_CASE("linear identity encoder", "[encoder]") {
  const auto e = make_linear(Matrix::identity(2));
  const std::vector<double> x = {0.3, -2.0};
  CHECK(e.eval(x) == x);
  const auto j = e.jacobian(x);
  CHECK(j(0, 0) == 1.0);
  CHECK(j(0, 1) == 0.0);
  CHECK(j(1, 1) == 1.0);
  CHECK(e.jacobian_energy(x) == 2.0);
}

TEST_CASE("quadratic encoder Jacobian at (1,1)", "[encoder]") {
  const auto e = square_first();
  const std::vector<double> x = {1.0, 1.0};
  const auto j = e.jacobian(x);
  CHECK(j(0, 0) == 2.0);
  CHECK(j(0, 1) == 0.0);
  CHECK(j(1, 0) == 0.0);
  CHECK(j(1, 1) == 1.0);
  CHECK(e.jacobian_energy(x) == 5.0);
  const auto fd = e.with_mode(JacobianMode::central_difference);
  CHECK_THAT(fd.finite_difference_jacobian(x, 1e-4).frobenius_sq(), WithinAbs(5.0, 1e-4));
}

TEST_CASE("smooth net is deterministic and rejects non-smooth activations", "[encoder]") {
  const auto a = make_smooth_net({4, 8, 3}, 3);
  const auto b = make_smooth_net({4, 8, 3}, 3);
  const std::vector<double> x = {0.1, -0.2, 0.3, 0.9};
  CHECK(a.eval(x) == a.eval(x));
  CHECK(a.eval(x) == b.eval(x));
  CHECK(a.parameter_hash() == b.parameter_hash());
  CHECK(a.parameter_hash() != make_smooth_net({4, 8, 3}, 4).parameter_hash());
  CHECK_THROWS_AS(make_smooth_net({4, 8, 3}, 3, "relu"), ConfigError);
}

TEST_CASE("analytic and finite-difference Jacobians agree for every analytic kind", "[encoder]") {
  Rng rng = make_stream(21);
  auto manifold = std::make_shared<const testbed::ManifoldModel>(testbed::ManifoldSpec{});
  const std::vector<EncoderHandle> encs = {
      make_linear(random_matrix(3, 4, rng)),
      make_quadratic(random_matrix(2, 4, rng), {random_matrix(4, 4, rng), random_matrix(4, 4, rng)}),
      make_smooth_net({4, 16, 5}, 9),
      make_anisotropic(manifold, AnisotropicSpec{})};
  for (const auto& e : encs) {
    Rng pr = make_stream(22);
    Rng reals = make_stream(23);
    const auto on = manifold->sample_real(100, reals);
    for (std::size_t i = 0; i < 100; ++i) {
      std::vector<double> x(4);
      for (std::size_t j = 0; j < 4; ++j) x[j] = on[i][j] + 0.05 * std_normal(pr);
      const double h = 1e-4 * (1.0 + std::max({std::abs(x[0]), std::abs(x[1]), std::abs(x[2]), std::abs(x[3])}));
      const auto ja = e.jacobian(x);
      const auto jf = e.finite_difference_jacobian(x, h);
      // O(h^2) truncation plus roundoff of order 1e-16 / h
      CHECK(max_rel_diff(ja, jf) <= 10.0 * h * h + 1e-9);
    }
  }
}

TEST_CASE("anisotropic encoder on the flat line with unit normal gain", "[encoder][anisotropic]") {
  auto flat = std::make_shared<const testbed::ManifoldModel>(testbed::ManifoldModel::flat(1, 2));
  const auto e = make_anisotropic(flat, AnisotropicSpec{0.1, 1.0, 0.15});
  for (double t : {-1.0, 0.0, 0.4}) {
    const std::vector<double> x = {t, 0.0};
    CHECK_THAT(e.jacobian_energy(x), WithinAbs(1.01, 1e-12));
  }
}

TEST_CASE("anisotropic encoder directional derivatives on the sine graph", "[encoder][anisotropic]") {
  auto sine = std::make_shared<const testbed::ManifoldModel>(testbed::ManifoldModel::sine());
  const auto e = make_anisotropic(sine, AnisotropicSpec{0.1, 2.0, 0.15});
  const std::vector<double> t0 = {0.0};
  const auto x = sine->chart(t0);
  const auto tb = sine->tangent_basis(t0);
  const auto nb = sine->normal_basis(t0);
  const std::vector<double> tv = {tb(0, 0), tb(1, 0)}, nv = {nb(0, 0), nb(1, 0)};
  // finite-difference directional derivative oracle
  auto fd_dir = [&](const std::vector<double>& v) {
    const double h = 1e-5;
    std::vector<double> xp = x, xm = x;
    for (int i = 0; i < 2; ++i) {
      xp[i] += h * v[i];
      xm[i] -= h * v[i];
    }
    const auto fp = e.eval(xp), fm = e.eval(xm);
    double s = 0.0;
    for (int i = 0; i < 2; ++i) s += std::pow((fp[i] - fm[i]) / (2 * h), 2);
    return std::sqrt(s);
  };
  CHECK_THAT(fd_dir(tv), WithinRel(0.1, 0.01));
  CHECK_THAT(fd_dir(nv), WithinRel(2.0, 0.01));
}

TEST_CASE("anisotropic encoder rejects points outside the tubular neighbourhood", "[encoder][anisotropic]") {
  auto flat = std::make_shared<const testbed::ManifoldModel>(testbed::ManifoldModel::flat(1, 2));
  AnisotropicSpec s;
  s.max_normal_offset = 0.5;
  const auto e = make_anisotropic(flat, s);
  CHECK_NOTHROW(e.eval(std::vector<double>{0.0, 0.4}));
  CHECK_THROWS_AS(e.eval(std::vector<double>{0.0, 0.6}), DomainError);
  CHECK_THROWS_AS(make_anisotropic(flat, AnisotropicSpec{2.0, 1.0, 0.15}), ConfigError);
  CHECK_THROWS_AS(make_anisotropic(flat, AnisotropicSpec{0.0, 1.0, 0.15}), ConfigError);
}

TEST_CASE("on-manifold Jacobian energy of the anisotropic encoder", "[encoder][anisotropic]") {
  auto manifold = std::make_shared<const testbed::ManifoldModel>(testbed::ManifoldSpec{});
  const auto e = make_anisotropic(manifold, AnisotropicSpec{});
  Rng rng = make_stream(31);
  const auto pts = manifold->sample_real(50, rng);
  // m kappa_t^2 + (n - m) kappa_n^2 = 0.01 + 3 * 4
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK_THAT(e.jacobian_energy(pts[i]), WithinAbs(12.01, 1e-9));
}

TEST_CASE("anisotropic far field", "[encoder][anisotropic]") {
  auto flat = std::make_shared<const testbed::ManifoldModel>(testbed::ManifoldModel::flat(1, 2));
  SECTION("saturated gains above the line") {
    const AnisotropicSpec s{0.1, 2.0, 0.25, 1.0};
    const auto e = make_anisotropic(flat, s);
    for (double y : {0.0, 0.1, 0.5, 2.0, 50.0}) {
      const double r2 = y * y;
      const double rc2 = r2 / (1.0 + r2);
      const double gt = 2.0 + (0.1 - 2.0) * std::exp(-rc2 / (2.0 * 0.25 * 0.25));
      const double gn = 2.0 * std::pow(1.0 + r2, -1.5);
      CHECK_THAT(e.jacobian_energy(std::vector<double>{0.0, y}), WithinAbs(gt * gt + gn * gn, 1e-9));
    }
    CHECK(e.jacobian_energy(std::vector<double>{0.0, 50.0}) < 4.0);
  }
  SECTION("equal gains without saturation are linear") {
    const auto e = make_anisotropic(flat, AnisotropicSpec{2.0, 2.0, 0.25, std::numeric_limits<double>::infinity()});
    for (double y : {0.0, 0.3, 7.0}) {
      const auto f = e.eval(std::vector<double>{0.4, y});
      CHECK_THAT(f[0], WithinAbs(0.8, 1e-12));
      CHECK_THAT(f[1], WithinAbs(2.0 * y, 1e-12));
    }
  }
  CHECK_THROWS_AS(make_anisotropic(flat, AnisotropicSpec{0.1, 2.0, 0.25, 0.0}), ConfigError);
}

TEST_CASE("estimate_B", "[encoder]") {
  Rng rng = make_stream(41);
  auto gauss = [](std::size_t k, Rng& r) {
    testbed::PointSet p(k, 3);
    for (auto& v : p.data) v = std_normal(r);
    return p;
  };
  SECTION("linear map: constant G, B = |A|_F^2 * 1.25") {
    const auto a = random_matrix(2, 3, rng);
    const auto e = make_linear(a);
    const auto prof = estimate_B(e, gauss, 1000, rng);
    CHECK_THAT(prof.raw_max, WithinRel(a.frobenius_sq(), 1e-12));
    CHECK_THAT(prof.b_hat, WithinRel(1.25 * a.frobenius_sq(), 1e-12));
  }
  SECTION("zero map: G = 0, B = 0") {
    const auto e = make_linear(Matrix(2, 3));
    const auto prof = estimate_B(e, gauss, 1000, rng);
    CHECK(prof.b_hat == 0.0);
    for (double g : prof.energy) CHECK(g == 0.0);
  }
  SECTION("every evaluated G lies in [0, B]") {
    const auto e = make_smooth_net({3, 8, 2}, 5);
    const auto prof = estimate_B(e, gauss, 2000, rng);
    for (double g : prof.energy) {
      CHECK(g >= 0.0);
      CHECK(g <= prof.b_hat);
    }
  }
  SECTION("k below 1000 is rejected") {
    CHECK_THROWS_AS(estimate_B(make_linear(Matrix::identity(3)), gauss, 999, rng), ConfigError);
  }
}

TEST_CASE("Jacobian energy is pure", "[encoder]") {
  auto manifold = std::make_shared<const testbed::ManifoldModel>(testbed::ManifoldSpec{});
  const auto e = make_anisotropic(manifold, AnisotropicSpec{});
  const std::vector<double> x = {0.2, 0.1, -0.3, 0.05};
  const double g1 = e.jacobian_energy(x);
  (void)e.jacobian_energy(std::vector<double>{1.0, 1.0, 1.0, 1.0});
  CHECK(e.jacobian_energy(x) == g1);
}

TEST_CASE("non-finite inputs are numeric errors", "[encoder]") {
  const auto e = make_linear(Matrix::identity(2));
  CHECK_THROWS_AS(make_smooth_net({2, 4, 2}, 1).jacobian(std::vector<double>{NAN, 0.0}), NumericError);
  CHECK_THROWS_AS(e.eval(std::vector<double>{0.0}), ConfigError);
  CHECK_THROWS_AS(make_external(4).eval(std::vector<double>{0, 0, 0, 0}), ConfigError);
}
