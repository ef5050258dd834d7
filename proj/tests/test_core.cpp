#include <catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "radet/core/json_util.hpp"
#include "radet/core/matrix.hpp"
#include "radet/core/parallel.hpp"
#include "radet/core/rng.hpp"
#include "radet/core/stats.hpp"

using namespace radet;
using Catch::Matchers::WithinAbs;

TEST_CASE("streams are reproducible and distinct", "[rng]") {
  Rng a = make_stream(42, 3), b = make_stream(42, 3), c = make_stream(42, 4);
  for (int i = 0; i < 10; ++i) {
    const auto va = a(), vb = b();
    CHECK(va == vb);
    CHECK(va != c());
  }
}

TEST_CASE("standard normal moments", "[rng]") {
  Rng rng = make_stream(1);
  std::vector<double> v(200000);
  for (auto& x : v) x = std_normal(rng);
  const auto e = summarize(v);
  CHECK(std::abs(e.mean) < 0.01);
  CHECK_THAT(sample_variance(v), WithinAbs(1.0, 0.01));
}

TEST_CASE("summarize matches the textbook formulas", "[stats]") {
  const std::vector<double> v = {1.0, 2.0, 4.0, 7.0};
  const auto e = summarize(v);
  CHECK_THAT(e.mean, WithinAbs(3.5, 1e-15));
  // unbiased variance (6.25 + 2.25 + 0.25 + 12.25) / 3 = 7
  CHECK_THAT(e.std_error, WithinAbs(std::sqrt(7.0 / 4.0), 1e-14));
  CHECK(e.n == 4);
}

TEST_CASE("pairwise summation is accurate", "[stats]") {
  std::vector<double> v(1 << 20, 0.1);
  CHECK_THAT(pairwise_sum(v), WithinAbs(0.1 * (1 << 20), 1e-7));
}

TEST_CASE("spearman and ols slope", "[stats]") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> y = {2, 4, 9, 16, 100};
  CHECK_THAT(spearman(x, y), WithinAbs(1.0, 1e-12));
  std::vector<double> yr(y.rbegin(), y.rend());
  CHECK_THAT(spearman(x, yr), WithinAbs(-1.0, 1e-12));
  const std::vector<double> lin = {1, 3, 5, 7, 9};
  CHECK_THAT(ols_slope(x, lin), WithinAbs(2.0, 1e-12));
}

TEST_CASE("log_sum_exp is stable", "[stats]") {
  const std::vector<double> v = {1000.0, 1000.0};
  CHECK_THAT(log_sum_exp(v), WithinAbs(1000.0 + std::log(2.0), 1e-12));
}

TEST_CASE("parallel_for visits every index once", "[parallel]") {
  for (unsigned threads : {1u, 2u, 4u}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
}

TEST_CASE("unknown json keys are rejected", "[json]") {
  const Json j = Json::parse(R"({"a": 1, "b": 2})");
  CHECK_NOTHROW(require_known_keys(j, {"a", "b"}, "x"));
  CHECK_THROWS_AS(require_known_keys(j, {"a"}, "x"), ConfigError);
  int a = 0;
  read_opt(j, "a", a, "x");
  CHECK(a == 1);
  CHECK_THROWS_AS(read_req(j, "c", a, "x"), ConfigError);
  std::string s;
  CHECK_THROWS_AS(read_opt(j, "a", s, "x"), ConfigError);
}

TEST_CASE("matrix identity and frobenius norm", "[matrix]") {
  const auto i3 = Matrix::identity(3);
  CHECK(i3.frobenius_sq() == 3.0);
}
