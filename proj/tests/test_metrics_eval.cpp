#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "radet/core/rng.hpp"
#include "radet/eval/degrade.hpp"
#include "radet/eval/evaluate.hpp"
#include "radet/eval/metrics.hpp"
#include "radet/io/toy_data.hpp"

using namespace radet;
using namespace radet::eval;
using Catch::Matchers::WithinAbs;

namespace {

// AP as a step integral of precision over recall, one step per distinct threshold.
double threshold_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::map<double, std::pair<int, int>, std::greater<>> groups;
  int pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& g = groups[s[i]];
    ++g.first;
    g.second += y[i];
    pos += y[i];
  }
  double ap = 0.0;
  int n = 0, tp = 0;
  for (const auto& [thr, g] : groups) {
    n += g.first;
    tp += g.second;
    ap += static_cast<double>(g.second) / pos * tp / n;
  }
  return ap;
}

double ap_by_ranks(const std::vector<double>& s, const std::vector<int>& y) {
  // For distinct scores: precision at each positive counts items scoring at least as high.
  double sum = 0.0;
  int pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++pos;
    int above = 0, tp = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) {
        ++above;
        tp += y[j];
      }
    sum += static_cast<double>(tp) / above;
  }
  return sum / pos;
}

det::Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  det::Image img(c, h, w);
  for (auto& v : img.v) v = uniform01(rng);
  return img;
}

}  // namespace

TEST_CASE("accuracy", "[metrics]") {
  const std::vector<double> s = {0.9, 0.2, 0.5, 0.49};
  const std::vector<int> y = {1, 0, 1, 0};
  CHECK(accuracy(s, y) == 1.0);
  const std::vector<int> flipped = {0, 1, 0, 1};
  CHECK(accuracy(s, flipped) == 0.0);
  Rng rng = make_stream(10);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> sc(37);
    std::vector<int> lab(37);
    int correct = 0;
    for (std::size_t i = 0; i < sc.size(); ++i) {
      sc[i] = uniform01(rng);
      lab[i] = uniform01(rng) < 0.5;
      correct += (sc[i] >= 0.5) == (lab[i] == 1);
    }
    CHECK(accuracy(sc, lab) == correct / 37.0);
  }
  const std::vector<double> empty;
  const std::vector<int> none;
  CHECK_THROWS_AS(accuracy(empty, none), ConfigError);
}

TEST_CASE("average precision", "[metrics]") {
  SECTION("hand cases") {
    const std::vector<double> s = {0.9, 0.1};
    const std::vector<int> a = {1, 0}, b = {0, 1};
    CHECK(average_precision(s, a) == 1.0);
    CHECK(average_precision(s, b) == 0.5);
    const std::vector<int> none = {0, 0};
    CHECK_THROWS_AS(average_precision(s, none), DomainError);
  }
  SECTION("brute-force oracle on random sets") {
    Rng rng = make_stream(11);
    for (int t = 0; t < 300; ++t) {
      const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 60);
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = uniform01(rng);
        y[i] = uniform01(rng) < 0.4;
      }
      y[0] = 1;
      CHECK_THAT(average_precision(s, y), WithinAbs(ap_by_ranks(s, y), 1e-12));
      CHECK_THAT(average_precision(s, y), WithinAbs(threshold_ap(s, y), 1e-12));
      CHECK(interpolated_average_precision(s, y) >= average_precision(s, y) - 1e-15);
    }
  }
  SECTION("ties are scored as a group") {
    Rng rng = make_stream(12);
    for (int t = 0; t < 300; ++t) {
      const std::size_t n = 2 + static_cast<std::size_t>(uniform01(rng) * 40);
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = std::floor(uniform01(rng) * 4.0) / 4.0;
        y[i] = uniform01(rng) < 0.5;
      }
      y[0] = 1;
      const auto d = average_precision_detail(s, y);
      CHECK_THAT(d.ap, WithinAbs(threshold_ap(s, y), 1e-12));
      CHECK(d.ap_worst <= d.ap_best + 1e-12);
    }
  }
  SECTION("input order does not matter") {
    const std::vector<double> s = {0.5, 0.5, 0.2, 0.5};
    const std::vector<int> a = {1, 0, 0, 1}, b = {0, 1, 0, 1};
    CHECK(average_precision(s, a) == average_precision(s, b));
    CHECK_THAT(average_precision(s, a), WithinAbs(2.0 / 3.0, 1e-15));
  }
  SECTION("invariant under strictly increasing transforms") {
    Rng rng = make_stream(13);
    std::vector<double> s(50), ts(50);
    std::vector<int> y(50);
    for (std::size_t i = 0; i < 50; ++i) {
      s[i] = 4.0 * std_normal(rng);
      ts[i] = 1.0 / (1.0 + std::exp(-s[i])) * 7.0 + 3.0;
      y[i] = i % 3 == 0;
    }
    CHECK(average_precision(s, y) == average_precision(ts, y));
  }
  SECTION("perfect and reversed rankings") {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 10; ++i) {
      s.push_back(i);
      y.push_back(i >= 5);
    }
    CHECK(average_precision(s, y) == 1.0);
    std::vector<int> rev(y.rbegin(), y.rend());
    double expect = 0.0;
    for (int k = 1; k <= 5; ++k) expect += k / (5.0 + k);
    CHECK_THAT(average_precision(s, rev), WithinAbs(expect / 5.0, 1e-15));
  }
}

TEST_CASE("gaussian blur", "[degrade]") {
  Rng rng = make_stream(14);
  SECTION("kernel is normalised and symmetric") {
    for (double sg : {0.5, 0.8, 1.0, 1.5, 3.0}) {
      const auto k = gaussian_kernel(sg);
      CHECK(k.size() == 2 * static_cast<std::size_t>(std::ceil(3 * sg)) + 1);
      double s = 0.0;
      for (double v : k) s += v;
      CHECK_THAT(s, WithinAbs(1.0, 1e-14));
      for (std::size_t i = 0; i < k.size(); ++i) CHECK(k[i] == k[k.size() - 1 - i]);
    }
  }
  SECTION("constant image is preserved") {
    const det::Image img(3, 16, 16, 0.42);
    for (double v : gaussian_blur(img, 1.5).v) CHECK_THAT(v, WithinAbs(0.42, 1e-14));
  }
  SECTION("impulse mass is preserved away from the border") {
    det::Image img(1, 31, 31, 0.0);
    img.at(0, 15, 15) = 1.0;
    double s = 0.0;
    for (double v : gaussian_blur_raw(img, 2.0).v) s += v;
    CHECK_THAT(s, WithinAbs(1.0, 1e-12));
  }
  SECTION("matches direct 2-D convolution with edge replication") {
    const auto img = random_image(2, 12, 10, rng);
    const double sg = 1.0;
    const int r = 3;
    double norm = 0.0;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * sg * sg));
    const auto out = gaussian_blur(img, sg);
    for (std::size_t c = 0; c < 2; ++c)
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 10; ++x) {
          double s = 0.0;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
              s += std::exp(-(dx * dx + dy * dy) / (2 * sg * sg)) *
                   img.at(c, std::clamp(y + dy, 0, 11), std::clamp(x + dx, 0, 9));
          CHECK_THAT(out.at(c, y, x), WithinAbs(s / norm, 1e-6));
        }
  }
  SECTION("two blurs compose like one of combined width") {
    det::Image img(1, 48, 48);
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 48; ++x) img.at(0, y, x) = 0.5 + 0.4 * std::sin(0.5 * x) * std::cos(0.4 * y);
    const auto two = gaussian_blur_raw(gaussian_blur_raw(img, 1.5), 2.0);
    const auto one = gaussian_blur_raw(img, 2.5);
    for (std::size_t y = 12; y < 36; ++y)
      for (std::size_t x = 12; x < 36; ++x) CHECK_THAT(two.at(0, y, x), WithinAbs(one.at(0, y, x), 1e-3));
  }
  SECTION("invalid sigma") { CHECK_THROWS_AS(gaussian_blur(det::Image(1, 4, 4), 0.0), ConfigError); }
}

TEST_CASE("jpeg-like quantisation", "[degrade]") {
  Rng rng = make_stream(15);
  SECTION("quality 100 is nearly lossless") {
    const auto img = random_image(3, 16, 16, rng);
    const auto out = jpeg_like(img, 100);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(out.v[i] - img.v[i]) < 2.0 / 255.0);
  }
  SECTION("constant block follows the DC quantiser") {
    for (double c : {0.1, 0.37, 0.5, 0.83}) {
      const det::Image img(1, 8, 8, c);
      const double v = c * 255.0 - 128.0;
      const double step = jpeg_quant_table(50)[0];
      CHECK(step == 16.0);
      const double rec = (std::round(8.0 * v / step) * step / 8.0 + 128.0) / 255.0;
      for (double o : jpeg_like(img, 50).v) CHECK_THAT(o, WithinAbs(rec, 1e-12));
    }
  }
  SECTION("single cosine block follows its AC quantiser") {
    const int u = 1, w = 2;
    const double amp = 37.3;
    det::Image img(1, 8, 8);
    auto basis = [](int k, int x) {
      return (k == 0 ? std::sqrt(1.0 / 8.0) : 0.5) * std::cos((2 * x + 1) * k * std::numbers::pi / 16.0);
    };
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) img.at(0, y, x) = (128.0 + amp * basis(u, y) * basis(w, x)) / 255.0;
    const double q = jpeg_quant_table(75)[u * 8 + w];
    const double kept = std::round(amp / q) * q;
    const auto out = jpeg_like(img, 75);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        CHECK_THAT(out.at(0, y, x), WithinAbs((128.0 + kept * basis(u, y) * basis(w, x)) / 255.0, 1e-12));
  }
  SECTION("dct is orthonormal") {
    std::array<double, 64> b{};
    for (auto& v : b) v = std_normal(rng);
    const auto c = dct8x8(b);
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
      e1 += b[i] * b[i];
      e2 += c[i] * c[i];
    }
    CHECK_THAT(e2, WithinAbs(e1, 1e-10));
    const auto back = idct8x8(c);
    for (std::size_t i = 0; i < 64; ++i) CHECK_THAT(back[i], WithinAbs(b[i], 1e-12));
  }
  SECTION("lower quality loses more") {
    const auto img = random_image(1, 32, 32, rng);
    auto err = [&](int qf) {
      const auto o = jpeg_like(img, qf);
      double s = 0.0;
      for (std::size_t i = 0; i < img.size(); ++i) s += (o.v[i] - img.v[i]) * (o.v[i] - img.v[i]);
      return s;
    };
    CHECK(err(95) < err(85));
    CHECK(err(85) < err(30));
  }
  SECTION("invalid quality") { CHECK_THROWS_AS(jpeg_like(det::Image(1, 8, 8), 0), ConfigError); }
}

TEST_CASE("evaluation and robustness reports", "[evaluate]") {
  const auto data = io::make_toy_dataset(io::ToyDataSpec{}, 20, 20, 2);
  det::Detector model(det::DetectorConfig{});
  model.init_params(4);
  SECTION("baseline row equals the plain evaluation") {
    const auto plain = evaluate(model, {{"toy", data}});
    const auto sweep = robustness_sweep(model, data);
    REQUIRE(sweep.degradations.size() == 7);
    CHECK(sweep.degradations[0].kind == "none");
    CHECK(sweep.degradations[0].ap == plain.sources[0].ap);
    CHECK(sweep.degradations[0].acc == plain.sources[0].acc);
    CHECK(sweep.degradations[1].kind == "blur");
    CHECK(sweep.degradations[6].strength == 85.0);
  }
  SECTION("identical sources give identical rows and mean") {
    const auto r = evaluate(model, {{"a", data}, {"b", data}}, 2);
    CHECK(r.sources[0].ap == r.sources[1].ap);
    CHECK(r.mean_ap == r.sources[0].ap);
    CHECK(r.mean_acc == r.sources[0].acc);
  }
  SECTION("disabled branches report no AP") {
    det::DetectorConfig c;
    c.branches = {true, false, false, true};
    const det::Detector m(c);
    const auto row = degradation_row(m, data, Degradation::jpeg(90), 1);
    CHECK(std::isnan(row.branch_ap[1]));
    CHECK(std::isnan(row.branch_ap[2]));
    CHECK_FALSE(std::isnan(row.branch_ap[0]));
  }
  SECTION("json round trip and csv shape") {
    auto r = evaluate(model, {{"toy", data}});
    r.degradations = robustness_sweep(model, data).degradations;
    const auto back = eval_report_from_json(to_json(r));
    CHECK(to_json(back) == to_json(r));
    const auto csv = degradations_csv(r);
    CHECK(csv.rfind("kind,strength,acc,ap,ap_sem,ap_dist,ap_diff,ap_res\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
    CHECK(sources_csv(r).find("mean,,") != std::string::npos);
  }
  SECTION("grid validation") {
    RobustnessGrid g;
    g.jpeg_qfs = {101};
    CHECK_THROWS_AS(g.degradations(), ConfigError);
    CHECK_THROWS_AS(evaluate(model, {{"empty", det::ImageSet{}}}), ConfigError);
  }
}
