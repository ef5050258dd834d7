#include <catch_amalgamated.hpp>

#include <algorithm>
#include <limits>
#include <cmath>
#include <vector>

#include "radet/core/rng.hpp"
#include "radet/det/checkpoint.hpp"
#include "radet/det/detector.hpp"
#include "radet/det/image.hpp"
#include "radet/det/train.hpp"
#include "radet/io/toy_data.hpp"

using namespace radet;
using namespace radet::det;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Image img(c, h, w);
  for (auto& v : img.v) v = uniform01(rng);
  return img;
}

DetectorConfig only(std::initializer_list<Branch> on) {
  DetectorConfig c;
  c.branches = {false, false, false, false};
  for (auto b : on) c.branches[static_cast<std::size_t>(b)] = true;
  return c;
}

double dot_block(std::span<const double> p, std::span<const double> x, std::size_t row, std::size_t in) {
  double s = 0.0;
  for (std::size_t j = 0; j < in; ++j) s += p[row * in + j] * x[j];
  return s;
}

const io::ToySplits& small_splits() {
  static const io::ToySplits s = io::make_toy_splits(io::ToyDataSpec{}, 48, 16);
  return s;
}

}  // namespace

TEST_CASE("median residual", "[image]") {
  SECTION("constant image") {
    Image img(3, 5, 6, 0.37);
    for (double v : median_residual(img).v) CHECK(v == 0.0);
  }
  SECTION("single bright pixel") {
    Image img(1, 3, 3, 0.0);
    img.at(0, 1, 1) = 1.0;
    const auto r = median_residual(img);
    CHECK(r.at(0, 1, 1) == 1.0);
  }
  SECTION("random 8x8 against a sort-based oracle with edge replication") {
    Rng rng = make_stream(1);
    const auto img = random_image(2, 8, 8, rng);
    const auto r = median_residual(img);
    for (std::size_t c = 0; c < 2; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          std::vector<double> w;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              w.push_back(img.at(c, std::clamp(y + dy, 0, 7), std::clamp(x + dx, 0, 7)));
          std::sort(w.begin(), w.end());
          CHECK(r.at(c, y, x) == img.at(c, y, x) - w[4]);
        }
  }
  SECTION("too small") { CHECK_THROWS_AS(median_residual(Image(1, 2, 5)), ConfigError); }
}

TEST_CASE("perturb clamps to the unit interval", "[image]") {
  Rng rng = make_stream(2);
  const auto img = random_image(3, 4, 4, rng);
  CHECK(perturb(img, Tensor(3, 4, 4)) == img);
  const Image ones(3, 4, 4, 1.0);
  CHECK(perturb(ones, Tensor(3, 4, 4, 0.1)) == ones);
  Tensor d(3, 4, 4);
  for (auto& v : d.v) v = 0.6 * (uniform01(rng) - 0.5);
  const auto out = perturb(img, d);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(out.v[i] == std::min(1.0, std::max(0.0, img.v[i] + d.v[i])));
  CHECK_THROWS_AS(perturb(img, Tensor(3, 4, 5)), ConfigError);
}

TEST_CASE("perturbation generator", "[drp]") {
  Detector model(DetectorConfig{});
  Rng rng = make_stream(3);
  SECTION("zero weights give a zero perturbation") {
    std::fill(model.params().begin(), model.params().end(), 0.0);
    const auto d = model.drp_delta(random_image(3, 32, 32, rng));
    for (double v : d.v) CHECK(v == 0.0);
  }
  SECTION("budget holds for scaled random parameters") {
    for (int t = 0; t < 100; ++t) {
      Detector m(DetectorConfig{});
      m.init_params(100 + t);
      const double scale = 1.0 + 10.0 * uniform01(rng);
      for (std::size_t k = m.layout().drp_begin; k < m.layout().drp_end; ++k) m.params()[k] *= scale;
      const auto d = m.drp_delta(random_image(3, 32, 32, rng));
      double mx = 0.0;
      for (double v : d.v) mx = std::max(mx, std::abs(v));
      CHECK(mx <= m.config().eps_pix);
    }
  }
  SECTION("deterministic for fixed parameters and input") {
    const auto img = random_image(3, 32, 32, rng);
    const Detector other(DetectorConfig{});
    CHECK(model.drp_delta(img) == other.drp_delta(img));
  }
  SECTION("shape mismatches are configuration errors") {
    const auto img = random_image(3, 32, 32, rng);
    CHECK_THROWS_AS(model.drp_delta(img, std::vector<double>(5, 0.0)), ConfigError);
    CHECK_THROWS_AS(model.drp_delta(random_image(3, 16, 16, rng), std::vector<double>(16, 0.0)), ConfigError);
    CHECK_THROWS_AS(model.forward(random_image(1, 32, 32, rng)), ConfigError);
  }
}

TEST_CASE("branch logits and aggregation", "[heads]") {
  Rng rng = make_stream(4);
  const auto img = random_image(3, 32, 32, rng);
  SECTION("zero heads give score 0 and probability 0.5") {
    Detector m(DetectorConfig{});
    std::fill(m.params().begin(), m.params().end(), 0.0);
    const auto out = m.logits(img);
    CHECK(out.score == 0.0);
    CHECK(out.probability() == 0.5);
    CHECK(m.predict(img) == 0.5);
  }
  SECTION("a single enabled branch equals the aggregate") {
    for (auto b : {Branch::sem, Branch::dist, Branch::diff, Branch::res}) {
      const Detector m(only({b}));
      const auto out = m.logits(img);
      CHECK(out.score == out.logit[static_cast<std::size_t>(b)]);
    }
  }
  SECTION("aggregate equals a branch-by-branch recomputation") {
    Detector m(DetectorConfig{});
    m.init_params(77);
    const auto t = m.forward(img);
    const auto& L = m.layout();
    const auto& e = t.enc_x.e;
    const auto& ep = t.enc_xp.e;
    const std::size_t D = e.size();
    double sem = m.block(L.b_sem)[D] + dot_block(m.block(L.b_sem), e, 0, D);
    double d2 = 0.0;
    std::vector<double> v(D);
    for (std::size_t j = 0; j < D; ++j) {
      v[j] = e[j] - ep[j];
      d2 += v[j] * v[j];
    }
    const double d = std::sqrt(d2 + 1e-12);
    const auto p1 = m.block(L.b_dist1), p2 = m.block(L.b_dist2);
    const std::size_t H = m.config().dist_hidden;
    double dist = p2[H];
    for (std::size_t k = 0; k < H; ++k) dist += p2[k] * std::tanh(p1[k] * d + p1[H + k]);
    const auto q1 = m.block(L.b_diff1), q2 = m.block(L.b_diff2);
    const std::size_t K = m.config().diff_hidden;
    double diff = q2[K];
    for (std::size_t k = 0; k < K; ++k) diff += q2[k] * std::tanh(dot_block(q1, v, k, D) + q1[K * D + k]);
    const auto ro = m.block(L.b_res_out);
    const std::size_t R = m.config().res_channels;
    const double res = ro[R] + dot_block(ro, t.rfeat, 0, R);
    CHECK_THAT(t.out.logit[0], WithinAbs(sem, 1e-12));
    CHECK_THAT(t.out.logit[1], WithinAbs(dist, 1e-12));
    CHECK_THAT(t.out.logit[2], WithinAbs(diff, 1e-12));
    CHECK_THAT(t.out.logit[3], WithinAbs(res, 1e-12));
    CHECK_THAT(t.out.score, WithinAbs(sem + dist + diff + res, 1e-12));
  }
  SECTION("non-finite logits name the branch") {
    Detector m(DetectorConfig{});
    m.params()[m.layout().b_diff2.offset] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH(m.logits(img), ContainsSubstring("diff"));
  }
}

TEST_CASE("binary cross-entropy", "[loss]") {
  const std::vector<double> z0 = {0.0, 0.0, 0.0};
  const std::vector<int> y = {1, 0, 1};
  CHECK_THAT(loss_bce(z0, y), WithinAbs(std::log(2.0), 1e-15));
  const std::vector<double> big = {40.0, -40.0, 40.0};
  CHECK(loss_bce(big, y) < 1e-15);
  Rng rng = make_stream(5);
  std::vector<double> z(64);
  std::vector<int> lab(64);
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = 6.0 * std_normal(rng);
    lab[i] = uniform01(rng) < 0.5;
  }
  double naive = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    naive -= lab[i] * std::log(p) + (1 - lab[i]) * std::log(1.0 - p);
  }
  CHECK_THAT(loss_bce(z, lab), WithinAbs(naive / 64.0, 1e-10));
  const std::vector<int> bad = {2, 0, 1};
  CHECK_THROWS_AS(loss_bce(z0, bad), ConfigError);
}

TEST_CASE("robustness-asymmetry hinge", "[loss]") {
  const std::vector<int> y = {1, 1, 0, 0};
  SECTION("hand cases") {
    const std::vector<double> a = {0.95, 0.95, 0.9, 0.9};
    CHECK_THAT(loss_ra(a, y, 0.1).value, WithinAbs(0.05, 1e-15));
    const std::vector<double> b = {0.99, 0.99, 0.8, 0.8};
    CHECK(loss_ra(b, y, 0.1).value == 0.0);
  }
  SECTION("single-class batches are skipped") {
    const std::vector<double> s = {0.1, 0.2};
    const std::vector<int> reals = {1, 1}, fakes = {0, 0};
    const auto r = loss_ra(s, reals, 0.1);
    CHECK(r.skipped);
    CHECK(r.value == 0.0);
    CHECK(loss_ra(s, fakes, 0.1).skipped);
  }
  SECTION("zero exactly when the margin holds") {
    Rng rng = make_stream(6);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> s(4);
      for (auto& v : s) v = uniform01(rng);
      const auto r = loss_ra(s, y, 0.1);
      const double mr = (s[0] + s[1]) / 2.0, mf = (s[2] + s[3]) / 2.0;
      if (mr >= mf + 0.1)
        CHECK(r.value == 0.0);
      else
        CHECK(r.value > 0.0);
    }
  }
  SECTION("composite loss") {
    const std::vector<double> z = {1.0, 2.0, -1.0, 0.5};
    const std::vector<double> ok = {0.99, 0.99, 0.8, 0.8};
    const auto c = loss_comp(z, ok, y, 0.1);
    CHECK(c.total == loss_bce(z, y));
    const std::vector<double> bad = {0.5, 0.6, 0.9, 0.9};
    const auto d = loss_comp(z, bad, y, 0.1);
    CHECK(d.total == loss_bce(z, y) + loss_ra(bad, y, 0.1).value);
    const std::vector<double> zz = {0.0, 0.0};
    const std::vector<int> yy = {1, 0};
    const std::vector<double> ss = {1.0, 0.0};
    CHECK(loss_comp(zz, ss, yy, 0.1).ra == 0.0);
  }
}

TEST_CASE("gradients", "[grad]") {
  const auto& data = small_splits().train;
  std::vector<const Image*> imgs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.size(); i += 6) {
    imgs.push_back(&data.images[i]);
    labels.push_back(data.labels[i]);
  }
  TrainConfig cfg;
  SECTION("full model passes a 50-parameter gradcheck") {
    Detector m(DetectorConfig{});
    const auto g = gradcheck(m, imgs, labels, cfg, 50);
    CHECK(g.checked == 50);
    CHECK(g.max_rel_error <= 1e-4);
  }
  SECTION("learned aggregation and DCA distance pass too") {
    DetectorConfig c;
    c.learn_aggregation = true;
    c.distance_feature = DistanceFeature::dca;
    Detector m(c);
    ImageSet sub;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      sub.images.push_back(*imgs[i]);
      sub.labels.push_back(labels[i]);
    }
    freeze_dca_means(m, sub);
    const auto g = gradcheck(m, imgs, labels, cfg, 50);
    CHECK(g.checked == 50);
    CHECK(g.max_rel_error <= 1e-4);
  }
  SECTION("semantic head gradient is the closed-form BCE gradient") {
    Detector m(only({Branch::sem}));
    const auto br = batch_loss(m, imgs, labels, cfg, true);
    const auto& L = m.layout();
    const std::size_t D = m.config().encoder.dim;
    std::vector<double> expect(D + 1, 0.0);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const auto e = m.encoder().encode(*imgs[i]);
      const double r = (1.0 / (1.0 + std::exp(-br.logits[i])) - labels[i]) / static_cast<double>(imgs.size());
      for (std::size_t j = 0; j < D; ++j) expect[j] += r * e[j];
      expect[D] += r;
    }
    for (std::size_t j = 0; j <= D; ++j) CHECK_THAT(br.grad[L.b_sem.offset + j], WithinAbs(expect[j], 1e-14));
    for (std::size_t k = 0; k < br.grad.size(); ++k)
      if (k < L.b_sem.offset || k > L.b_sem.offset + D) CHECK(br.grad[k] == 0.0);
  }
  SECTION("bias gradient vanishes at the optimum of the bias-only problem") {
    Detector m(only({Branch::sem}));
    std::fill(m.params().begin(), m.params().end(), 0.0);
    const double nr = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double nf = static_cast<double>(labels.size()) - nr;
    const std::size_t D = m.config().encoder.dim;
    m.params()[m.layout().b_sem.offset + D] = std::log(nr / nf);
    const auto br = batch_loss(m, imgs, labels, cfg, true);
    CHECK(std::abs(br.grad[m.layout().b_sem.offset + D]) < 1e-14);
  }
}

TEST_CASE("prediction paths", "[predict]") {
  const auto& data = small_splits().test;
  Detector m(DetectorConfig{});
  m.init_params(5);
  SECTION("embedding path matches the image path") {
    for (std::size_t i = 0; i < 8; ++i) {
      const auto t = m.forward(data.images[i]);
      CHECK(m.logits_from_embeddings(t.enc_x.e, t.enc_xp.e, t.rfeat).score == t.out.score);
    }
    const auto emb = export_embeddings(m, data);
    for (std::size_t i = 0; i < 8; ++i)
      CHECK_THAT(logits_from_row(m, emb.rows[i]).probability(), WithinAbs(m.predict(data.images[i]), 1e-5));
  }
  SECTION("batch independence") {
    const auto all = predict_all(m, data.images, 2);
    for (std::size_t i = 0; i < data.size(); i += 5) {
      const std::vector<Image> one = {data.images[i]};
      CHECK(predict_all(m, one)[0].score == all[i].score);
    }
  }
  SECTION("probabilities lie strictly inside (0, 1)") {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double p = m.predict(data.images[i]);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
  SECTION("embedding dimension mismatch") {
    CHECK_THROWS_AS(m.predict_from_embeddings(std::vector<double>(3), std::vector<double>(3), std::vector<double>(8)),
                    ConfigError);
  }
}

TEST_CASE("training", "[train]") {
  const auto& data = small_splits().train;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 3;
  SECTION("lr = 0 leaves parameters unchanged") {
    Detector m(DetectorConfig{});
    const auto before = m.params();
    auto c = cfg;
    c.lr = 0.0;
    train(m, data, c);
    CHECK(m.params() == before);
  }
  SECTION("seeded reruns are bit-identical, encoder stays frozen") {
    Detector a(DetectorConfig{}), b(DetectorConfig{});
    const auto hash = a.encoder().parameter_hash();
    const auto ra = train(a, data, cfg);
    const auto rb = train(b, data, cfg);
    CHECK(ra.step_loss == rb.step_loss);
    CHECK(a.params() == b.params());
    CHECK(a.encoder().parameter_hash() == hash);
    CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
    REQUIRE(ra.epochs.size() == 2);
    CHECK(ra.steps == 12);
  }
  SECTION("thread count does not change the result") {
    Detector a(DetectorConfig{}), b(DetectorConfig{});
    auto c4 = cfg;
    c4.threads = 3;
    CHECK(train(a, data, cfg).step_loss == train(b, data, c4).step_loss);
  }
  SECTION("overfits 8 separable samples") {
    ImageSet eight;
    for (std::size_t i = 0; i < data.size() && eight.size() < 8; ++i)
      if (std::count(eight.labels.begin(), eight.labels.end(), data.labels[i]) < 4) {
        eight.images.push_back(data.images[i]);
        eight.labels.push_back(data.labels[i]);
      }
    Detector m(DetectorConfig{});
    auto c = cfg;
    c.batch_size = 8;
    c.epochs = 500;
    c.lr = 1e-2;
    const auto r = train(m, eight, c);
    CHECK(r.step_loss.back() < 0.05);
  }
  SECTION("adversarial generator mode trains") {
    Detector m(DetectorConfig{});
    auto c = cfg;
    c.adversarial_drp = true;
    const auto before = m.params();
    const auto r = train(m, data, c);
    CHECK(std::isfinite(r.step_loss.back()));
    bool drp_moved = false;
    for (std::size_t k = m.layout().drp_begin; k < m.layout().drp_end; ++k) drp_moved |= m.params()[k] != before[k];
    CHECK(drp_moved);
  }
  SECTION("configuration guards") {
    Detector m(DetectorConfig{});
    auto c = cfg;
    c.gamma = 0.0;
    CHECK_THROWS_AS(train(m, data, c), ConfigError);
    c = cfg;
    c.batch_size = 1;
    CHECK_THROWS_AS(train(m, data, c), ConfigError);
    ImageSet reals;
    reals.images = {data.images[0], data.images[1]};
    reals.labels = {1, 1};
    CHECK_THROWS_AS(train(m, reals, cfg), ConfigError);
  }
  SECTION("non-finite parameters raise a numeric error") {
    Detector m(DetectorConfig{});
    m.params()[m.layout().b_sem.offset] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train(m, data, cfg), NumericError);
  }
}

TEST_CASE("checkpoint round trip and validation", "[checkpoint]") {
  DetectorConfig c;
  c.branches = {true, false, true, true};
  c.eps_pix = 4.0 / 255.0;
  Detector m(c);
  m.init_params(9);
  const auto bytes = serialize_checkpoint(m);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.params() == m.params());
  CHECK(to_json(back.config()) == to_json(m.config()));
  CHECK(serialize_checkpoint(back) == bytes);
  SECTION("bad magic reports offset 0") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH(deserialize_checkpoint(bad), ContainsSubstring("offset 0"));
  }
  SECTION("truncation is an IO error") {
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  }
  SECTION("encoder hash mismatch") {
    auto j = to_json(c);
    j["encoder"]["seed"] = 12;
    Detector other(detector_config_from_json(j));
    auto swapped = serialize_checkpoint(other);
    // keep the other config but splice in the original hash section
    const auto pos_a = bytes.find("encoder_hash");
    const auto pos_b = swapped.find("encoder_hash");
    swapped.replace(pos_b + 12 + 8, 8, bytes.substr(pos_a + 12 + 8, 8));
    CHECK_THROWS_WITH(deserialize_checkpoint(swapped), ContainsSubstring("encoder hash"));
  }
  SECTION("unknown config keys are rejected") {
    auto j = to_json(c);
    j["extra"] = 1;
    CHECK_THROWS_AS(detector_config_from_json(j), ConfigError);
  }
}

TEST_CASE("embedding files", "[embeddings]") {
  Detector m(DetectorConfig{});
  const auto& data = small_splits().test;
  ImageSet sub;
  for (std::size_t i = 0; i < data.size(); i += 4) {
    sub.images.push_back(data.images[i]);
    sub.labels.push_back(data.labels[i]);
  }
  const auto s = export_embeddings(m, sub);
  REQUIRE(s.rows.size() == sub.size());
  SECTION("binary round trip is bit-identical") {
    const auto bytes = serialize_embeddings(s);
    const auto back = deserialize_embeddings(bytes);
    CHECK(back == s);
    CHECK(serialize_embeddings(back) == bytes);
  }
  SECTION("csv round trip") { CHECK(embeddings_from_csv(embeddings_to_csv(s)) == s); }
  SECTION("malformed inputs report offsets") {
    auto bytes = serialize_embeddings(s);
    auto bad = bytes;
    bad[2] = 'Z';
    CHECK_THROWS_WITH(deserialize_embeddings(bad), ContainsSubstring("magic") && ContainsSubstring("offset 0"));
    auto badlab = bytes;
    const std::size_t first_row = 6 + 8 + 4 + 4 + 4;
    badlab[first_row] = 7;
    CHECK_THROWS_WITH(deserialize_embeddings(badlab), ContainsSubstring("offset " + std::to_string(first_row)));
    CHECK_THROWS_AS(deserialize_embeddings(bytes.substr(0, bytes.size() - 1)), IoError);
  }
  SECTION("no residual block") {
    EmbeddingSet t = s;
    t.res_dim = 0;
    for (auto& r : t.rows) r.r.clear();
    CHECK(deserialize_embeddings(serialize_embeddings(t)) == t);
  }
}

TEST_CASE("toy dataset", "[toy]") {
  io::ToyDataSpec spec;
  const auto a = io::make_toy_dataset(spec, 10, 10, 1);
  const auto b = io::make_toy_dataset(spec, 10, 10, 1);
  SECTION("deterministic, balanced, in range and 8-bit") {
    CHECK(a.images == b.images);
    CHECK(std::count(a.labels.begin(), a.labels.end(), 1) == 10);
    for (const auto& img : a.images)
      for (double v : img.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::round(v * 255.0) / 255.0 == v);
      }
  }
  SECTION("splits are disjoint") {
    const auto c = io::make_toy_dataset(spec, 10, 10, 2);
    for (const auto& x : a.images)
      for (const auto& y : c.images) CHECK_FALSE(x == y);
  }
  SECTION("memorization weight only changes the fake class") {
    auto s0 = spec, s1 = spec;
    s0.lambda_img = 0.0;
    s1.lambda_img = 1.0;
    const auto d0 = io::make_toy_dataset(s0, 10, 10, 1);
    const auto d1 = io::make_toy_dataset(s1, 10, 10, 1);
    for (std::size_t i = 0; i < d0.size(); ++i) {
      if (d0.labels[i] == 1)
        CHECK(d0.images[i] == d1.images[i]);
      else
        CHECK_FALSE(d0.images[i] == d1.images[i]);
    }
  }
}
