#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "radet/bound/side_bound.hpp"
#include "radet/core/errors.hpp"
#include "radet/core/json_util.hpp"
#include "radet/core/rng.hpp"
#include "radet/det/checkpoint.hpp"
#include "radet/encoder/encoder.hpp"
#include "radet/eval/evaluate.hpp"
#include "radet/io/toy_data.hpp"
#include "radet/shift/shift.hpp"
#include "radet/testbed/densities.hpp"
#include "radet/testbed/manifold.hpp"

namespace radet::io {

struct TestbedSection {
  testbed::ManifoldSpec manifold;
  std::size_t num_anchors = 32;
  double eps0 = 0.05;
};

struct GeneratorSection {
  double lambda = 1.0;
  double sigma_mem = 0.0;  // 0 -> eps0
  double sigma_broad = 1.0;
};

struct EncoderSection {
  std::string kind = "anisotropic";  // anisotropic | linear | quadratic | smooth_net
  enc::AnisotropicSpec anisotropic;
  Matrix linear;              // linear, quadratic; identity when empty
  std::vector<Matrix> quad;   // quadratic
  std::vector<std::size_t> widths;  // smooth_net; input width must equal the ambient dimension
  std::uint64_t seed = 3;
};

struct ShiftScanSection {
  std::vector<double> eps_grid = {0.005, 0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2, 0.4, 0.8};
  std::size_t points = 256;
  std::size_t draws = 1000;
  shift::ProbeLawKind law = shift::ProbeLawKind::gaussian;
};

struct DataSection {
  ToyDataSpec spec;
  std::size_t n_train = 2000;  // per class
  std::size_t n_test = 500;    // per class
};

struct RunConfig {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string output_dir;
  TestbedSection testbed;
  GeneratorSection generator;
  EncoderSection encoder;
  ShiftScanSection shift_scan;
  bound::BoundSweepConfig bound_sweep;
  DataSection data;
  det::DetectorConfig detector;
  det::TrainConfig train;
  eval::RobustnessGrid eval;
};

// ---------------------------------------------------------------------------
// Matrix <-> nested arrays

inline Json to_json(const Matrix& m) {
  Json j = Json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    Json row = Json::array();
    for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

inline Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ConfigError(where + ": rows must be non-empty arrays");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(where + ": ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw ConfigError(where + ": non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Sections

inline Json to_json(const testbed::ManifoldSpec& s) {
  Json j{{"intrinsic_dim", s.intrinsic_dim}, {"ambient_dim", s.ambient_dim}, {"num_waves", s.num_waves},
         {"coef_scale", s.coef_scale},       {"freq_scale", s.freq_scale},   {"box", s.box},
         {"seed", s.seed}};
  if (s.use_explicit) {
    Json comps = Json::array();
    for (const auto& comp : s.explicit_waves) {
      Json ws = Json::array();
      for (const auto& w : comp) ws.push_back({{"amplitude", w.amplitude}, {"phase", w.phase}, {"freq", w.freq}});
      comps.push_back(ws);
    }
    j["waves"] = comps;
  }
  return j;
}

inline void read_manifold(const Json& j, testbed::ManifoldSpec& s, const std::string& w) {
  read_opt(j, "intrinsic_dim", s.intrinsic_dim, w);
  read_opt(j, "ambient_dim", s.ambient_dim, w);
  read_opt(j, "num_waves", s.num_waves, w);
  read_opt(j, "coef_scale", s.coef_scale, w);
  read_opt(j, "freq_scale", s.freq_scale, w);
  read_opt(j, "box", s.box, w);
  read_opt(j, "seed", s.seed, w);
  if (j.contains("waves")) {
    const auto& comps = j.at("waves");
    if (!comps.is_array()) throw ConfigError(w + ".waves: expected an array per graph component");
    s.explicit_waves.clear();
    for (const auto& comp : comps) {
      if (!comp.is_array()) throw ConfigError(w + ".waves: expected an array of waves");
      std::vector<testbed::Wave> ws;
      for (const auto& wj : comp) {
        require_known_keys(wj, {"amplitude", "phase", "freq"}, w + ".waves[]");
        testbed::Wave wave;
        read_req(wj, "amplitude", wave.amplitude, w + ".waves[]");
        read_opt(wj, "phase", wave.phase, w + ".waves[]");
        read_req(wj, "freq", wave.freq, w + ".waves[]");
        ws.push_back(std::move(wave));
      }
      s.explicit_waves.push_back(std::move(ws));
    }
    s.use_explicit = true;
  }
}

inline Json to_json(const TestbedSection& t) {
  Json j = to_json(t.manifold);
  j["num_anchors"] = t.num_anchors;
  j["eps0"] = t.eps0;
  return j;
}

inline TestbedSection testbed_from_json(const Json& j) {
  const std::string w = "testbed";
  require_known_keys(j,
                     {"intrinsic_dim", "ambient_dim", "num_waves", "coef_scale", "freq_scale", "box", "seed", "waves",
                      "num_anchors", "eps0"},
                     w);
  TestbedSection t;
  read_manifold(j, t.manifold, w);
  read_opt(j, "num_anchors", t.num_anchors, w);
  read_opt(j, "eps0", t.eps0, w);
  return t;
}

inline Json to_json(const GeneratorSection& g) {
  return Json{{"lambda", g.lambda}, {"sigma_mem", g.sigma_mem}, {"sigma_broad", g.sigma_broad}};
}

inline GeneratorSection generator_from_json(const Json& j) {
  const std::string w = "generator";
  require_known_keys(j, {"lambda", "sigma_mem", "sigma_broad"}, w);
  GeneratorSection g;
  read_opt(j, "lambda", g.lambda, w);
  read_opt(j, "sigma_mem", g.sigma_mem, w);
  read_opt(j, "sigma_broad", g.sigma_broad, w);
  return g;
}

inline Json to_json(const EncoderSection& e) {
  Json j{{"kind", e.kind}};
  if (e.kind == "anisotropic") {
    j["kappa_t"] = e.anisotropic.kappa_t;
    j["kappa_n"] = e.anisotropic.kappa_n;
    j["width"] = e.anisotropic.width;
    if (std::isfinite(e.anisotropic.saturation)) j["saturation"] = e.anisotropic.saturation;
    if (std::isfinite(e.anisotropic.max_normal_offset)) j["max_normal_offset"] = e.anisotropic.max_normal_offset;
  } else if (e.kind == "linear" || e.kind == "quadratic") {
    if (e.linear.rows > 0) j["matrix"] = to_json(e.linear);
    if (e.kind == "quadratic") {
      Json q = Json::array();
      for (const auto& m : e.quad) q.push_back(to_json(m));
      j["quad"] = q;
    }
  } else if (e.kind == "smooth_net") {
    j["widths"] = e.widths;
    j["seed"] = e.seed;
  }
  return j;
}

inline EncoderSection encoder_from_json(const Json& j) {
  const std::string w = "encoder";
  require_known_keys(j, {"kind", "kappa_t", "kappa_n", "width", "saturation", "max_normal_offset", "matrix", "quad", "widths", "seed"},
                     w);
  EncoderSection e;
  read_req(j, "kind", e.kind, w);
  if (e.kind == "anisotropic") {
    require_known_keys(j, {"kind", "kappa_t", "kappa_n", "width", "saturation", "max_normal_offset"}, w);
    read_opt(j, "kappa_t", e.anisotropic.kappa_t, w);
    read_opt(j, "kappa_n", e.anisotropic.kappa_n, w);
    read_opt(j, "width", e.anisotropic.width, w);
    read_opt(j, "saturation", e.anisotropic.saturation, w);
    read_opt(j, "max_normal_offset", e.anisotropic.max_normal_offset, w);
  } else if (e.kind == "linear") {
    require_known_keys(j, {"kind", "matrix"}, w);
    if (j.contains("matrix")) e.linear = matrix_from_json(j.at("matrix"), w + ".matrix");
  } else if (e.kind == "quadratic") {
    require_known_keys(j, {"kind", "matrix", "quad"}, w);
    if (j.contains("matrix")) e.linear = matrix_from_json(j.at("matrix"), w + ".matrix");
    if (!j.contains("quad")) throw ConfigError(w + ": missing required key 'quad'");
    for (const auto& q : j.at("quad")) e.quad.push_back(matrix_from_json(q, w + ".quad"));
  } else if (e.kind == "smooth_net") {
    require_known_keys(j, {"kind", "widths", "seed"}, w);
    read_req(j, "widths", e.widths, w);
    read_opt(j, "seed", e.seed, w);
  } else {
    throw ConfigError(w + ".kind: expected anisotropic, linear, quadratic or smooth_net (got '" + e.kind + "')");
  }
  return e;
}

inline const char* law_name(shift::ProbeLawKind k) { return k == shift::ProbeLawKind::sphere ? "sphere" : "gaussian"; }

inline Json to_json(const ShiftScanSection& s) {
  return Json{{"eps_grid", s.eps_grid}, {"points", s.points}, {"draws", s.draws}, {"law", law_name(s.law)}};
}

inline ShiftScanSection shift_scan_from_json(const Json& j) {
  const std::string w = "shift_scan";
  require_known_keys(j, {"eps_grid", "points", "draws", "law"}, w);
  ShiftScanSection s;
  read_opt(j, "eps_grid", s.eps_grid, w);
  read_opt(j, "points", s.points, w);
  read_opt(j, "draws", s.draws, w);
  if (j.contains("law")) {
    std::string law;
    read_opt(j, "law", law, w);
    if (law == "gaussian")
      s.law = shift::ProbeLawKind::gaussian;
    else if (law == "sphere")
      s.law = shift::ProbeLawKind::sphere;
    else
      throw ConfigError(w + ".law: expected 'gaussian' or 'sphere'");
  }
  return s;
}

inline Json bound_sweep_to_json(const bound::BoundSweepConfig& b) {
  return Json{{"lambdas", b.lambdas},         {"eps", b.eps},
              {"eps_grid", b.eps_grid},       {"regime_tolerance", b.regime_tolerance},
              {"kl_samples", b.kl_samples},   {"gap_samples", b.gap_samples},
              {"points", b.points},           {"draws", b.draws},
              {"b_samples", b.b_samples},     {"bootstrap", b.bootstrap}};
}

inline void read_bound_sweep(const Json& j, bound::BoundSweepConfig& b) {
  const std::string w = "bound_sweep";
  require_known_keys(j,
                     {"lambdas", "eps", "eps_grid", "regime_tolerance", "kl_samples", "gap_samples", "points", "draws",
                      "b_samples", "bootstrap"},
                     w);
  read_opt(j, "lambdas", b.lambdas, w);
  read_opt(j, "eps", b.eps, w);
  read_opt(j, "eps_grid", b.eps_grid, w);
  read_opt(j, "regime_tolerance", b.regime_tolerance, w);
  read_opt(j, "kl_samples", b.kl_samples, w);
  read_opt(j, "gap_samples", b.gap_samples, w);
  read_opt(j, "points", b.points, w);
  read_opt(j, "draws", b.draws, w);
  read_opt(j, "b_samples", b.b_samples, w);
  read_opt(j, "bootstrap", b.bootstrap, w);
}

inline Json to_json(const DataSection& d) {
  const auto& s = d.spec;
  return Json{{"n_train", d.n_train},
              {"n_test", d.n_test},
              {"size", s.size},
              {"channels", s.channels},
              {"lambda_img", s.lambda_img},
              {"stored_latents", s.stored_latents},
              {"seed", s.seed},
              {"real_offset", s.real_offset},
              {"real_ramp", s.real_ramp},
              {"texture_mid", s.texture_mid},
              {"texture_fine", s.texture_fine},
              {"latent_channels", s.latent_channels},
              {"hidden_channels", s.hidden_channels},
              {"decoder_gain", s.decoder_gain},
              {"fake_amp", s.fake_amp},
              {"artifact", s.artifact},
              {"noise_min", s.noise_min},
              {"noise_max", s.noise_max}};
}

inline DataSection data_from_json(const Json& j) {
  const std::string w = "data";
  require_known_keys(j,
                     {"n_train", "n_test", "size", "channels", "lambda_img", "stored_latents", "seed", "real_offset",
                      "real_ramp", "texture_mid", "texture_fine", "latent_channels", "hidden_channels", "decoder_gain",
                      "fake_amp", "artifact", "noise_min", "noise_max"},
                     w);
  DataSection d;
  auto& s = d.spec;
  read_opt(j, "n_train", d.n_train, w);
  read_opt(j, "n_test", d.n_test, w);
  read_opt(j, "size", s.size, w);
  read_opt(j, "channels", s.channels, w);
  read_opt(j, "lambda_img", s.lambda_img, w);
  read_opt(j, "stored_latents", s.stored_latents, w);
  read_opt(j, "seed", s.seed, w);
  read_opt(j, "real_offset", s.real_offset, w);
  read_opt(j, "real_ramp", s.real_ramp, w);
  read_opt(j, "texture_mid", s.texture_mid, w);
  read_opt(j, "texture_fine", s.texture_fine, w);
  read_opt(j, "latent_channels", s.latent_channels, w);
  read_opt(j, "hidden_channels", s.hidden_channels, w);
  read_opt(j, "decoder_gain", s.decoder_gain, w);
  read_opt(j, "fake_amp", s.fake_amp, w);
  read_opt(j, "artifact", s.artifact, w);
  read_opt(j, "noise_min", s.noise_min, w);
  read_opt(j, "noise_max", s.noise_max, w);
  return d;
}

inline Json to_json(const det::TrainConfig& t) {
  return Json{{"gamma", t.gamma},   {"lr", t.lr},         {"batch_size", t.batch_size},
              {"epochs", t.epochs}, {"ra_weight", t.ra_weight}, {"beta1", t.beta1},
              {"beta2", t.beta2},   {"adam_eps", t.adam_eps},   {"adversarial_drp", t.adversarial_drp}};
}

inline det::TrainConfig train_from_json(const Json& j) {
  const std::string w = "train";
  require_known_keys(j, {"gamma", "lr", "batch_size", "epochs", "ra_weight", "beta1", "beta2", "adam_eps", "adversarial_drp"},
                     w);
  det::TrainConfig t;
  read_opt(j, "gamma", t.gamma, w);
  read_opt(j, "lr", t.lr, w);
  read_opt(j, "batch_size", t.batch_size, w);
  read_opt(j, "epochs", t.epochs, w);
  read_opt(j, "ra_weight", t.ra_weight, w);
  read_opt(j, "beta1", t.beta1, w);
  read_opt(j, "beta2", t.beta2, w);
  read_opt(j, "adam_eps", t.adam_eps, w);
  read_opt(j, "adversarial_drp", t.adversarial_drp, w);
  return t;
}

inline Json to_json(const eval::RobustnessGrid& g) {
  return Json{{"blur_sigmas", g.blur_sigmas}, {"jpeg_qfs", g.jpeg_qfs}, {"include_baseline", g.include_baseline}};
}

inline eval::RobustnessGrid eval_grid_from_json(const Json& j) {
  const std::string w = "eval";
  require_known_keys(j, {"blur_sigmas", "jpeg_qfs", "include_baseline"}, w);
  eval::RobustnessGrid g;
  read_opt(j, "blur_sigmas", g.blur_sigmas, w);
  read_opt(j, "jpeg_qfs", g.jpeg_qfs, w);
  read_opt(j, "include_baseline", g.include_baseline, w);
  return g;
}

// ---------------------------------------------------------------------------
// Whole run

/// Parses a run configuration. A config file must state its seed.
inline RunConfig run_config_from_json(const Json& j) {
  require_known_keys(j,
                     {"seed", "threads", "output_dir", "testbed", "generator", "encoder", "shift_scan", "bound_sweep",
                      "data", "detector", "train", "eval"},
                     "config");
  RunConfig c;
  read_req(j, "seed", c.seed, "config");
  read_opt(j, "threads", c.threads, "config");
  read_opt(j, "output_dir", c.output_dir, "config");
  if (j.contains("testbed")) c.testbed = testbed_from_json(j.at("testbed"));
  if (j.contains("generator")) c.generator = generator_from_json(j.at("generator"));
  if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
  if (j.contains("shift_scan")) c.shift_scan = shift_scan_from_json(j.at("shift_scan"));
  if (j.contains("bound_sweep")) read_bound_sweep(j.at("bound_sweep"), c.bound_sweep);
  if (j.contains("data")) c.data = data_from_json(j.at("data"));
  if (j.contains("detector")) c.detector = det::detector_config_from_json(j.at("detector"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("eval")) c.eval = eval_grid_from_json(j.at("eval"));
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

/// Resolved configuration with every default filled in.
inline Json to_json(const RunConfig& c) {
  return Json{{"seed", c.seed},
              {"threads", c.threads},
              {"output_dir", c.output_dir},
              {"testbed", to_json(c.testbed)},
              {"generator", to_json(c.generator)},
              {"encoder", to_json(c.encoder)},
              {"shift_scan", to_json(c.shift_scan)},
              {"bound_sweep", bound_sweep_to_json(c.bound_sweep)},
              {"data", to_json(c.data)},
              {"detector", det::to_json(c.detector)},
              {"train", to_json(c.train)},
              {"eval", to_json(c.eval)}};
}

// ---------------------------------------------------------------------------
// Builders

inline std::shared_ptr<const testbed::ManifoldModel> build_manifold(const RunConfig& c) {
  return std::make_shared<const testbed::ManifoldModel>(c.testbed.manifold);
}

inline enc::EncoderHandle build_encoder(const RunConfig& c, std::shared_ptr<const testbed::ManifoldModel> manifold) {
  const std::size_t n = manifold->ambient_dim();
  const auto& e = c.encoder;
  if (e.kind == "anisotropic") return enc::make_anisotropic(std::move(manifold), e.anisotropic);
  if (e.kind == "linear" || e.kind == "quadratic") {
    Matrix a = e.linear.rows > 0 ? e.linear : Matrix::identity(n);
    if (a.cols != n) throw ConfigError("encoder.matrix: column count must equal the ambient dimension");
    if (e.kind == "linear") return enc::make_linear(std::move(a));
    return enc::make_quadratic(std::move(a), e.quad);
  }
  if (e.widths.empty() || e.widths.front() != n)
    throw ConfigError("encoder.widths: first width must equal the ambient dimension");
  return enc::make_smooth_net(e.widths, e.seed);
}

inline testbed::TrainingSet build_anchors(const RunConfig& c, const testbed::ManifoldModel& m) {
  Rng rng = make_stream(c.seed, 0x616E63686F72ULL);
  return testbed::make_training_set(m, c.testbed.num_anchors, rng);
}

inline testbed::GenModel build_generator(const RunConfig& c, const testbed::TrainingSet& anchors) {
  testbed::GenSpec g;
  g.lambda = c.generator.lambda;
  g.sigma_mem = c.generator.sigma_mem > 0.0 ? c.generator.sigma_mem : c.testbed.eps0;
  g.sigma_broad = c.generator.sigma_broad;
  return testbed::GenModel(anchors.anchors, g);
}

inline bound::BoundSweepConfig build_bound_config(const RunConfig& c) {
  if (c.encoder.kind != "anisotropic") throw ConfigError("bound-sweep: encoder.kind must be 'anisotropic'");
  bound::BoundSweepConfig b = c.bound_sweep;
  b.manifold = c.testbed.manifold;
  b.num_anchors = c.testbed.num_anchors;
  b.eps0 = c.testbed.eps0;
  b.sigma_mem = c.generator.sigma_mem;
  b.sigma_broad = c.generator.sigma_broad;
  b.encoder = c.encoder.anisotropic;
  b.seed = c.seed;
  b.threads = c.threads;
  return b;
}

inline shift::ShiftScanOptions build_scan_options(const RunConfig& c) {
  shift::ShiftScanOptions o;
  o.points = c.shift_scan.points;
  o.draws = c.shift_scan.draws;
  o.law = c.shift_scan.law;
  o.seed = c.seed;
  o.threads = c.threads;
  return o;
}

inline det::TrainConfig build_train_config(const RunConfig& c) {
  det::TrainConfig t = c.train;
  t.seed = c.seed;
  t.threads = c.threads;
  return t;
}

}  // namespace radet::io
