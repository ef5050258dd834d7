#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/parallel.hpp"
#include "radet/core/rng.hpp"
#include "radet/det/image.hpp"
#include "radet/det/image_encoder.hpp"
#include "radet/det/tensor.hpp"

namespace radet::det {

enum class Branch : std::size_t { sem = 0, dist = 1, diff = 2, res = 3 };
inline constexpr std::size_t kNumBranches = 4;
inline constexpr std::array<const char*, kNumBranches> kBranchNames = {"sem", "dist", "diff", "res"};

enum class DistanceFeature { l2, dca };

struct DetectorConfig {
  ImageEncoderSpec encoder;
  double eps_pix = 8.0 / 255.0;
  std::size_t drp_c1 = 4, drp_c2 = 8, drp_c3 = 8, drp_embed = 4;
  std::size_t dist_hidden = 8;
  std::size_t diff_hidden = 16;
  std::size_t res_channels = 8;
  double residual_gain = 32.0;
  std::array<bool, kNumBranches> branches = {true, true, true, true};
  bool learn_aggregation = false;
  DistanceFeature distance_feature = DistanceFeature::l2;
  std::uint64_t init_seed = 1;

  std::size_t channels() const { return encoder.channels; }
  std::size_t size() const { return encoder.size; }
  bool enabled(Branch b) const { return branches[static_cast<std::size_t>(b)]; }
  /// The perturbation path only matters when a branch reads the perturbed embedding.
  bool needs_probe() const { return enabled(Branch::dist) || enabled(Branch::diff); }
};

/// Offsets of every parameter block in the flat parameter vector.
struct ParamLayout {
  struct Block {
    std::size_t offset = 0, count = 0;
  };
  ConvShape drp1, drp2, drp3, drp4, drp5, res1, res2, res3;
  Block b_drp1, b_drp2, b_proj, b_drp3, b_drp4, b_drp5;
  Block b_sem, b_dist1, b_dist2, b_diff1, b_diff2;
  Block b_res1, b_res2, b_res3, b_res_out, b_agg;
  std::size_t drp_begin = 0, drp_end = 0;
  std::size_t total = 0;

  explicit ParamLayout(const DetectorConfig& c) {
    if (c.size() % 4) throw ConfigError("detector: image size must be divisible by 4");
    const std::size_t C = c.channels(), D = c.encoder.dim;
    drp1 = {C, c.drp_c1, 3, 1, 1};
    drp2 = {c.drp_c1, c.drp_c2, 3, 1, 1};
    drp3 = {c.drp_c2 + c.drp_embed, c.drp_c3, 3, 1, 1};
    drp4 = {c.drp_c3 + c.drp_c2, c.drp_c1, 3, 1, 1};
    drp5 = {c.drp_c1 + c.drp_c1, C, 3, 1, 1};
    res1 = {C, c.res_channels, 3, 2, 1};
    res2 = {c.res_channels, c.res_channels, 3, 2, 1};
    res3 = {c.res_channels, c.res_channels, 3, 1, 1};
    auto take = [&](std::size_t n) {
      Block b{total, n};
      total += n;
      return b;
    };
    drp_begin = total;
    b_drp1 = take(drp1.param_count());
    b_drp2 = take(drp2.param_count());
    b_proj = take(nn::linear_params(D, c.drp_embed));
    b_drp3 = take(drp3.param_count());
    b_drp4 = take(drp4.param_count());
    b_drp5 = take(drp5.param_count());
    drp_end = total;
    b_sem = take(nn::linear_params(D, 1));
    b_dist1 = take(nn::linear_params(1, c.dist_hidden));
    b_dist2 = take(nn::linear_params(c.dist_hidden, 1));
    b_diff1 = take(nn::linear_params(D, c.diff_hidden));
    b_diff2 = take(nn::linear_params(c.diff_hidden, 1));
    b_res1 = take(res1.param_count());
    b_res2 = take(res2.param_count());
    b_res3 = take(res3.param_count());
    b_res_out = take(nn::linear_params(c.res_channels, 1));
    b_agg = take(kNumBranches);
  }
};

struct BranchLogits {
  std::array<double, kNumBranches> logit{};
  double score = 0.0;  // aggregated logit
  double probability() const;
};

namespace detail {
inline double sigmoid(double z) { return nn::sigmoid(z); }
}  // namespace detail

inline double BranchLogits::probability() const { return detail::sigmoid(score); }

/// Everything the backward pass needs from one sample's forward pass.
struct SampleTrace {
  Image x;
  ImageEncoder::Trace enc_x;
  bool probed = false;
  // perturbation generator
  Tensor pre1, h1, p1, pre2, h2, p2, cat3, pre3, h3, cat4, pre4, h4, cat5, pre5;
  std::vector<double> emb;
  Tensor delta;
  Image xp;
  ImageEncoder::Trace enc_xp;
  // discrepancy features
  double s = 1.0, d = 0.0;
  std::vector<double> v;
  std::vector<double> dist_h, diff_h;
  // residual branch
  Tensor r, rpre1, ra1, rpre2, ra2, rpre3, ra3;
  std::vector<double> rfeat;
  BranchLogits out;
  std::size_t clamped_pixels = 0;
};

class Detector {
 public:
  explicit Detector(DetectorConfig cfg) : cfg_(std::move(cfg)), layout_(cfg_), encoder_(cfg_.encoder) {
    if (!(cfg_.eps_pix > 0.0)) throw ConfigError("detector: eps_pix must be positive");
    if (!cfg_.enabled(Branch::sem) && !cfg_.enabled(Branch::dist) && !cfg_.enabled(Branch::diff) &&
        !cfg_.enabled(Branch::res))
      throw ConfigError("detector: at least one branch must be enabled");
    params_.assign(layout_.total, 0.0);
    dca_mean_.assign(cfg_.encoder.dim, 0.0);
    dca_mean_p_.assign(cfg_.encoder.dim, 0.0);
    init_params(cfg_.init_seed);
  }

  const DetectorConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  const ImageEncoder& encoder() const { return encoder_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::span<const double> block(const ParamLayout::Block& b) const { return {params_.data() + b.offset, b.count}; }

  const std::vector<double>& dca_mean() const { return dca_mean_; }
  const std::vector<double>& dca_mean_perturbed() const { return dca_mean_p_; }
  void set_dca_means(std::vector<double> mu, std::vector<double> mu_p) {
    if (mu.size() != cfg_.encoder.dim || mu_p.size() != cfg_.encoder.dim)
      throw ConfigError("detector: DCA mean dimension mismatch");
    dca_mean_ = std::move(mu);
    dca_mean_p_ = std::move(mu_p);
  }

  void init_params(std::uint64_t seed) {
    Rng rng = make_stream(seed, 0x706172);
    const auto& L = layout_;
    auto fill_conv = [&](const ParamLayout::Block& b, const ConvShape& s, double gain) {
      const double sd = gain / std::sqrt(static_cast<double>(s.cin * s.k * s.k));
      for (std::size_t i = 0; i < s.weight_count(); ++i) params_[b.offset + i] = sd * std_normal(rng);
      for (std::size_t i = s.weight_count(); i < b.count; ++i) params_[b.offset + i] = 0.0;
    };
    auto fill_linear = [&](const ParamLayout::Block& b, std::size_t in, std::size_t out, double gain) {
      const double sd = gain / std::sqrt(static_cast<double>(in));
      for (std::size_t i = 0; i < in * out; ++i) params_[b.offset + i] = sd * std_normal(rng);
      for (std::size_t i = in * out; i < b.count; ++i) params_[b.offset + i] = 0.0;
    };
    const std::size_t D = cfg_.encoder.dim;
    fill_conv(L.b_drp1, L.drp1, std::sqrt(2.0));
    fill_conv(L.b_drp2, L.drp2, std::sqrt(2.0));
    fill_linear(L.b_proj, D, cfg_.drp_embed, 1.0);
    fill_conv(L.b_drp3, L.drp3, std::sqrt(2.0));
    fill_conv(L.b_drp4, L.drp4, std::sqrt(2.0));
    fill_conv(L.b_drp5, L.drp5, 1.0);
    fill_linear(L.b_sem, D, 1, 0.1);
    fill_linear(L.b_dist1, 1, cfg_.dist_hidden, 1.0);
    fill_linear(L.b_dist2, cfg_.dist_hidden, 1, 0.1);
    fill_linear(L.b_diff1, D, cfg_.diff_hidden, 1.0);
    fill_linear(L.b_diff2, cfg_.diff_hidden, 1, 0.1);
    fill_conv(L.b_res1, L.res1, std::sqrt(2.0));
    fill_conv(L.b_res2, L.res2, std::sqrt(2.0));
    fill_conv(L.b_res3, L.res3, std::sqrt(2.0));
    fill_linear(L.b_res_out, cfg_.res_channels, 1, 0.1);
    for (std::size_t i = 0; i < kNumBranches; ++i) params_[L.b_agg.offset + i] = 1.0;
  }

  // ---- perturbation generator ---------------------------------------------

  /// Runs the generator on `x` conditioned on the clean embedding; fills the trace.
  void drp_forward(SampleTrace& t) const {
    const auto& L = layout_;
    t.pre1 = nn::conv2d(t.x, L.drp1, block(L.b_drp1));
    t.h1 = nn::silu(t.pre1);
    t.p1 = nn::avgpool(t.h1, 2);
    t.pre2 = nn::conv2d(t.p1, L.drp2, block(L.b_drp2));
    t.h2 = nn::silu(t.pre2);
    t.p2 = nn::avgpool(t.h2, 2);
    t.emb = nn::linear(t.enc_x.e, cfg_.drp_embed, block(L.b_proj));
    Tensor embmap(cfg_.drp_embed, t.p2.h, t.p2.w);
    for (std::size_t k = 0; k < cfg_.drp_embed; ++k) std::fill(embmap.plane(k), embmap.plane(k) + t.p2.h * t.p2.w, t.emb[k]);
    t.cat3 = nn::concat(t.p2, embmap);
    t.pre3 = nn::conv2d(t.cat3, L.drp3, block(L.b_drp3));
    t.h3 = nn::silu(t.pre3);
    t.cat4 = nn::concat(nn::upsample2(t.h3), t.h2);
    t.pre4 = nn::conv2d(t.cat4, L.drp4, block(L.b_drp4));
    t.h4 = nn::silu(t.pre4);
    t.cat5 = nn::concat(nn::upsample2(t.h4), t.h1);
    t.pre5 = nn::conv2d(t.cat5, L.drp5, block(L.b_drp5));
    t.delta = Tensor(t.pre5.c, t.pre5.h, t.pre5.w);
    for (std::size_t i = 0; i < t.delta.size(); ++i) t.delta.v[i] = cfg_.eps_pix * std::tanh(t.pre5.v[i]);
  }

  /// The bounded perturbation for `img`; |delta| <= eps_pix elementwise.
  Tensor drp_delta(const Image& img) const {
    SampleTrace t;
    t.x = img;
    t.enc_x = encoder_.forward(img);
    drp_forward(t);
    return t.delta;
  }

  Tensor drp_delta(const Image& img, const std::vector<double>& clean_embedding) const {
    if (clean_embedding.size() != cfg_.encoder.dim) throw ConfigError("drp: embedding dimension mismatch");
    if (img.c != cfg_.channels() || img.h != cfg_.size() || img.w != cfg_.size())
      throw ConfigError("drp: image shape mismatch");
    SampleTrace t;
    t.x = img;
    t.enc_x.e = clean_embedding;
    drp_forward(t);
    return t.delta;
  }

  // ---- heads ---------------------------------------------------------------

  double distance_feature(const std::vector<double>& e, const std::vector<double>& ep) const {
    if (cfg_.distance_feature == DistanceFeature::dca) {
      double s = 0.0;
      for (std::size_t j = 0; j < e.size(); ++j) s += (e[j] - dca_mean_[j]) * (ep[j] - dca_mean_p_[j]);
      return s / static_cast<double>(e.size());
    }
    double s = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) s += (e[j] - ep[j]) * (e[j] - ep[j]);
    return std::sqrt(s + 1e-12);
  }

  static double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      ab += a[j] * b[j];
      aa += a[j] * a[j];
      bb += b[j] * b[j];
    }
    if (aa == 0.0 || bb == 0.0) throw NumericError("detector: zero embedding in cosine similarity");
    return ab / std::sqrt(aa * bb);
  }

  /// Residual-branch CNN features (global-average pooled).
  void residual_forward(SampleTrace& t) const {
    const auto& L = layout_;
    t.r = median_residual(t.x);
    for (auto& x : t.r.v) x *= cfg_.residual_gain;
    t.rpre1 = nn::conv2d(t.r, L.res1, block(L.b_res1));
    t.ra1 = nn::silu(t.rpre1);
    t.rpre2 = nn::conv2d(t.ra1, L.res2, block(L.b_res2));
    t.ra2 = nn::silu(t.rpre2);
    t.rpre3 = nn::conv2d(t.ra2, L.res3, block(L.b_res3));
    t.ra3 = nn::silu(t.rpre3);
    t.rfeat.assign(t.ra3.c, 0.0);
    const double inv = 1.0 / static_cast<double>(t.ra3.h * t.ra3.w);
    for (std::size_t ch = 0; ch < t.ra3.c; ++ch) {
      const double* p = t.ra3.plane(ch);
      double s = 0.0;
      for (std::size_t i = 0; i < t.ra3.h * t.ra3.w; ++i) s += p[i];
      t.rfeat[ch] = s * inv;
    }
  }

  std::vector<double> residual_features(const Image& img) const {
    SampleTrace t;
    t.x = img;
    residual_forward(t);
    return t.rfeat;
  }

  double aggregation_weight(std::size_t b) const {
    if (!cfg_.branches[b]) return 0.0;
    return cfg_.learn_aggregation ? params_[layout_.b_agg.offset + b] : 1.0;
  }

  /// Branch logits from precomputed features; fills the head activations in `t`.
  void heads_forward(SampleTrace& t) const {
    const auto& L = layout_;
    auto& lg = t.out.logit;
    lg.fill(0.0);
    if (cfg_.enabled(Branch::sem)) lg[0] = nn::linear(t.enc_x.e, 1, block(L.b_sem))[0];
    if (cfg_.enabled(Branch::dist)) {
      const std::vector<double> in = {t.d};
      t.dist_h = nn::linear(in, cfg_.dist_hidden, block(L.b_dist1));
      for (auto& h : t.dist_h) h = std::tanh(h);
      lg[1] = nn::linear(t.dist_h, 1, block(L.b_dist2))[0];
    }
    if (cfg_.enabled(Branch::diff)) {
      t.diff_h = nn::linear(t.v, cfg_.diff_hidden, block(L.b_diff1));
      for (auto& h : t.diff_h) h = std::tanh(h);
      lg[2] = nn::linear(t.diff_h, 1, block(L.b_diff2))[0];
    }
    if (cfg_.enabled(Branch::res)) lg[3] = nn::linear(t.rfeat, 1, block(L.b_res_out))[0];
    t.out.score = 0.0;
    for (std::size_t b = 0; b < kNumBranches; ++b) {
      if (!std::isfinite(lg[b])) throw NumericError(std::string("detector: non-finite logit in branch ") + kBranchNames[b]);
      t.out.score += aggregation_weight(b) * lg[b];
    }
  }

  void features_from_embeddings(SampleTrace& t) const {
    const auto& e = t.enc_x.e;
    const auto& ep = t.enc_xp.e;
    t.v.resize(e.size());
    for (std::size_t j = 0; j < e.size(); ++j) t.v[j] = e[j] - ep[j];
    t.d = distance_feature(e, ep);
    double ee = 0.0, pp = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) {
      ee += e[j] * e[j];
      pp += ep[j] * ep[j];
    }
    t.s = (ee > 0.0 && pp > 0.0) ? cosine(e, ep) : 1.0;
  }

  /// Full forward pass. The probe path runs when a branch needs it or `force_probe`.
  SampleTrace forward(const Image& img, bool force_probe = false) const {
    if (img.c != cfg_.channels() || img.h != cfg_.size() || img.w != cfg_.size())
      throw ConfigError("detector: image shape mismatch");
    SampleTrace t;
    t.x = img;
    t.enc_x = encoder_.forward(img);
    t.probed = force_probe || cfg_.needs_probe();
    if (t.probed) {
      drp_forward(t);
      t.xp = Image(img.c, img.h, img.w);
      for (std::size_t i = 0; i < img.size(); ++i) {
        const double raw = img.v[i] + t.delta.v[i];
        if (raw <= 0.0 || raw >= 1.0) ++t.clamped_pixels;
        t.xp.v[i] = clamp01(raw);
      }
      t.enc_xp = encoder_.forward(t.xp);
    } else {
      t.enc_xp = t.enc_x;
    }
    features_from_embeddings(t);
    if (cfg_.enabled(Branch::res)) residual_forward(t);
    heads_forward(t);
    return t;
  }

  BranchLogits logits(const Image& img) const { return forward(img).out; }
  double predict(const Image& img) const { return logits(img).probability(); }

  BranchLogits logits_from_embeddings(const std::vector<double>& e, const std::vector<double>& ep,
                                      const std::vector<double>& r_features) const {
    if (e.size() != cfg_.encoder.dim || ep.size() != cfg_.encoder.dim)
      throw ConfigError("detector: embedding dimension mismatch");
    if (cfg_.enabled(Branch::res) && r_features.size() != cfg_.res_channels)
      throw ConfigError("detector: residual feature dimension mismatch");
    SampleTrace t;
    t.enc_x.e = e;
    t.enc_xp.e = ep;
    t.rfeat = r_features;
    features_from_embeddings(t);
    heads_forward(t);
    return t.out;
  }

  double predict_from_embeddings(const std::vector<double>& e, const std::vector<double>& ep,
                                 const std::vector<double>& r_features) const {
    return logits_from_embeddings(e, ep, r_features).probability();
  }

  // ---- backward ------------------------------------------------------------

  struct Seeds {
    double gz = 0.0;  // dL/dscore
    double gs = 0.0;  // dL/dcosine
    double gd = 0.0;  // extra dL/d(distance feature)
  };

  /// Accumulates dL/dparams for one sample into `grad`.
  void backward(const SampleTrace& t, const Seeds& seeds, std::span<double> grad) const {
    const auto& L = layout_;
    auto gblk = [&](const ParamLayout::Block& b) { return std::span<double>(grad.data() + b.offset, b.count); };
    const std::size_t D = cfg_.encoder.dim;
    std::array<double, kNumBranches> gl{};
    for (std::size_t b = 0; b < kNumBranches; ++b) {
      gl[b] = seeds.gz * aggregation_weight(b);
      if (cfg_.learn_aggregation && cfg_.branches[b]) grad[L.b_agg.offset + b] += seeds.gz * t.out.logit[b];
    }
    if (cfg_.enabled(Branch::sem)) {
      const std::vector<double> g = {gl[0]};
      nn::linear_backward(t.enc_x.e, g, block(L.b_sem), gblk(L.b_sem));
    }
    double gd = seeds.gd;
    std::vector<double> gv(D, 0.0);
    if (cfg_.enabled(Branch::dist)) {
      const std::vector<double> g = {gl[1]};
      auto gh = nn::linear_backward(t.dist_h, g, block(L.b_dist2), gblk(L.b_dist2));
      for (std::size_t j = 0; j < gh.size(); ++j) gh[j] *= 1.0 - t.dist_h[j] * t.dist_h[j];
      const std::vector<double> in = {t.d};
      gd += nn::linear_backward(in, gh, block(L.b_dist1), gblk(L.b_dist1))[0];
    }
    if (cfg_.enabled(Branch::diff)) {
      const std::vector<double> g = {gl[2]};
      auto gh = nn::linear_backward(t.diff_h, g, block(L.b_diff2), gblk(L.b_diff2));
      for (std::size_t j = 0; j < gh.size(); ++j) gh[j] *= 1.0 - t.diff_h[j] * t.diff_h[j];
      gv = nn::linear_backward(t.v, gh, block(L.b_diff1), gblk(L.b_diff1));
    }
    if (cfg_.enabled(Branch::res)) residual_backward(t, gl[3], grad);
    if (!t.probed) return;

    // Gradient with respect to the perturbed embedding e'.
    const auto& e = t.enc_x.e;
    const auto& ep = t.enc_xp.e;
    std::vector<double> gep(D, 0.0);
    for (std::size_t j = 0; j < D; ++j) gep[j] -= gv[j];
    if (gd != 0.0) {
      if (cfg_.distance_feature == DistanceFeature::dca) {
        for (std::size_t j = 0; j < D; ++j) gep[j] += gd * (e[j] - dca_mean_[j]) / static_cast<double>(D);
      } else {
        for (std::size_t j = 0; j < D; ++j) gep[j] -= gd * t.v[j] / t.d;
      }
    }
    if (seeds.gs != 0.0) {
      double ee = 0.0, pp = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        ee += e[j] * e[j];
        pp += ep[j] * ep[j];
      }
      const double ne = std::sqrt(ee), np = std::sqrt(pp);
      if (ne > 0.0 && np > 0.0)
        for (std::size_t j = 0; j < D; ++j) gep[j] += seeds.gs * (e[j] / (ne * np) - t.s * ep[j] / pp);
    }
    bool any = false;
    for (double g : gep) any = any || g != 0.0;
    if (!any) return;

    Tensor gxp = encoder_.vjp(t.enc_xp, gep);
    // Through the clamp and the tanh squashing.
    Tensor gpre5(t.pre5.c, t.pre5.h, t.pre5.w);
    for (std::size_t i = 0; i < gpre5.size(); ++i) {
      const double raw = t.x.v[i] + t.delta.v[i];
      if (raw <= 0.0 || raw >= 1.0) continue;
      const double th = t.delta.v[i] / cfg_.eps_pix;
      gpre5.v[i] = gxp.v[i] * cfg_.eps_pix * (1.0 - th * th);
    }
    drp_backward(t, gpre5, grad);
  }

 private:
  void residual_backward(const SampleTrace& t, double glogit, std::span<double> grad) const {
    const auto& L = layout_;
    auto gblk = [&](const ParamLayout::Block& b) { return std::span<double>(grad.data() + b.offset, b.count); };
    const std::vector<double> g = {glogit};
    const auto gf = nn::linear_backward(t.rfeat, g, block(L.b_res_out), gblk(L.b_res_out));
    Tensor ga3(t.ra3.c, t.ra3.h, t.ra3.w);
    const double inv = 1.0 / static_cast<double>(t.ra3.h * t.ra3.w);
    for (std::size_t ch = 0; ch < ga3.c; ++ch) std::fill(ga3.plane(ch), ga3.plane(ch) + ga3.h * ga3.w, gf[ch] * inv);
    auto gp3 = nn::silu_backward(t.rpre3, std::move(ga3));
    auto ga2 = nn::conv2d_backward(t.ra2, L.res3, block(L.b_res3), gp3, gblk(L.b_res3));
    auto gp2 = nn::silu_backward(t.rpre2, std::move(ga2));
    auto ga1 = nn::conv2d_backward(t.ra1, L.res2, block(L.b_res2), gp2, gblk(L.b_res2));
    auto gp1 = nn::silu_backward(t.rpre1, std::move(ga1));
    nn::conv2d_backward(t.r, L.res1, block(L.b_res1), gp1, gblk(L.b_res1), false);
  }

  void drp_backward(const SampleTrace& t, const Tensor& gpre5, std::span<double> grad) const {
    const auto& L = layout_;
    auto gblk = [&](const ParamLayout::Block& b) { return std::span<double>(grad.data() + b.offset, b.count); };
    auto gcat5 = nn::conv2d_backward(t.cat5, L.drp5, block(L.b_drp5), gpre5, gblk(L.b_drp5));
    auto [gu4, gh1a] = nn::split(gcat5, cfg_.drp_c1);
    auto gpre4 = nn::silu_backward(t.pre4, nn::upsample2_backward(gu4));
    auto gcat4 = nn::conv2d_backward(t.cat4, L.drp4, block(L.b_drp4), gpre4, gblk(L.b_drp4));
    auto [gu3, gh2a] = nn::split(gcat4, cfg_.drp_c3);
    auto gpre3 = nn::silu_backward(t.pre3, nn::upsample2_backward(gu3));
    auto gcat3 = nn::conv2d_backward(t.cat3, L.drp3, block(L.b_drp3), gpre3, gblk(L.b_drp3));
    auto [gp2, gemb] = nn::split(gcat3, cfg_.drp_c2);
    std::vector<double> gproj(cfg_.drp_embed, 0.0);
    for (std::size_t k = 0; k < cfg_.drp_embed; ++k) {
      const double* p = gemb.plane(k);
      for (std::size_t i = 0; i < gemb.h * gemb.w; ++i) gproj[k] += p[i];
    }
    nn::linear_backward(t.enc_x.e, gproj, block(L.b_proj), gblk(L.b_proj));
    Tensor gh2 = nn::avgpool_backward(gp2, 2);
    for (std::size_t i = 0; i < gh2.size(); ++i) gh2.v[i] += gh2a.v[i];
    auto gpre2 = nn::silu_backward(t.pre2, std::move(gh2));
    auto gp1 = nn::conv2d_backward(t.p1, L.drp2, block(L.b_drp2), gpre2, gblk(L.b_drp2));
    Tensor gh1 = nn::avgpool_backward(gp1, 2);
    for (std::size_t i = 0; i < gh1.size(); ++i) gh1.v[i] += gh1a.v[i];
    auto gpre1 = nn::silu_backward(t.pre1, std::move(gh1));
    nn::conv2d_backward(t.x, L.drp1, block(L.b_drp1), gpre1, gblk(L.b_drp1), false);
  }

  DetectorConfig cfg_;
  ParamLayout layout_;
  ImageEncoder encoder_;
  std::vector<double> params_;
  std::vector<double> dca_mean_, dca_mean_p_;
};

}  // namespace radet::det
