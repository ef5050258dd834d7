#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/parallel.hpp"
#include "radet/core/rng.hpp"
#include "radet/det/detector.hpp"

namespace radet::det {

struct ImageSet {
  std::vector<Image> images;
  std::vector<int> labels;  // 1 = real, 0 = fake
  std::size_t size() const { return images.size(); }
};

inline void check_labels(std::span<const int> labels) {
  for (int y : labels)
    if (y != 0 && y != 1) throw ConfigError("labels must be 0 or 1");
}

/// Mean binary cross-entropy on logits, label 1 = real.
inline double loss_bce(std::span<const double> logits, std::span<const int> labels) {
  if (logits.size() != labels.size() || logits.empty()) throw ConfigError("loss_bce: size mismatch or empty batch");
  check_labels(labels);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    s += std::max(z, 0.0) - labels[i] * z + std::log1p(std::exp(-std::abs(z)));
  }
  return s / static_cast<double>(logits.size());
}

struct RaLoss {
  double value = 0.0;
  bool skipped = false;  // batch lacked one of the classes
  bool active = false;   // hinge strictly positive
  double mean_real = 0.0;
  double mean_fake = 0.0;
  std::size_t n_real = 0, n_fake = 0;
};

/// relu(mean fake similarity - mean real similarity + gamma).
inline RaLoss loss_ra(std::span<const double> sims, std::span<const int> labels, double gamma) {
  if (sims.size() != labels.size()) throw ConfigError("loss_ra: size mismatch");
  check_labels(labels);
  RaLoss r;
  double sr = 0.0, sf = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (labels[i] == 1) {
      sr += sims[i];
      ++r.n_real;
    } else {
      sf += sims[i];
      ++r.n_fake;
    }
  }
  if (r.n_real == 0 || r.n_fake == 0) {
    r.skipped = true;
    return r;
  }
  r.mean_real = sr / static_cast<double>(r.n_real);
  r.mean_fake = sf / static_cast<double>(r.n_fake);
  const double h = r.mean_fake - r.mean_real + gamma;
  r.active = h > 0.0;
  r.value = r.active ? h : 0.0;
  return r;
}

struct CompositeLoss {
  double bce = 0.0;
  double ra = 0.0;
  double total = 0.0;
  RaLoss ra_detail;
};

inline CompositeLoss loss_comp(std::span<const double> logits, std::span<const double> sims,
                               std::span<const int> labels, double gamma, double ra_weight = 1.0) {
  CompositeLoss c;
  c.bce = loss_bce(logits, labels);
  c.ra_detail = loss_ra(sims, labels, gamma);
  c.ra = c.ra_detail.value;
  c.total = c.bce + ra_weight * c.ra;
  return c;
}

struct TrainConfig {
  double gamma = 0.1;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double ra_weight = 1.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  bool adversarial_drp = false;
  unsigned threads = 1;

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("train: gamma must be positive");
    if (!(lr >= 0.0)) throw ConfigError("train: learning rate must be non-negative");
    if (batch_size < 2) throw ConfigError("train: batch size must be >= 2");
    if (!(ra_weight >= 0.0)) throw ConfigError("train: ra_weight must be non-negative");
  }
};

struct BatchResult {
  CompositeLoss loss;
  std::vector<double> logits, sims;
  std::vector<double> grad;
  std::vector<std::size_t> clamped;  // per-sample clamp counts
};

/// Loss (and optionally the gradient) of one batch. Per-sample work may run in
/// parallel; gradients are summed in sample order.
inline BatchResult batch_loss(const Detector& model, std::span<const Image* const> images, std::span<const int> labels,
                              const TrainConfig& cfg, bool want_grad) {
  const std::size_t B = images.size();
  if (B == 0 || labels.size() != B) throw ConfigError("batch_loss: bad batch");
  const bool ra_on = cfg.ra_weight > 0.0 && model.config().needs_probe();
  std::vector<SampleTrace> traces(B);
  parallel_for(B, cfg.threads, [&](std::size_t i) { traces[i] = model.forward(*images[i], ra_on); });
  BatchResult r;
  r.logits.resize(B);
  r.sims.resize(B);
  r.clamped.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    r.logits[i] = traces[i].out.score;
    r.sims[i] = traces[i].s;
    r.clamped[i] = traces[i].clamped_pixels;
  }
  r.loss = loss_comp(r.logits, r.sims, labels, cfg.gamma, ra_on ? cfg.ra_weight : 0.0);
  if (!ra_on) {
    r.loss.ra = 0.0;
    r.loss.ra_detail.value = 0.0;
    r.loss.ra_detail.active = false;
  }
  if (!want_grad) return r;

  const auto& L = model.layout();
  const std::size_t P = L.total;
  const auto& ra = r.loss.ra_detail;
  std::vector<std::vector<double>> per(B, std::vector<double>(P, 0.0));
  std::vector<std::vector<double>> per_adv;
  if (cfg.adversarial_drp) per_adv.assign(B, std::vector<double>(P, 0.0));
  parallel_for(B, cfg.threads, [&](std::size_t i) {
    Detector::Seeds sd;
    sd.gz = (nn::sigmoid(r.logits[i]) - labels[i]) / static_cast<double>(B);
    if (ra_on && ra.active)
      sd.gs = cfg.ra_weight * (labels[i] == 1 ? -1.0 / static_cast<double>(ra.n_real) : 1.0 / static_cast<double>(ra.n_fake));
    model.backward(traces[i], sd, per[i]);
    if (cfg.adversarial_drp && labels[i] == 0 && ra.n_fake > 0) {
      // Generator ascends the perturbed-feature distance on fakes.
      Detector::Seeds adv;
      adv.gd = -1.0 / static_cast<double>(ra.n_fake);
      model.backward(traces[i], adv, per_adv[i]);
    }
  });
  r.grad.assign(P, 0.0);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t k = 0; k < P; ++k) r.grad[k] += per[i][k];
  if (cfg.adversarial_drp) {
    for (std::size_t k = L.drp_begin; k < L.drp_end; ++k) r.grad[k] = 0.0;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t k = L.drp_begin; k < L.drp_end; ++k) r.grad[k] += per_adv[i][k];
  }
  return r;
}

class Adam {
 public:
  Adam(std::size_t n, double lr, double b1, double b2, double eps) : m_(n, 0.0), v_(n, 0.0), lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

  void step(std::vector<double>& p, const std::vector<double>& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g[i] * g[i];
      p[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  std::vector<double> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss_bce = 0.0, loss_ra = 0.0, loss_comp = 0.0;
  double s_real = 0.0, s_fake = 0.0;  // batch means, averaged over batches
  std::size_t ra_skipped = 0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::vector<double> step_loss;  // loss_comp per optimizer step
  std::size_t steps = 0;
};

/// Population means of clean and perturbed embeddings, for the DCA distance feature.
inline void freeze_dca_means(Detector& model, const ImageSet& data, unsigned threads = 1) {
  const std::size_t D = model.config().encoder.dim;
  std::vector<std::vector<double>> e(data.size()), ep(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto t = model.forward(data.images[i], true);
    e[i] = t.enc_x.e;
    ep[i] = t.enc_xp.e;
  });
  std::vector<double> mu(D, 0.0), mup(D, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < D; ++j) {
      mu[j] += e[i][j];
      mup[j] += ep[i][j];
    }
  for (std::size_t j = 0; j < D; ++j) {
    mu[j] /= static_cast<double>(data.size());
    mup[j] /= static_cast<double>(data.size());
  }
  model.set_dca_means(std::move(mu), std::move(mup));
}

inline ImageSet fit_to_model(const Detector& model, const ImageSet& data, Rng& rng) {
  ImageSet out;
  out.labels = data.labels;
  out.images.reserve(data.size());
  for (const auto& img : data.images) out.images.push_back(random_crop(img, model.config().size(), rng));
  return out;
}

/// Joint first-order training of the generator and all heads on the composite loss.
inline TrainResult train(Detector& model, const ImageSet& data_in, const TrainConfig& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (data_in.size() != data_in.labels.size() || data_in.size() < 2) throw ConfigError("train: need a labelled dataset");
  check_labels(data_in.labels);
  const auto n_real = static_cast<std::size_t>(std::count(data_in.labels.begin(), data_in.labels.end(), 1));
  if (n_real == 0 || n_real == data_in.size()) throw ConfigError("train: dataset must contain both classes");
  Rng crop_rng = make_stream(cfg.seed, 0x63726F70);
  const ImageSet data = fit_to_model(model, data_in, crop_rng);
  if (model.config().distance_feature == DistanceFeature::dca) freeze_dca_means(model, data, cfg.threads);

  Adam opt(model.params().size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainResult res;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> last_good = model.params();
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    Rng shuf = make_stream(cfg.seed, 0x1000 + ep);
    std::shuffle(order.begin(), order.end(), shuf);
    EpochStats st;
    st.epoch = ep;
    std::size_t nb = 0, n_ra = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;
      std::vector<const Image*> imgs;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        imgs.push_back(&data.images[order[k]]);
        labels.push_back(data.labels[order[k]]);
      }
      auto br = batch_loss(model, imgs, labels, cfg, true);
      bool finite = std::isfinite(br.loss.total);
      for (double g : br.grad) finite = finite && std::isfinite(g);
      if (!finite) {
        model.params() = last_good;
        throw NumericError("train: non-finite loss at step " + std::to_string(res.steps) + "; parameters restored");
      }
      last_good = model.params();
      opt.step(model.params(), br.grad);
      ++res.steps;
      res.step_loss.push_back(br.loss.total);
      st.loss_bce += br.loss.bce;
      st.loss_ra += br.loss.ra;
      st.loss_comp += br.loss.total;
      if (br.loss.ra_detail.skipped) {
        ++st.ra_skipped;
      } else {
        st.s_real += br.loss.ra_detail.mean_real;
        st.s_fake += br.loss.ra_detail.mean_fake;
        ++n_ra;
      }
      ++nb;
    }
    if (nb) {
      st.loss_bce /= static_cast<double>(nb);
      st.loss_ra /= static_cast<double>(nb);
      st.loss_comp /= static_cast<double>(nb);
    }
    if (n_ra) {
      st.s_real /= static_cast<double>(n_ra);
      st.s_fake /= static_cast<double>(n_ra);
    }
    res.epochs.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return res;
}

inline std::vector<BranchLogits> predict_all(const Detector& model, const std::vector<Image>& images, unsigned threads = 1) {
  std::vector<BranchLogits> out(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) { out[i] = model.logits(images[i]); });
  return out;
}

// ---------------------------------------------------------------------------

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::vector<std::size_t> indices;
  std::vector<double> analytic, numeric;
};

/// Central-difference check of the composite-loss gradient at `count` random
/// parameters. Parameters whose perturbation flips the hinge or a pixel clamp
/// are skipped and replaced.
inline GradcheckResult gradcheck(Detector& model, std::span<const Image* const> images, std::span<const int> labels,
                                 const TrainConfig& cfg, std::size_t count = 50, double h = 1e-5,
                                 std::uint64_t seed = 99, double abs_floor = 1e-8) {
  const auto base = batch_loss(model, images, labels, cfg, true);
  auto signature = [](const BatchResult& b) {
    return std::make_pair(b.loss.ra_detail.active, b.clamped);
  };
  const auto sig0 = signature(base);
  Rng rng = make_stream(seed, 0x6763);
  const std::size_t P = model.params().size();
  std::uniform_int_distribution<std::size_t> pick(0, P - 1);
  GradcheckResult out;
  std::size_t attempts = 0;
  while (out.checked < count && attempts < 20 * count) {
    ++attempts;
    const std::size_t k = pick(rng);
    const double keep = model.params()[k];
    model.params()[k] = keep + h;
    const auto up = batch_loss(model, images, labels, cfg, false);
    model.params()[k] = keep - h;
    const auto dn = batch_loss(model, images, labels, cfg, false);
    model.params()[k] = keep;
    if (signature(up) != sig0 || signature(dn) != sig0) {
      ++out.skipped_kinks;
      continue;
    }
    const double num = (up.loss.total - dn.loss.total) / (2.0 * h);
    const double ana = base.grad[k];
    const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), abs_floor});
    out.max_rel_error = std::max(out.max_rel_error, rel);
    out.indices.push_back(k);
    out.analytic.push_back(ana);
    out.numeric.push_back(num);
    ++out.checked;
  }
  return out;
}

}  // namespace radet::det
