#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "radet/core/errors.hpp"
#include "radet/core/json_util.hpp"
#include "radet/det/detector.hpp"
#include "radet/core/parallel.hpp"
#include "radet/det/train.hpp"

namespace radet::det {

// ---------------------------------------------------------------------------
// JSON echo of the detector configuration

inline Json to_json(const ImageEncoderSpec& s) {
  return Json{{"channels", s.channels}, {"size", s.size},   {"pool", s.pool},   {"hidden", s.hidden},
              {"dim", s.dim},           {"gain1", s.gain1}, {"gain2", s.gain2}, {"seed", s.seed}};
}

inline ImageEncoderSpec encoder_spec_from_json(const Json& j) {
  const std::string w = "encoder";
  require_known_keys(j, {"channels", "size", "pool", "hidden", "dim", "gain1", "gain2", "seed"}, w);
  ImageEncoderSpec s;
  read_opt(j, "channels", s.channels, w);
  read_opt(j, "size", s.size, w);
  read_opt(j, "pool", s.pool, w);
  read_opt(j, "hidden", s.hidden, w);
  read_opt(j, "dim", s.dim, w);
  read_opt(j, "gain1", s.gain1, w);
  read_opt(j, "gain2", s.gain2, w);
  read_opt(j, "seed", s.seed, w);
  return s;
}

inline Json to_json(const DetectorConfig& c) {
  Json br = Json::object();
  for (std::size_t b = 0; b < kNumBranches; ++b) br[kBranchNames[b]] = c.branches[b];
  return Json{{"encoder", to_json(c.encoder)},
              {"eps_pix", c.eps_pix},
              {"drp_c1", c.drp_c1},
              {"drp_c2", c.drp_c2},
              {"drp_c3", c.drp_c3},
              {"drp_embed", c.drp_embed},
              {"dist_hidden", c.dist_hidden},
              {"diff_hidden", c.diff_hidden},
              {"res_channels", c.res_channels},
              {"residual_gain", c.residual_gain},
              {"branches", br},
              {"learn_aggregation", c.learn_aggregation},
              {"distance_feature", c.distance_feature == DistanceFeature::dca ? "dca" : "l2"},
              {"init_seed", c.init_seed}};
}

inline DetectorConfig detector_config_from_json(const Json& j) {
  const std::string w = "detector";
  require_known_keys(j,
                     {"encoder", "eps_pix", "drp_c1", "drp_c2", "drp_c3", "drp_embed", "dist_hidden", "diff_hidden",
                      "res_channels", "residual_gain", "branches", "learn_aggregation", "distance_feature", "init_seed"},
                     w);
  DetectorConfig c;
  if (j.contains("encoder")) c.encoder = encoder_spec_from_json(j.at("encoder"));
  read_opt(j, "eps_pix", c.eps_pix, w);
  read_opt(j, "drp_c1", c.drp_c1, w);
  read_opt(j, "drp_c2", c.drp_c2, w);
  read_opt(j, "drp_c3", c.drp_c3, w);
  read_opt(j, "drp_embed", c.drp_embed, w);
  read_opt(j, "dist_hidden", c.dist_hidden, w);
  read_opt(j, "diff_hidden", c.diff_hidden, w);
  read_opt(j, "res_channels", c.res_channels, w);
  read_opt(j, "residual_gain", c.residual_gain, w);
  read_opt(j, "learn_aggregation", c.learn_aggregation, w);
  read_opt(j, "init_seed", c.init_seed, w);
  if (j.contains("branches")) {
    const auto& b = j.at("branches");
    require_known_keys(b, {"sem", "dist", "diff", "res"}, "detector.branches");
    for (std::size_t i = 0; i < kNumBranches; ++i) read_opt(b, kBranchNames[i], c.branches[i], "detector.branches");
  }
  if (j.contains("distance_feature")) {
    std::string f;
    read_opt(j, "distance_feature", f, w);
    if (f == "l2")
      c.distance_feature = DistanceFeature::l2;
    else if (f == "dca")
      c.distance_feature = DistanceFeature::dca;
    else
      throw ConfigError("detector.distance_feature: expected 'l2' or 'dca'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace bin {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}
inline void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

/// Bounds-checked reader; errors carry the byte offset.
class Reader {
 public:
  Reader(const std::string& data, std::string what) : d_(data), what_(std::move(what)) {}
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == d_.size(); }
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n)
      throw IoError(what_ + ": truncated at offset " + std::to_string(pos_) + " (need " + std::to_string(n) + " bytes)");
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(d_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(d_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(d_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw IoError(what_ + ": " + msg + " at offset " + std::to_string(at));
  }

 private:
  const std::string& d_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace bin

// ---------------------------------------------------------------------------
// Checkpoint: "RADET1", u32 version, u32 section count, then sections of
// (u32 name length, name, u64 payload length, payload).

inline constexpr char kCheckpointMagic[] = "RADET1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const Detector& model) {
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("config", to_json(model.config()).dump());
  std::string p;
  bin::put_u64(p, model.params().size());
  for (double v : model.params()) bin::put_f64(p, v);
  sections.emplace_back("params", p);
  std::string h;
  bin::put_u64(h, model.encoder().parameter_hash());
  sections.emplace_back("encoder_hash", h);
  std::string dca;
  bin::put_u64(dca, model.dca_mean().size());
  for (double v : model.dca_mean()) bin::put_f64(dca, v);
  for (double v : model.dca_mean_perturbed()) bin::put_f64(dca, v);
  sections.emplace_back("dca_means", dca);

  std::string out(kCheckpointMagic, 6);
  bin::put_u32(out, kCheckpointVersion);
  bin::put_u32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    bin::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    bin::put_u64(out, payload.size());
    out += payload;
  }
  return out;
}

inline Detector deserialize_checkpoint(const std::string& data) {
  bin::Reader r(data, "checkpoint");
  if (data.size() < 6 || data.compare(0, 6, kCheckpointMagic) != 0) r.fail("bad magic (expected RADET1)", 0);
  r.bytes(6);
  const std::size_t vat = r.offset();
  if (r.u32() != kCheckpointVersion) r.fail("unsupported version", vat);
  const std::uint32_t n = r.u32();
  std::string cfg_text, params_blob, hash_blob, dca_blob;
  bool have_cfg = false, have_params = false, have_hash = false;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = r.u32();
    const std::string name = r.bytes(len);
    const std::uint64_t plen = r.u64();
    std::string payload = r.bytes(static_cast<std::size_t>(plen));
    if (name == "config") {
      cfg_text = std::move(payload);
      have_cfg = true;
    } else if (name == "params") {
      params_blob = std::move(payload);
      have_params = true;
    } else if (name == "encoder_hash") {
      hash_blob = std::move(payload);
      have_hash = true;
    } else if (name == "dca_means") {
      dca_blob = std::move(payload);
    }
  }
  if (!r.done()) r.fail("trailing bytes", r.offset());
  if (!have_cfg || !have_params || !have_hash) throw IoError("checkpoint: missing required section");
  Json j;
  try {
    j = Json::parse(cfg_text);
  } catch (const Json::exception& e) {
    throw IoError(std::string("checkpoint: config section is not valid JSON: ") + e.what());
  }
  Detector model(detector_config_from_json(j));
  bin::Reader pr(params_blob, "checkpoint params");
  const std::uint64_t count = pr.u64();
  if (count != model.params().size())
    throw IoError("checkpoint: parameter count " + std::to_string(count) + " does not match layout " +
                  std::to_string(model.params().size()));
  for (auto& v : model.params()) v = pr.f64();
  bin::Reader hr(hash_blob, "checkpoint encoder hash");
  if (hr.u64() != model.encoder().parameter_hash()) throw IoError("checkpoint: encoder hash mismatch");
  if (!dca_blob.empty()) {
    bin::Reader dr(dca_blob, "checkpoint dca");
    const std::uint64_t d = dr.u64();
    std::vector<double> mu(d), mup(d);
    for (auto& v : mu) v = dr.f64();
    for (auto& v : mup) v = dr.f64();
    model.set_dca_means(std::move(mu), std::move(mup));
  }
  return model;
}

inline void save_checkpoint(const Detector& model, const std::string& path) {
  bin::write_file(path, serialize_checkpoint(model));
}
inline Detector load_checkpoint(const std::string& path) { return deserialize_checkpoint(bin::read_file(path)); }

// ---------------------------------------------------------------------------
// Embedding files: "RAEMB1", u64 count, u32 D, u32 flags, [u32 R if flags & 1],
// then rows of (u8 label, f32 x D clean, f32 x D perturbed, [f32 x R residual]).

inline constexpr char kEmbeddingMagic[] = "RAEMB1";

struct EmbeddingRow {
  int label = 0;
  std::vector<float> e, ep, r;
  bool operator==(const EmbeddingRow&) const = default;
};

struct EmbeddingSet {
  std::uint32_t dim = 0;
  std::uint32_t res_dim = 0;  // 0 when absent
  std::vector<EmbeddingRow> rows;
  bool operator==(const EmbeddingSet&) const = default;
};

inline std::string serialize_embeddings(const EmbeddingSet& s) {
  std::string out(kEmbeddingMagic, 6);
  bin::put_u64(out, s.rows.size());
  bin::put_u32(out, s.dim);
  bin::put_u32(out, s.res_dim > 0 ? 1u : 0u);
  if (s.res_dim > 0) bin::put_u32(out, s.res_dim);
  for (const auto& row : s.rows) {
    if (row.e.size() != s.dim || row.ep.size() != s.dim || row.r.size() != s.res_dim)
      throw ConfigError("embeddings: row dimension mismatch");
    out.push_back(static_cast<char>(row.label));
    for (float v : row.e) bin::put_f32(out, v);
    for (float v : row.ep) bin::put_f32(out, v);
    for (float v : row.r) bin::put_f32(out, v);
  }
  return out;
}

inline EmbeddingSet deserialize_embeddings(const std::string& data) {
  bin::Reader r(data, "embeddings");
  if (data.size() < 6 || data.compare(0, 6, kEmbeddingMagic) != 0) r.fail("bad magic (expected RAEMB1)", 0);
  r.bytes(6);
  EmbeddingSet s;
  const std::uint64_t count = r.u64();
  s.dim = r.u32();
  const std::size_t flags_at = r.offset();
  const std::uint32_t flags = r.u32();
  if (flags & ~1u) r.fail("unknown flag bits", flags_at);
  if (s.dim == 0) r.fail("zero embedding dimension", flags_at - 4);
  if (flags & 1u) s.res_dim = r.u32();
  const std::size_t row_bytes = 1 + 4 * (2 * static_cast<std::size_t>(s.dim) + s.res_dim);
  if ((data.size() - r.offset()) / row_bytes < count) r.need(static_cast<std::size_t>(count) * row_bytes);
  s.rows.resize(static_cast<std::size_t>(count));
  for (auto& row : s.rows) {
    const std::size_t at = r.offset();
    const auto lab = r.u8();
    if (lab > 1) r.fail("label byte must be 0 or 1", at);
    row.label = lab;
    row.e.resize(s.dim);
    row.ep.resize(s.dim);
    row.r.resize(s.res_dim);
    for (auto& v : row.e) v = r.f32();
    for (auto& v : row.ep) v = r.f32();
    for (auto& v : row.r) v = r.f32();
  }
  if (!r.done()) r.fail("trailing bytes", r.offset());
  return s;
}

inline void save_embeddings(const EmbeddingSet& s, const std::string& path) { bin::write_file(path, serialize_embeddings(s)); }
inline EmbeddingSet load_embeddings(const std::string& path) { return deserialize_embeddings(bin::read_file(path)); }

/// CSV alternative: header `label,e0..e{D-1},p0..p{D-1}[,r0..r{R-1}]`.
inline std::string embeddings_to_csv(const EmbeddingSet& s) {
  std::ostringstream os;
  os.precision(9);
  os << "label";
  for (std::uint32_t i = 0; i < s.dim; ++i) os << ",e" << i;
  for (std::uint32_t i = 0; i < s.dim; ++i) os << ",p" << i;
  for (std::uint32_t i = 0; i < s.res_dim; ++i) os << ",r" << i;
  os << '\n';
  for (const auto& row : s.rows) {
    os << row.label;
    for (float v : row.e) os << ',' << v;
    for (float v : row.ep) os << ',' << v;
    for (float v : row.r) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

inline EmbeddingSet embeddings_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("embeddings csv: empty file");
  std::vector<std::string> head;
  {
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) head.push_back(cell);
  }
  if (head.empty() || head[0] != "label") throw IoError("embeddings csv: first column must be 'label'");
  EmbeddingSet s;
  for (std::size_t i = 1; i < head.size(); ++i) {
    const char k = head[i].empty() ? '?' : head[i][0];
    if (k == 'e') ++s.dim;
    else if (k == 'r') ++s.res_dim;
    else if (k != 'p') throw IoError("embeddings csv: unexpected column '" + head[i] + "'");
  }
  if (head.size() != 1 + 2 * s.dim + s.res_dim) throw IoError("embeddings csv: clean/perturbed column counts differ");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("embeddings csv: bad number on line " + std::to_string(lineno));
      }
    }
    if (vals.size() != head.size()) throw IoError("embeddings csv: wrong column count on line " + std::to_string(lineno));
    EmbeddingRow row;
    if (vals[0] != 0.0 && vals[0] != 1.0) throw IoError("embeddings csv: label must be 0 or 1 on line " + std::to_string(lineno));
    row.label = static_cast<int>(vals[0]);
    std::size_t k = 1;
    for (std::uint32_t i = 0; i < s.dim; ++i) row.e.push_back(static_cast<float>(vals[k++]));
    for (std::uint32_t i = 0; i < s.dim; ++i) row.ep.push_back(static_cast<float>(vals[k++]));
    for (std::uint32_t i = 0; i < s.res_dim; ++i) row.r.push_back(static_cast<float>(vals[k++]));
    s.rows.push_back(std::move(row));
  }
  return s;
}

/// Embeddings of a labelled image set under the in-process encoder and generator.
inline EmbeddingSet export_embeddings(const Detector& model, const ImageSet& data, unsigned threads = 1) {
  EmbeddingSet s;
  s.dim = static_cast<std::uint32_t>(model.config().encoder.dim);
  s.res_dim = model.config().enabled(Branch::res) ? static_cast<std::uint32_t>(model.config().res_channels) : 0;
  s.rows.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto t = model.forward(data.images[i], true);
    auto& row = s.rows[i];
    row.label = data.labels[i];
    row.e.assign(t.enc_x.e.begin(), t.enc_x.e.end());
    row.ep.assign(t.enc_xp.e.begin(), t.enc_xp.e.end());
    row.r.assign(t.rfeat.begin(), t.rfeat.end());
  });
  return s;
}

inline BranchLogits logits_from_row(const Detector& model, const EmbeddingRow& row) {
  const std::vector<double> e(row.e.begin(), row.e.end()), ep(row.ep.begin(), row.ep.end()), r(row.r.begin(), row.r.end());
  return model.logits_from_embeddings(e, ep, r);
}

}  // namespace radet::det
