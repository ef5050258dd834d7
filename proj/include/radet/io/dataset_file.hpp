#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "radet/det/checkpoint.hpp"
#include "radet/det/image.hpp"
#include "radet/det/train.hpp"

namespace radet::io {

// Dataset file: "RADAT1", u64 count, u32 channels, u32 height, u32 width,
// then rows of (u8 label, u8 x C*H*W pixels in CHW order, value = byte / 255).

inline constexpr char kDatasetMagic[] = "RADAT1";

inline std::string serialize_dataset(const det::ImageSet& data) {
  det::check_labels(data.labels);
  if (data.images.size() != data.labels.size()) throw ConfigError("dataset: images/labels size mismatch");
  std::string out(kDatasetMagic, 6);
  const std::size_t c = data.images.empty() ? 0 : data.images[0].c;
  const std::size_t h = data.images.empty() ? 0 : data.images[0].h;
  const std::size_t w = data.images.empty() ? 0 : data.images[0].w;
  det::bin::put_u64(out, data.size());
  det::bin::put_u32(out, static_cast<std::uint32_t>(c));
  det::bin::put_u32(out, static_cast<std::uint32_t>(h));
  det::bin::put_u32(out, static_cast<std::uint32_t>(w));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& img = data.images[i];
    if (img.c != c || img.h != h || img.w != w) throw ConfigError("dataset: images must share one shape");
    out.push_back(static_cast<char>(data.labels[i]));
    for (double v : img.v) {
      const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(q)));
    }
  }
  return out;
}

inline det::ImageSet deserialize_dataset(const std::string& bytes) {
  det::bin::Reader r(bytes, "dataset");
  if (bytes.size() < 6 || bytes.compare(0, 6, kDatasetMagic) != 0) r.fail("bad magic (expected RADAT1)", 0);
  r.bytes(6);
  const std::uint64_t count = r.u64();
  const std::uint32_t c = r.u32(), h = r.u32(), w = r.u32();
  const std::size_t px = static_cast<std::size_t>(c) * h * w;
  if (count > 0 && px == 0) r.fail("zero image shape", 14);
  if (count > 0 && (bytes.size() - r.offset()) / (px + 1) < count) r.need(static_cast<std::size_t>(count) * (px + 1));
  det::ImageSet data;
  data.images.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const auto lab = r.u8();
    if (lab > 1) r.fail("label byte must be 0 or 1", at);
    data.labels.push_back(lab);
    det::Image img(c, h, w);
    for (auto& v : img.v) v = r.u8() / 255.0;
    data.images.push_back(std::move(img));
  }
  if (!r.done()) r.fail("trailing bytes", r.offset());
  return data;
}

struct ClassSummary {
  std::size_t n = 0;
  double pixel_mean = 0.0;
  double pixel_std = 0.0;
  double residual_rms = 0.0;  // median-filter residual
};

/// Per-class pixel statistics; index 0 = fake, 1 = real.
inline std::array<ClassSummary, 2> summarize_classes(const det::ImageSet& data) {
  std::array<ClassSummary, 2> out{};
  std::array<double, 2> sum{}, sq{}, res{}, px{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = data.labels[i];
    const auto& img = data.images[i];
    out[y].n += 1;
    for (double v : img.v) {
      sum[y] += v;
      sq[y] += v * v;
    }
    px[y] += static_cast<double>(img.v.size());
    const auto r = det::median_residual(img);
    for (double v : r.v) res[y] += v * v;
  }
  for (int y = 0; y < 2; ++y) {
    if (px[y] == 0.0) continue;
    out[y].pixel_mean = sum[y] / px[y];
    out[y].pixel_std = std::sqrt(std::max(0.0, sq[y] / px[y] - out[y].pixel_mean * out[y].pixel_mean));
    out[y].residual_rms = std::sqrt(res[y] / px[y]);
  }
  return out;
}

inline void save_dataset(const det::ImageSet& data, const std::string& path) {
  det::bin::write_file(path, serialize_dataset(data));
}
inline det::ImageSet load_dataset(const std::string& path) { return deserialize_dataset(det::bin::read_file(path)); }

}  // namespace radet::io
