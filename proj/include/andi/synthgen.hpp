#pragma once

// Synthetic multi-modal phantoms: an ellipsoidal "brain" filled with smooth
// per-channel texture on an exact-zero background, plus ellipsoidal lesions
// with a raised-cosine profile and exact ground-truth masks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "andi/error.hpp"
#include "andi/grid.hpp"
#include "andi/io.hpp"
#include "andi/parallel.hpp"
#include "andi/postproc.hpp"
#include "andi/random.hpp"

namespace andi {

struct PhantomConfig {
  int height = 64;
  int width = 64;
  int depth = 16;
  int channels = 2;
  // Brain ellipsoid semi-axes as fractions of (H, W, D), centered in the grid.
  double brain_semi_h = 0.42;
  double brain_semi_w = 0.36;
  double brain_semi_d = 0.75;
  // Per channel: Gaussian blur sigma of the texture field (voxels), base
  // intensity and texture amplitude.
  std::vector<double> smoothness = {3.0, 2.0};
  std::vector<double> base = {0.5, 0.45};
  std::vector<double> amplitude = {0.12, 0.1};
  // Share of texture common to all channels.
  double channel_correlation = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(height >= 4 && width >= 4 && depth >= 1 && channels >= 1, "phantom: grid too small");
    detail::require(brain_semi_h > 0.0 && brain_semi_h <= 0.5 && brain_semi_w > 0.0 && brain_semi_w <= 0.5 &&
                        brain_semi_d > 0.0,
                    "phantom: brain ellipse must fit inside the grid in-plane");
    const auto n = static_cast<std::size_t>(channels);
    detail::require(smoothness.size() == n && base.size() == n && amplitude.size() == n,
                    "phantom: need one smoothness/base/amplitude entry per channel");
    for (std::size_t c = 0; c < n; ++c) {
      detail::require(smoothness[c] > 0.0, "phantom: smoothness must be > 0");
      detail::require(base[c] > 0.0 && base[c] < 1.0, "phantom: base intensity must lie in (0, 1)");
      detail::require(amplitude[c] >= 0.0 && amplitude[c] < 1.0, "phantom: amplitude must lie in [0, 1)");
    }
    detail::require(channel_correlation >= 0.0 && channel_correlation <= 1.0, "phantom: channel_correlation must lie in [0, 1]");
  }
  bool operator==(const PhantomConfig&) const = default;
};

struct AnomalySpec {
  int count = 2;
  double r_min = 2.0;
  double r_max = 12.0;
  // Per-channel intensity offset at the lesion core.
  std::vector<double> offsets = {0.4, -0.3};
  // Each lesion scales the offsets by U(multiplier_min, multiplier_max).
  double multiplier_min = 0.75;
  double multiplier_max = 1.25;
  // Depth radius = max(1, r * z_scale).
  double z_scale = 0.35;
  std::uint64_t seed = 0;

  void validate(int channels) const {
    detail::require(count >= 0, "anomaly count must be >= 0");
    detail::require(r_min >= 1.0 && r_max >= r_min, "anomaly radii must satisfy 1 <= r_min <= r_max");
    detail::require(offsets.size() == static_cast<std::size_t>(channels), "need one anomaly offset per channel");
    detail::require(multiplier_min > 0.0 && multiplier_max >= multiplier_min, "anomaly multipliers must be positive");
    detail::require(z_scale > 0.0, "anomaly z_scale must be > 0");
  }
  bool operator==(const AnomalySpec&) const = default;
};

struct Lesion {
  std::array<int, 3> center{};     // (h, w, d)
  std::array<double, 3> radii{};   // half-maximum semi-axes
  double multiplier = 1.0;
  bool operator==(const Lesion&) const = default;
};

struct Phantom {
  Volume volume;
  SegMask brain;
};

struct AnomalousPhantom {
  Volume volume;
  SegMask gt;
  std::vector<Lesion> lesions;
};

// 1 on rho <= 0.5, raised-cosine falloff to 0 at rho = 1.5; 0.5 at rho = 1.
inline double lesion_profile(double rho) {
  if (rho <= 0.5) return 1.0;
  if (rho >= 1.5) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (rho - 0.5)));
}

inline constexpr double lesion_support = 1.5;

inline double lesion_rho(const Lesion& l, int h, int w, int d) {
  const double a = (h - l.center[0]) / l.radii[0];
  const double b = (w - l.center[1]) / l.radii[1];
  const double c = (d - l.center[2]) / l.radii[2];
  return std::sqrt(a * a + b * b + c * c);
}

inline SegMask brain_mask(const PhantomConfig& cfg) {
  SegMask m(cfg.height, cfg.width, cfg.depth);
  const double ch = (cfg.height - 1) / 2.0, cw = (cfg.width - 1) / 2.0, cd = (cfg.depth - 1) / 2.0;
  const double ah = cfg.brain_semi_h * cfg.height, aw = cfg.brain_semi_w * cfg.width, ad = cfg.brain_semi_d * cfg.depth;
  for (int h = 0; h < cfg.height; ++h)
    for (int w = 0; w < cfg.width; ++w)
      for (int d = 0; d < cfg.depth; ++d) {
        const double x = (h - ch) / ah, y = (w - cw) / aw, z = (d - cd) / ad;
        m.at(h, w, d) = x * x + y * y + z * z <= 1.0 ? 1 : 0;
      }
  return m;
}

namespace detail {

inline constexpr std::uint64_t tag_texture = 0x74657874;
inline constexpr std::uint64_t tag_lesion = 0x6c65736e;

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with half-sample reflection at the borders.
inline std::vector<double> blur3(const std::vector<double>& src, int H, int W, int D, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int dims[3] = {H, W, D};
  const auto idx = [&](int h, int w, int d) { return (static_cast<std::size_t>(h) * W + w) * D + d; };
  std::vector<double> cur = src, next(src.size());
  for (int axis = 0; axis < 3; ++axis) {
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (int d = 0; d < D; ++d) {
          int pos[3] = {h, w, d};
          const int c = pos[axis];
          double acc = 0.0;
          for (int o = -r; o <= r; ++o) {
            pos[axis] = reflect_index(c + o, dims[axis]);
            acc += k[static_cast<std::size_t>(o + r)] * cur[idx(pos[0], pos[1], pos[2])];
          }
          next[idx(h, w, d)] = acc;
        }
    std::swap(cur, next);
  }
  return cur;
}

// Blurred white noise rescaled to zero mean and unit std.
inline std::vector<double> texture_field(int H, int W, int D, double sigma, std::uint64_t key) {
  Rng rng(key);
  std::vector<double> f(static_cast<std::size_t>(H) * W * D);
  for (auto& v : f) v = rng.normal();
  f = blur3(f, H, W, D, sigma);
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(f.size()));
  for (auto& v : f) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return f;
}

}  // namespace detail

inline Phantom gen_healthy(const PhantomConfig& cfg) {
  cfg.validate();
  Phantom p{Volume(cfg.height, cfg.width, cfg.depth, cfg.channels), brain_mask(cfg)};
  const int H = cfg.height, W = cfg.width, D = cfg.depth;
  const double rho = cfg.channel_correlation;
  const double shared_w = std::sqrt(rho), own_w = std::sqrt(1.0 - rho);
  const double mean_sigma = [&] {
    double s = 0.0;
    for (double v : cfg.smoothness) s += v;
    return s / cfg.channels;
  }();
  const auto shared = detail::texture_field(H, W, D, mean_sigma, stream_key(cfg.seed, {detail::tag_texture, ~0ULL}));
  for (int c = 0; c < cfg.channels; ++c) {
    const auto own = detail::texture_field(H, W, D, cfg.smoothness[c],
                                           stream_key(cfg.seed, {detail::tag_texture, static_cast<std::uint64_t>(c)}));
    for (std::size_t i = 0; i < own.size(); ++i) {
      if (!p.brain.data[i]) continue;
      const double v = cfg.base[c] + cfg.amplitude[c] * (shared_w * shared[i] + own_w * own[i]);
      p.volume.data[i * cfg.channels + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return p;
}

// True when the lesion's whole support (rho < 1.5) lies inside the brain.
inline bool lesion_fits(const Lesion& l, const SegMask& brain) {
  const int ext[3] = {static_cast<int>(std::ceil(lesion_support * l.radii[0])),
                      static_cast<int>(std::ceil(lesion_support * l.radii[1])),
                      static_cast<int>(std::ceil(lesion_support * l.radii[2]))};
  for (int h = l.center[0] - ext[0]; h <= l.center[0] + ext[0]; ++h)
    for (int w = l.center[1] - ext[1]; w <= l.center[1] + ext[1]; ++w)
      for (int d = l.center[2] - ext[2]; d <= l.center[2] + ext[2]; ++d) {
        if (lesion_rho(l, h, w, d) >= lesion_support) continue;
        if (h < 0 || w < 0 || d < 0 || h >= brain.height || w >= brain.width || d >= brain.depth) return false;
        if (!brain.at(h, w, d)) return false;
      }
  return true;
}

// Adds the lesions to `vol` (clamped to [0, 1]) and returns the union of their
// half-maximum regions. Overlapping lesions combine by taking the strongest.
inline SegMask apply_lesions(Volume& vol, const std::vector<Lesion>& lesions, const std::vector<double>& offsets) {
  detail::require(offsets.size() == static_cast<std::size_t>(vol.channels), "need one anomaly offset per channel");
  SegMask gt(vol.height, vol.width, vol.depth);
  std::vector<double> weight(gt.size(), 0.0);
  for (const auto& l : lesions)
    for (int h = 0; h < vol.height; ++h)
      for (int w = 0; w < vol.width; ++w)
        for (int d = 0; d < vol.depth; ++d) {
          const double rho = lesion_rho(l, h, w, d);
          if (rho >= lesion_support) continue;
          auto& wt = weight[gt.index(h, w, d)];
          wt = std::max(wt, l.multiplier * lesion_profile(rho));
          if (rho <= 1.0) gt.at(h, w, d) = 1;
        }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (weight[i] == 0.0) continue;
    for (int c = 0; c < vol.channels; ++c) {
      float& v = vol.data[i * vol.channels + c];
      v = static_cast<float>(std::clamp(v + weight[i] * offsets[static_cast<std::size_t>(c)], 0.0, 1.0));
    }
  }
  return gt;
}

// Rejection-samples lesion centers inside the brain. `radii_override`, if
// non-empty, fixes the in-plane radius of each lesion.
inline AnomalousPhantom inject_anomalies(const Volume& vol, const SegMask& brain, const AnomalySpec& spec,
                                         const std::vector<double>& radii_override = {}) {
  spec.validate(vol.channels);
  if (brain.height != vol.height || brain.width != vol.width || brain.depth != vol.depth)
    throw InvalidArgument("inject_anomalies: brain mask shape mismatch");
  detail::require(radii_override.empty() || radii_override.size() == static_cast<std::size_t>(spec.count),
                  "inject_anomalies: radius override count must equal the lesion count");
  AnomalousPhantom out{vol, SegMask(vol.height, vol.width, vol.depth), {}};
  if (spec.count == 0) return out;
  std::vector<std::array<int, 3>> inside;
  for (int h = 0; h < brain.height; ++h)
    for (int w = 0; w < brain.width; ++w)
      for (int d = 0; d < brain.depth; ++d)
        if (brain.at(h, w, d)) inside.push_back({h, w, d});
  if (inside.empty()) throw PlacementError("inject_anomalies: empty brain mask");
  Rng rng(stream_key(spec.seed, {detail::tag_lesion}));
  for (int j = 0; j < spec.count; ++j) {
    const double r = radii_override.empty() ? rng.uniform(spec.r_min, spec.r_max) : radii_override[static_cast<std::size_t>(j)];
    Lesion l;
    l.radii = {r, r, std::max(1.0, r * spec.z_scale)};
    l.multiplier = rng.uniform(spec.multiplier_min, spec.multiplier_max);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      l.center = inside[rng.below(inside.size())];
      placed = lesion_fits(l, brain);
    }
    if (!placed)
      throw PlacementError("inject_anomalies: could not place lesion " + std::to_string(j) + " of radius " +
                           std::to_string(r) + " inside the brain after 1000 tries");
    out.lesions.push_back(l);
  }
  out.gt = apply_lesions(out.volume, out.lesions, spec.offsets);
  return out;
}

// Radii for `n` lesions stratified over [r_min, r_max]: one draw per
// equal-width stratum, then shuffled.
inline std::vector<double> stratified_radii(std::size_t n, const AnomalySpec& spec, std::uint64_t key) {
  Rng rng(key);
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i)
    r[i] = spec.r_min + (spec.r_max - spec.r_min) * (static_cast<double>(i) + rng.uniform()) / static_cast<double>(n);
  for (std::size_t i = n; i > 1; --i) std::swap(r[i - 1], r[rng.below(i)]);
  return r;
}

struct DatasetEntry {
  std::string volume;
  std::string mask;   // gt for test volumes, empty for healthy ones
  std::string brain;
  std::uint64_t seed = 0;
  std::vector<Lesion> lesions;
  std::string volume_checksum;
  std::string mask_checksum;
  bool operator==(const DatasetEntry&) const = default;
};

struct DatasetManifest {
  int schema_version = 1;
  std::uint64_t seed = 0;
  PhantomConfig phantom;
  AnomalySpec anomalies;
  int n_train_slices = 0;
  std::string train_slices;
  std::string train_checksum;
  std::vector<DatasetEntry> test;
  std::vector<DatasetEntry> healthy;
  bool operator==(const DatasetManifest&) const = default;
};

inline void to_json(io::json& j, const PhantomConfig& c) {
  j = {{"height", c.height},
       {"width", c.width},
       {"depth", c.depth},
       {"channels", c.channels},
       {"brain_semi_h", c.brain_semi_h},
       {"brain_semi_w", c.brain_semi_w},
       {"brain_semi_d", c.brain_semi_d},
       {"smoothness", c.smoothness},
       {"base", c.base},
       {"amplitude", c.amplitude},
       {"channel_correlation", c.channel_correlation}};
}

inline void from_json(const io::json& j, PhantomConfig& c) {
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("depth").get_to(c.depth);
  j.at("channels").get_to(c.channels);
  j.at("brain_semi_h").get_to(c.brain_semi_h);
  j.at("brain_semi_w").get_to(c.brain_semi_w);
  j.at("brain_semi_d").get_to(c.brain_semi_d);
  j.at("smoothness").get_to(c.smoothness);
  j.at("base").get_to(c.base);
  j.at("amplitude").get_to(c.amplitude);
  j.at("channel_correlation").get_to(c.channel_correlation);
}

inline void to_json(io::json& j, const AnomalySpec& s) {
  j = {{"count", s.count},
       {"r_min", s.r_min},
       {"r_max", s.r_max},
       {"offsets", s.offsets},
       {"multiplier_min", s.multiplier_min},
       {"multiplier_max", s.multiplier_max},
       {"z_scale", s.z_scale}};
}

inline void from_json(const io::json& j, AnomalySpec& s) {
  j.at("count").get_to(s.count);
  j.at("r_min").get_to(s.r_min);
  j.at("r_max").get_to(s.r_max);
  j.at("offsets").get_to(s.offsets);
  j.at("multiplier_min").get_to(s.multiplier_min);
  j.at("multiplier_max").get_to(s.multiplier_max);
  j.at("z_scale").get_to(s.z_scale);
}

inline void to_json(io::json& j, const Lesion& l) {
  j = {{"center", l.center}, {"radii", l.radii}, {"multiplier", l.multiplier}};
}

inline void from_json(const io::json& j, Lesion& l) {
  j.at("center").get_to(l.center);
  j.at("radii").get_to(l.radii);
  j.at("multiplier").get_to(l.multiplier);
}

inline void to_json(io::json& j, const DatasetEntry& e) {
  j = {{"volume", e.volume}, {"mask", e.mask}, {"brain", e.brain}, {"seed", e.seed},
       {"lesions", e.lesions}, {"volume_checksum", e.volume_checksum}, {"mask_checksum", e.mask_checksum}};
}

inline void from_json(const io::json& j, DatasetEntry& e) {
  j.at("volume").get_to(e.volume);
  j.at("mask").get_to(e.mask);
  j.at("brain").get_to(e.brain);
  j.at("seed").get_to(e.seed);
  j.at("lesions").get_to(e.lesions);
  j.at("volume_checksum").get_to(e.volume_checksum);
  j.at("mask_checksum").get_to(e.mask_checksum);
}

inline io::json manifest_to_json(const DatasetManifest& m) {
  return {{"schema_version", m.schema_version},
          {"seed", m.seed},
          {"phantom", m.phantom},
          {"anomalies", m.anomalies},
          {"n_train_slices", m.n_train_slices},
          {"train_slices", m.train_slices},
          {"train_checksum", m.train_checksum},
          {"test", m.test},
          {"healthy", m.healthy}};
}

inline DatasetManifest manifest_from_json(const io::json& j) {
  DatasetManifest m;
  try {
    j.at("schema_version").get_to(m.schema_version);
    if (m.schema_version != 1) throw FormatError("unsupported manifest schema_version " + std::to_string(m.schema_version));
    j.at("seed").get_to(m.seed);
    j.at("phantom").get_to(m.phantom);
    j.at("anomalies").get_to(m.anomalies);
    j.at("n_train_slices").get_to(m.n_train_slices);
    j.at("train_slices").get_to(m.train_slices);
    j.at("train_checksum").get_to(m.train_checksum);
    j.at("test").get_to(m.test);
    j.at("healthy").get_to(m.healthy);
  } catch (const io::json::exception& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what());
  }
  m.phantom.seed = m.seed;
  m.anomalies.seed = m.seed;
  return m;
}

inline constexpr const char* manifest_name = "manifest.json";

inline void write_manifest(const std::filesystem::path& dir, const DatasetManifest& m) {
  io::write_file(dir / manifest_name, manifest_to_json(m).dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / manifest_name;
  io::json j;
  try {
    j = io::json::parse(io::read_file(path));
  } catch (const io::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

struct DatasetRequest {
  int n_train_slices = 2000;
  int n_test = 20;
  int n_healthy_test = 1;
  PhantomConfig phantom;
  AnomalySpec anomalies;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline constexpr std::uint64_t tag_train_volume = 0x7472766f;
inline constexpr std::uint64_t tag_test_volume = 0x7465766f;
inline constexpr std::uint64_t tag_healthy_volume = 0x6865766f;
inline constexpr std::uint64_t tag_radii = 0x72616469;

inline std::string numbered(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.ntf", stem, i);
  return buf;
}

}  // namespace detail

inline std::uint64_t train_volume_seed(std::uint64_t seed, int i) {
  return stream_key(seed, {detail::tag_train_volume, static_cast<std::uint64_t>(i)});
}
inline std::uint64_t test_volume_seed(std::uint64_t seed, int i) {
  return stream_key(seed, {detail::tag_test_volume, static_cast<std::uint64_t>(i)});
}
inline std::uint64_t healthy_volume_seed(std::uint64_t seed, int i) {
  return stream_key(seed, {detail::tag_healthy_volume, static_cast<std::uint64_t>(i)});
}

// Writes the dataset under `dir` and returns its manifest. Volumes are
// normalized by the 99th foreground percentile per channel.
inline DatasetManifest gen_dataset(const DatasetRequest& req, const std::filesystem::path& dir) {
  detail::require(req.n_train_slices >= 1 && req.n_test >= 1 && req.n_healthy_test >= 0, "gen_dataset: counts must be >= 1");
  req.phantom.validate();
  req.anomalies.validate(req.phantom.channels);
  const int D = req.phantom.depth;

  DatasetManifest m;
  m.seed = req.seed;
  m.phantom = req.phantom;
  m.phantom.seed = req.seed;
  m.anomalies = req.anomalies;
  m.anomalies.seed = req.seed;
  m.n_train_slices = req.n_train_slices;
  m.train_slices = "train/slices.ntf";

  const int n_train_vol = (req.n_train_slices + D - 1) / D;
  std::vector<Volume> train_vols(static_cast<std::size_t>(n_train_vol));
  parallel_for(train_vols.size(), req.threads, [&](std::size_t i) {
    PhantomConfig pc = req.phantom;
    pc.seed = train_volume_seed(req.seed, static_cast<int>(i));
    train_vols[i] = normalize_by_percentile(gen_healthy(pc).volume);
  });
  std::vector<Slice> slices;
  slices.reserve(static_cast<std::size_t>(req.n_train_slices));
  for (const auto& v : train_vols)
    for (int d = 0; d < D && static_cast<int>(slices.size()) < req.n_train_slices; ++d) slices.push_back(slice_at(v, d));
  train_vols.clear();
  io::write_tensor(dir / m.train_slices, io::to_record(slices, "train_slices"));
  m.train_checksum = io::file_checksum(dir / m.train_slices);

  const std::size_t n_lesions = static_cast<std::size_t>(req.n_test) * static_cast<std::size_t>(req.anomalies.count);
  const auto radii = stratified_radii(n_lesions, req.anomalies, stream_key(req.seed, {detail::tag_radii}));
  m.test.resize(static_cast<std::size_t>(req.n_test));
  parallel_for(m.test.size(), req.threads, [&](std::size_t i) {
    const int idx = static_cast<int>(i);
    const std::uint64_t vs = test_volume_seed(req.seed, idx);
    PhantomConfig pc = req.phantom;
    pc.seed = vs;
    const auto healthy = gen_healthy(pc);
    AnomalySpec as = req.anomalies;
    as.seed = vs;
    const auto first = radii.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(as.count));
    const auto ap = inject_anomalies(healthy.volume, healthy.brain, as, std::vector<double>(first, first + as.count));
    DatasetEntry& e = m.test[i];
    e.volume = "test/" + detail::numbered("volume", idx);
    e.mask = "test/" + detail::numbered("gt", idx);
    e.brain = "test/" + detail::numbered("brain", idx);
    e.seed = vs;
    e.lesions = ap.lesions;
    io::write_tensor(dir / e.volume, io::to_record(normalize_by_percentile(ap.volume), "volume"));
    io::write_tensor(dir / e.mask, io::to_record(ap.gt, "gt"));
    io::write_tensor(dir / e.brain, io::to_record(healthy.brain, "brain"));
    e.volume_checksum = io::file_checksum(dir / e.volume);
    e.mask_checksum = io::file_checksum(dir / e.mask);
  });

  m.healthy.resize(static_cast<std::size_t>(req.n_healthy_test));
  parallel_for(m.healthy.size(), req.threads, [&](std::size_t i) {
    const int idx = static_cast<int>(i);
    PhantomConfig pc = req.phantom;
    pc.seed = healthy_volume_seed(req.seed, idx);
    const auto healthy = gen_healthy(pc);
    DatasetEntry& e = m.healthy[i];
    e.volume = "healthy/" + detail::numbered("volume", idx);
    e.brain = "healthy/" + detail::numbered("brain", idx);
    e.seed = pc.seed;
    io::write_tensor(dir / e.volume, io::to_record(normalize_by_percentile(healthy.volume), "volume"));
    io::write_tensor(dir / e.brain, io::to_record(healthy.brain, "brain"));
    e.volume_checksum = io::file_checksum(dir / e.volume);
  });

  if (req.anomalies.count > 0 && req.anomalies.r_min <= 3.0 && req.anomalies.r_max >= 10.0) {
    bool small = false, large = false;
    for (const auto& e : m.test)
      for (const auto& l : e.lesions) {
        small = small || l.radii[0] <= 3.0;
        large = large || l.radii[0] >= 10.0;
      }
    if (!small || !large)
      throw GenerationError("gen_dataset: lesion radii do not cover both r <= 3 and r >= 10; increase n_test or count");
  }
  write_manifest(dir, m);
  return m;
}

}  // namespace andi
