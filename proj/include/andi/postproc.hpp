#pragma once

// Anomaly scores to segmentation masks: 3-D median filter, Yen threshold,
// binarization and cube dilation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "andi/error.hpp"
#include "andi/grid.hpp"

namespace andi {

// Half-sample symmetric reflection: -1 -> 0, -2 -> 1, n -> n - 1.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

inline ScalarVolume median_filter_3d(const ScalarVolume& a, int k) {
  if (k < 1 || k % 2 == 0) throw InvalidArgument("median_filter_3d: kernel size must be odd");
  if (k > std::min({a.height, a.width, a.depth}))
    throw InvalidArgument("median_filter_3d: kernel size " + std::to_string(k) + " exceeds a volume dimension");
  if (k == 1) return a;
  const int r = k / 2;
  const std::size_t n = static_cast<std::size_t>(k) * k * k;
  ScalarVolume out(a.height, a.width, a.depth);
  std::vector<float> window(n);
  for (int h = 0; h < a.height; ++h)
    for (int w = 0; w < a.width; ++w)
      for (int d = 0; d < a.depth; ++d) {
        std::size_t idx = 0;
        for (int dh = -r; dh <= r; ++dh) {
          const int hh = reflect_index(h + dh, a.height);
          for (int dw = -r; dw <= r; ++dw) {
            const int ww = reflect_index(w + dw, a.width);
            for (int dd = -r; dd <= r; ++dd) window[idx++] = a.at(hh, ww, reflect_index(d + dd, a.depth));
          }
        }
        auto mid = window.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(window.begin(), mid, window.end());
        out.at(h, w, d) = *mid;
      }
  return out;
}

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::uint64_t> counts;

  int bins() const { return static_cast<int>(counts.size()); }
  double bin_width() const { return (hi - lo) / bins(); }
  int bin_of(double v) const {
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins()));
    return std::clamp(b, 0, bins() - 1);
  }
};

inline Histogram build_histogram(const std::vector<float>& values, int bins) {
  detail::require(bins >= 2, "histogram needs at least 2 bins");
  if (values.empty()) throw DegenerateInput("histogram: no values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (!(*mx > *mn)) throw DegenerateInput("histogram: input is constant");
  Histogram h{*mn, *mx, std::vector<std::uint64_t>(static_cast<std::size_t>(bins), 0)};
  for (float v : values) h.counts[static_cast<std::size_t>(h.bin_of(v))] += 1;
  return h;
}

// Yen's maximum-correlation criterion over cuts "bins <= k | bins > k",
// evaluated only where both sides hold probability mass. Ties keep the lowest
// bin index. Returns -1 when no such cut exists.
inline int yen_bin(const std::vector<std::uint64_t>& counts) {
  const std::size_t n = counts.size();
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total <= 0.0) return -1;
  std::vector<double> p(n), P1(n), P1_sq(n), P2_sq(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(counts[i]) / total;
  double cum = 0.0, cum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum += p[i];
    cum_sq += p[i] * p[i];
    P1[i] = cum;
    P1_sq[i] = cum_sq;
  }
  double tail_sq = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    P2_sq[i] = tail_sq;
    tail_sq += p[i] * p[i];
  }
  // Mass below and above each cut, counted in voxels so emptiness is exact.
  std::uint64_t below = 0;
  const auto all = static_cast<std::uint64_t>(total);
  int best = -1;
  double best_crit = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    below += counts[k];
    if (below == 0 || below == all) continue;
    const double crit = -std::log(P1_sq[k] * P2_sq[k]) + 2.0 * std::log(P1[k] * (1.0 - P1[k]));
    if (crit > best_crit) {
      best_crit = crit;
      best = static_cast<int>(k);
    }
  }
  return best;
}

struct YenResult {
  float threshold = 0.0f;  // upper edge of the chosen bin
  int bin = -1;
  Histogram histogram;
};

// Per-volume Yen threshold over all voxels, or only over `foreground` voxels.
inline YenResult yen_threshold(const ScalarVolume& a, const SegMask* foreground = nullptr, int bins = 256) {
  std::vector<float> values;
  values.reserve(a.size());
  if (foreground) {
    if (!foreground->same_shape(a)) throw InvalidArgument("yen_threshold: mask shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i)
      if (foreground->data[i]) values.push_back(a.data[i]);
  } else {
    values = a.data;
  }
  YenResult r;
  r.histogram = build_histogram(values, bins);
  r.bin = yen_bin(r.histogram.counts);
  if (r.bin < 0) throw DegenerateInput("yen_threshold: no admissible cut");
  r.threshold = static_cast<float>(r.histogram.lo + (r.bin + 1) * r.histogram.bin_width());
  return r;
}

// 1 where a > threshold.
inline SegMask binarize(const ScalarVolume& a, float threshold) {
  SegMask s(a.height, a.width, a.depth);
  for (std::size_t i = 0; i < a.size(); ++i) s.data[i] = a.data[i] > threshold ? 1 : 0;
  return s;
}

// Binary dilation with a (2r+1)^3 cube, done as three separable 1-D passes.
inline SegMask dilate_3d(const SegMask& s, int radius = 1) {
  detail::require(radius >= 0, "dilate_3d: radius must be >= 0");
  if (radius == 0) return s;
  SegMask cur = s;
  const int dims[3] = {s.height, s.width, s.depth};
  for (int axis = 0; axis < 3; ++axis) {
    SegMask next(s.height, s.width, s.depth);
    for (int h = 0; h < s.height; ++h)
      for (int w = 0; w < s.width; ++w)
        for (int d = 0; d < s.depth; ++d) {
          int pos[3] = {h, w, d};
          const int center = pos[axis];
          const int lo = std::max(0, center - radius), hi = std::min(dims[axis] - 1, center + radius);
          std::uint8_t v = 0;
          for (int q = lo; q <= hi && !v; ++q) {
            pos[axis] = q;
            v = cur.at(pos[0], pos[1], pos[2]);
          }
          next.at(h, w, d) = v;
        }
    cur = std::move(next);
  }
  return cur;
}

struct PostprocConfig {
  int median_kernel = 3;  // 0 disables filtering
  int dilate_radius = 1;
  int yen_bins = 256;
  bool yen_foreground_only = false;

  void validate() const {
    detail::require(median_kernel == 0 || median_kernel == 1 || median_kernel == 3 || median_kernel == 5,
                    "median kernel must be 0, 3 or 5");
    detail::require(dilate_radius >= 0, "dilate radius must be >= 0");
    detail::require(yen_bins >= 2, "yen bins must be >= 2");
  }
};

struct Segmentation {
  ScalarVolume filtered;
  std::optional<float> threshold;  // empty when the map was degenerate
  SegMask mask;
};

inline ScalarVolume apply_median(const ScalarVolume& a, int kernel) {
  return kernel <= 1 ? a : median_filter_3d(a, kernel);
}

// Median filter -> Yen threshold -> binarize -> dilate. A constant map yields
// an empty mask.
inline Segmentation segment(const ScalarVolume& pooled, const PostprocConfig& cfg, const SegMask* foreground = nullptr) {
  cfg.validate();
  Segmentation seg;
  seg.filtered = apply_median(pooled, cfg.median_kernel);
  try {
    const auto yen = yen_threshold(seg.filtered, cfg.yen_foreground_only ? foreground : nullptr, cfg.yen_bins);
    seg.threshold = yen.threshold;
    seg.mask = dilate_3d(binarize(seg.filtered, yen.threshold), cfg.dilate_radius);
  } catch (const DegenerateInput&) {
    seg.mask = SegMask(pooled.height, pooled.width, pooled.depth);
  }
  return seg;
}

}  // namespace andi
