#pragma once

// Dense channels-last grids and the image-space operations shared by the
// rest of the library. All layouts are row-major over the listed dimensions,
// so a slice (H, W, C) stores channel fastest, then W, then H.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "andi/error.hpp"

namespace andi {

template <typename T>
struct BasicSlice {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  BasicSlice() = default;
  BasicSlice(int h, int w, int c, T fill = T{}) : height(h), width(w), channels(c) {
    detail::require(h >= 1 && w >= 1 && c >= 1, "slice dimensions must be >= 1");
    data.assign(static_cast<std::size_t>(h) * w * c, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(int h, int w, int c) const {
    return (static_cast<std::size_t>(h) * width + w) * channels + c;
  }
  T& at(int h, int w, int c) { return data[index(h, w, c)]; }
  const T& at(int h, int w, int c) const { return data[index(h, w, c)]; }

  bool same_shape(const BasicSlice& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const BasicSlice&) const = default;
};

template <typename T>
struct BasicVolume {
  int height = 0;
  int width = 0;
  int depth = 0;
  int channels = 0;
  std::vector<T> data;

  BasicVolume() = default;
  BasicVolume(int h, int w, int d, int c, T fill = T{}) : height(h), width(w), depth(d), channels(c) {
    detail::require(h >= 1 && w >= 1 && d >= 1 && c >= 1, "volume dimensions must be >= 1");
    data.assign(static_cast<std::size_t>(h) * w * d * c, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(int h, int w, int d, int c) const {
    return ((static_cast<std::size_t>(h) * width + w) * depth + d) * channels + c;
  }
  T& at(int h, int w, int d, int c) { return data[index(h, w, d, c)]; }
  const T& at(int h, int w, int d, int c) const { return data[index(h, w, d, c)]; }

  bool operator==(const BasicVolume&) const = default;
};

// Single-channel (H, W, D) grid: pooled anomaly maps and masks.
template <typename T>
struct Grid3 {
  int height = 0;
  int width = 0;
  int depth = 0;
  std::vector<T> data;

  Grid3() = default;
  Grid3(int h, int w, int d, T fill = T{}) : height(h), width(w), depth(d) {
    detail::require(h >= 1 && w >= 1 && d >= 1, "grid dimensions must be >= 1");
    data.assign(static_cast<std::size_t>(h) * w * d, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t index(int h, int w, int d) const {
    return (static_cast<std::size_t>(h) * width + w) * depth + d;
  }
  T& at(int h, int w, int d) { return data[index(h, w, d)]; }
  const T& at(int h, int w, int d) const { return data[index(h, w, d)]; }

  template <typename U>
  bool same_shape(const Grid3<U>& o) const {
    return height == o.height && width == o.width && depth == o.depth;
  }
  bool operator==(const Grid3&) const = default;
};

using Slice = BasicSlice<float>;
using Volume = BasicVolume<float>;
using ScalarVolume = Grid3<float>;
using SegMask = Grid3<std::uint8_t>;

// Bilinear resampling of each channel to (target_h, target_w) using
// half-pixel centers, src = (dst + 0.5) * in / out - 0.5, clamped at borders.
template <typename T>
BasicSlice<T> bilinear_upsample(const BasicSlice<T>& src, int target_h, int target_w) {
  detail::require(target_h >= src.height && target_w >= src.width,
                  "bilinear_upsample: target smaller than source");
  if (target_h == src.height && target_w == src.width) return src;

  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double s = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      int i0 = static_cast<int>(std::floor(s));
      int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto ty = taps(src.height, target_h);
  const auto tx = taps(src.width, target_w);

  BasicSlice<T> out(target_h, target_w, src.channels);
  for (int y = 0; y < target_h; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < target_w; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < src.channels; ++c) {
        const double v00 = src.at(a.i0, b.i0, c), v01 = src.at(a.i0, b.i1, c);
        const double v10 = src.at(a.i1, b.i0, c), v11 = src.at(a.i1, b.i1, c);
        const double top = v00 + (v01 - v00) * b.f;
        const double bot = v10 + (v11 - v10) * b.f;
        out.at(y, x, c) = static_cast<T>(top + (bot - top) * a.f);
      }
    }
  }
  return out;
}

// Linear-interpolation percentile between order statistics; p in [0, 1].
inline float percentile(std::span<const float> values, double p) {
  detail::require(!values.empty(), "percentile: empty input");
  detail::require(p >= 0.0 && p <= 1.0, "percentile: p must lie in [0, 1]");
  std::vector<float> v(values.begin(), values.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + lo, v.end());
  const double a = v[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(v.begin() + lo + 1, v.end());
  return static_cast<float>(a + (b - a) * (pos - static_cast<double>(lo)));
}

// Divides every channel by the p-percentile of its voxels strictly above
// `foreground_threshold`.
inline Volume normalize_by_percentile(const Volume& vol, double p = 0.99, float foreground_threshold = 0.0f) {
  Volume out = vol;
  const std::size_t voxels = vol.size() / vol.channels;
  for (int c = 0; c < vol.channels; ++c) {
    std::vector<float> fg;
    for (std::size_t i = 0; i < voxels; ++i) {
      float v = vol.data[i * vol.channels + c];
      if (v > foreground_threshold) fg.push_back(v);
    }
    if (fg.empty())
      throw NormalizationError("normalize_by_percentile: channel " + std::to_string(c) + " has no foreground voxels");
    const float scale = percentile(fg, p);
    if (!(scale > 0.0f))
      throw NormalizationError("normalize_by_percentile: channel " + std::to_string(c) + " has non-positive percentile");
    for (std::size_t i = 0; i < voxels; ++i) out.data[i * vol.channels + c] = vol.data[i * vol.channels + c] / scale;
  }
  return out;
}

template <typename T>
BasicSlice<T> slice_at(const BasicVolume<T>& vol, int d) {
  detail::require(d >= 0 && d < vol.depth, "slice index out of range");
  BasicSlice<T> s(vol.height, vol.width, vol.channels);
  for (int h = 0; h < vol.height; ++h)
    for (int w = 0; w < vol.width; ++w)
      for (int c = 0; c < vol.channels; ++c) s.at(h, w, c) = vol.at(h, w, d, c);
  return s;
}

template <typename T>
std::vector<BasicSlice<T>> slice_axial(const BasicVolume<T>& vol) {
  std::vector<BasicSlice<T>> out;
  out.reserve(vol.depth);
  for (int d = 0; d < vol.depth; ++d) out.push_back(slice_at(vol, d));
  return out;
}

template <typename T>
BasicVolume<T> stack_axial(std::span<const BasicSlice<T>> slices) {
  detail::require(!slices.empty(), "stack_axial: no slices");
  const auto& first = slices.front();
  for (const auto& s : slices)
    detail::require(s.same_shape(first), "stack_axial: mismatched slice shapes");
  BasicVolume<T> vol(first.height, first.width, static_cast<int>(slices.size()), first.channels);
  for (int d = 0; d < vol.depth; ++d)
    for (int h = 0; h < vol.height; ++h)
      for (int w = 0; w < vol.width; ++w)
        for (int c = 0; c < vol.channels; ++c) vol.at(h, w, d, c) = slices[d].at(h, w, c);
  return vol;
}

template <typename T>
BasicVolume<T> stack_axial(const std::vector<BasicSlice<T>>& slices) {
  return stack_axial(std::span<const BasicSlice<T>>(slices));
}

template <typename To, typename From>
BasicSlice<To> cast_slice(const BasicSlice<From>& s) {
  BasicSlice<To> out;
  out.height = s.height;
  out.width = s.width;
  out.channels = s.channels;
  out.data.assign(s.data.begin(), s.data.end());
  return out;
}

}  // namespace andi
