#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "andi/error.hpp"
#include "andi/grid.hpp"
#include "andi/random.hpp"

namespace andi {

struct PyramidConfig {
  int levels = 10;
  float decay = 0.8f;
  bool jitter = true;

  void validate() const {
    detail::require(levels >= 1, "pyramid levels must be >= 1");
    detail::require(decay > 0.0f && decay <= 1.0f, "pyramid decay must lie in (0, 1]");
  }
};

enum class NoiseKind { gaussian, pyramidal };

inline const char* to_string(NoiseKind k) { return k == NoiseKind::gaussian ? "gaussian" : "pyramidal"; }

inline NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "pyramidal") return NoiseKind::pyramidal;
  throw InvalidArgument("unknown noise kind '" + s + "' (expected gaussian or pyramidal)");
}

template <typename T = float>
void fill_gaussian(BasicSlice<T>& out, Rng& rng) {
  for (auto& v : out.data) v = static_cast<T>(rng.normal());
}

// I.i.d. standard normal field; bit-identical for equal seeds.
template <typename T = float>
BasicSlice<T> gaussian_noise(int height, int width, int channels, std::uint64_t seed) {
  BasicSlice<T> out(height, width, channels);
  Rng rng(seed);
  fill_gaussian(out, rng);
  return out;
}

// Level size ceil(H / r^(i-1)), ceil(W / r^(i-1)) for 1-based level i.
inline std::pair<int, int> pyramid_level_dims(int height, int width, int level, double ratio) {
  detail::require(level >= 1, "pyramid level index is 1-based");
  const double div = std::pow(ratio, level - 1);
  auto dim = [div](int n) { return std::max(1, static_cast<int>(std::ceil(static_cast<double>(n) / div))); };
  return {dim(height), dim(width)};
}

// Sum over levels of decay^i times a bilinearly upsampled Gaussian field of
// size pyramid_level_dims(i, r_i), divided by the empirical standard deviation
// of the whole sample. One jitter draw r_i = 2 + U(0, 2) per level.
template <typename T = float>
BasicSlice<T> pyramidal_noise(int height, int width, int channels, const PyramidConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::vector<double> acc(static_cast<std::size_t>(height) * width * channels, 0.0);
  double scale = 1.0;
  for (int i = 1; i <= cfg.levels; ++i) {
    scale *= cfg.decay;
    const double r = cfg.jitter ? 2.0 + rng.uniform(0.0, 2.0) : 2.0;
    const auto [h, w] = pyramid_level_dims(height, width, i, r);
    BasicSlice<double> level(h, w, channels);
    fill_gaussian(level, rng);
    const auto up = bilinear_upsample(level, height, width);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += scale * up.data[k];
  }
  double sum_sq = 0.0, sum = 0.0;
  for (double v : acc) {
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(acc.size());
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  const double sd = std::sqrt(var);
  if (!(sd > 0.0) || !std::isfinite(sd)) throw GenerationError("pyramidal_noise: sample has zero standard deviation");
  BasicSlice<T> out(height, width, channels);
  for (std::size_t k = 0; k < acc.size(); ++k) out.data[k] = static_cast<T>(acc[k] / sd);
  return out;
}

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  PyramidConfig pyramid;
};

template <typename T = float>
BasicSlice<T> sample_noise(const NoiseSpec& spec, int height, int width, int channels, std::uint64_t seed) {
  return spec.kind == NoiseKind::gaussian ? gaussian_noise<T>(height, width, channels, seed)
                                          : pyramidal_noise<T>(height, width, channels, spec.pyramid, seed);
}

}  // namespace andi
