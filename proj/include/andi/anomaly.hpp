#pragma once

// Anomaly maps from deviations between the ground-truth backward transition
// mu_q(x_t, x_0) and the learned denoising step mu_theta(x_t, t), aggregated
// over a timestep range.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "andi/denoiser.hpp"
#include "andi/error.hpp"
#include "andi/grid.hpp"
#include "andi/noise.hpp"
#include "andi/parallel.hpp"
#include "andi/random.hpp"
#include "andi/schedule.hpp"

namespace andi {

enum class Aggregation { am, gm };

inline const char* to_string(Aggregation a) { return a == Aggregation::am ? "am" : "gm"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "am") return Aggregation::am;
  if (s == "gm") return Aggregation::gm;
  throw InvalidArgument("unknown aggregation '" + s + "' (expected am or gm)");
}

inline constexpr float default_gm_floor = 1e-20f;

struct DeviationStack {
  TimeRange range;
  std::vector<Slice> maps;  // maps[t - range.t_low]

  const Slice& at(int t) const { return maps.at(static_cast<std::size_t>(t - range.t_low)); }
};

// d_t = (mu_q(x_t, x_0) - mu_theta(x_t, t))^2 elementwise, x_t = forward_noise(x_0, t, eps).
template <typename Real>
BasicSlice<Real> deviation_at(const BasicDenoiserParams<Real>& params, const BasicSlice<Real>& x0, int t,
                              const BasicSlice<Real>& eps, const NoiseSchedule& s) {
  const auto xt = forward_noise(x0, t, eps, s);
  const auto target = posterior_mean(xt, x0, t, s);
  const auto predicted = mu_from_eps(xt, forward(params, xt, t), t, s);
  BasicSlice<Real> d = target;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Real diff = target.data[i] - predicted.data[i];
    d.data[i] = diff * diff;
  }
  return d;
}

namespace detail {

inline constexpr std::uint64_t tag_eval_noise = 0x6576616c;

inline void require_stack(const DeviationStack& stack, int t_low, int t_high) {
  if (stack.maps.empty() || t_low > t_high) throw InvalidArgument("aggregation over an empty time range");
  if (t_low < stack.range.t_low || t_high > stack.range.t_high)
    throw InvalidArgument("aggregation range outside the deviation stack");
}

}  // namespace detail

// Elementwise arithmetic mean over t in [t_low, t_high], accumulated in f64
// in ascending t.
inline Slice aggregate_am(const DeviationStack& stack, int t_low, int t_high) {
  detail::require_stack(stack, t_low, t_high);
  const Slice& ref = stack.at(t_low);
  std::vector<double> acc(ref.size(), 0.0);
  for (int t = t_low; t <= t_high; ++t) {
    const auto& m = stack.at(t).data;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m[i];
  }
  const double n = t_high - t_low + 1;
  Slice out = ref;
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / n);
  return out;
}

inline Slice aggregate_am(const DeviationStack& stack) { return aggregate_am(stack, stack.range.t_low, stack.range.t_high); }

// Elementwise exp(mean_t log(max(d_t, floor))).
inline Slice aggregate_gm(const DeviationStack& stack, int t_low, int t_high, float floor = default_gm_floor) {
  detail::require_stack(stack, t_low, t_high);
  detail::require(floor > 0.0f, "geometric-mean floor must be > 0");
  const Slice& ref = stack.at(t_low);
  std::vector<double> acc(ref.size(), 0.0);
  for (int t = t_low; t <= t_high; ++t) {
    const auto& m = stack.at(t).data;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += std::log(static_cast<double>(std::max(m[i], floor)));
  }
  const double n = t_high - t_low + 1;
  Slice out = ref;
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(std::exp(acc[i] / n));
  return out;
}

inline Slice aggregate_gm(const DeviationStack& stack, float floor = default_gm_floor) {
  return aggregate_gm(stack, stack.range.t_low, stack.range.t_high, floor);
}

inline Slice aggregate(const DeviationStack& stack, int t_low, int t_high, Aggregation agg, float floor = default_gm_floor) {
  return agg == Aggregation::am ? aggregate_am(stack, t_low, t_high) : aggregate_gm(stack, t_low, t_high, floor);
}

struct DetectConfig {
  TimeRange range;
  Aggregation agg = Aggregation::gm;
  NoiseSpec eval_noise;  // gaussian unless overridden
  float gm_floor = default_gm_floor;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Noise for timestep t of slice `slice_index`; independent of evaluation order.
inline std::uint64_t eval_noise_key(std::uint64_t seed, std::uint64_t slice_index, int t) {
  return stream_key(seed, {detail::tag_eval_noise, slice_index, static_cast<std::uint64_t>(t)});
}

// Deviation maps for every t in `range`, evaluated on up to `threads` workers.
inline DeviationStack deviation_stack(const DenoiserParams& params, const Slice& x0, const TimeRange& range,
                                      const NoiseSchedule& s, const NoiseSpec& noise, std::uint64_t seed,
                                      std::uint64_t slice_index, int threads) {
  range.validate(s.steps);
  DeviationStack stack{range, std::vector<Slice>(static_cast<std::size_t>(range.count()))};
  parallel_for(stack.maps.size(), threads, [&](std::size_t k) {
    const int t = range.t_low + static_cast<int>(k);
    const Slice eps = sample_noise<float>(noise, x0.height, x0.width, x0.channels, eval_noise_key(seed, slice_index, t));
    stack.maps[k] = deviation_at(params, x0, t, eps, s);
  });
  return stack;
}

inline Slice anomaly_map_slice(const DenoiserParams& params, const Slice& x0, const NoiseSchedule& s,
                               const DetectConfig& cfg, std::uint64_t slice_index = 0) {
  const auto stack = deviation_stack(params, x0, cfg.range, s, cfg.eval_noise, cfg.seed, slice_index, cfg.threads);
  return aggregate(stack, cfg.range.t_low, cfg.range.t_high, cfg.agg, cfg.gm_floor);
}

struct AnomalyResult {
  Volume per_channel;   // a_m, (H, W, D, C)
  ScalarVolume pooled;  // a = max over channels
  // Filled in when scores are min-max normalized for evaluation.
  float score_min = 0.0f;
  float score_max = 0.0f;
};

inline ScalarVolume max_over_channels(const Volume& v) {
  ScalarVolume out(v.height, v.width, v.depth);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float m = v.data[i * v.channels];
    for (int c = 1; c < v.channels; ++c) m = std::max(m, v.data[i * v.channels + c]);
    out.data[i] = m;
  }
  return out;
}

// One aggregation request over a sub-range of the evaluated timesteps.
struct AggregationRequest {
  TimeRange range;
  Aggregation agg = Aggregation::gm;
};

// Computes deviations once over `cfg.range` and produces one AnomalyResult per
// request. Each request's range must lie inside cfg.range; since noise is keyed
// by (seed, slice, t), a request yields the same maps as a direct run over its
// own range.
inline std::vector<AnomalyResult> anomaly_volume_multi(const DenoiserParams& params, const Volume& v,
                                                       const NoiseSchedule& s, const DetectConfig& cfg,
                                                       const std::vector<AggregationRequest>& requests) {
  if (v.channels != params.config.in_channels)
    throw InvalidArgument("anomaly_volume: volume has " + std::to_string(v.channels) + " channels, model expects " +
                          std::to_string(params.config.in_channels));
  cfg.range.validate(s.steps);
  for (const auto& r : requests) {
    r.range.validate(s.steps);
    if (r.range.t_low < cfg.range.t_low || r.range.t_high > cfg.range.t_high)
      throw InvalidArgument("aggregation request outside the evaluated time range");
  }
  std::vector<std::vector<Slice>> per_request(requests.size());
  for (int d = 0; d < v.depth; ++d) {
    const Slice x0 = slice_at(v, d);
    const auto stack = deviation_stack(params, x0, cfg.range, s, cfg.eval_noise, cfg.seed, static_cast<std::uint64_t>(d), cfg.threads);
    for (std::size_t r = 0; r < requests.size(); ++r)
      per_request[r].push_back(aggregate(stack, requests[r].range.t_low, requests[r].range.t_high, requests[r].agg, cfg.gm_floor));
  }
  std::vector<AnomalyResult> out;
  out.reserve(requests.size());
  for (auto& maps : per_request) {
    AnomalyResult res;
    res.per_channel = stack_axial(maps);
    res.pooled = max_over_channels(res.per_channel);
    out.push_back(std::move(res));
  }
  return out;
}

// Algorithm: slice axially, aggregate deviations per slice, restack, and pool
// channels by max. No normalization is applied.
inline AnomalyResult anomaly_volume(const DenoiserParams& params, const Volume& v, const NoiseSchedule& s,
                                    const DetectConfig& cfg) {
  return std::move(anomaly_volume_multi(params, v, s, cfg, {{cfg.range, cfg.agg}}).front());
}

}  // namespace andi
