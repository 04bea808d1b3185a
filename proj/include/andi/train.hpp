#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <sstream>
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

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr_base = 2e-5;
  double lr_peak = 1e-4;
  double warmup_fraction = 0.05;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  NoiseKind training_noise = NoiseKind::pyramidal;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(epochs >= 1, "train.epochs must be >= 1");
    detail::require(batch_size >= 1, "train.batch_size must be >= 1");
    detail::require(warmup_fraction > 0.0 && warmup_fraction < 1.0, "train.warmup_fraction must lie in (0, 1)");
    detail::require(lr_base >= 0.0 && lr_base <= lr_peak, "train learning rates must satisfy 0 <= lr_base <= lr_peak");
    detail::require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    detail::require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
                    "adam betas must lie in [0, 1)");
    detail::require(adam_eps > 0.0, "adam_eps must be > 0");
  }
};

template <typename Real>
struct OptimizerState {
  std::vector<Real> m;
  std::vector<Real> v;
  std::int64_t step = 0;

  static OptimizerState zeros(std::size_t n) { return {std::vector<Real>(n, Real(0)), std::vector<Real>(n, Real(0)), 0}; }
};

template <typename Real>
struct LossGrad {
  double loss = 0.0;
  std::vector<Real> grad;
};

// Simplified objective mean((eps_theta(x_t, t) - eps)^2) and its gradient.
template <typename Real>
LossGrad<Real> loss_and_grad(const BasicDenoiserParams<Real>& params, const BasicSlice<Real>& x0, int t,
                             const BasicSlice<Real>& eps, const NoiseSchedule& s) {
  const BasicSlice<Real> xt = forward_noise(x0, t, eps, s);
  DenoiserTrace<Real> trace(params, xt, t);
  const auto& pred = trace.output();
  const double n = static_cast<double>(pred.size());
  BasicSlice<Real> grad_out = pred;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(eps.data[i]);
    sum += d * d;
    grad_out.data[i] = static_cast<Real>(2.0 * d / n);
  }
  LossGrad<Real> out{sum / n, std::vector<Real>(params.values.size(), Real(0))};
  if (!std::isfinite(out.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at t=" << t;
    throw TrainingError(msg.str());
  }
  trace.backward(grad_out, out.grad);
  return out;
}

inline std::int64_t warmup_steps(std::int64_t total_steps, const TrainConfig& cfg) {
  return static_cast<std::int64_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
}

// Linear warmup lr_base -> lr_peak over the first ceil(warmup_fraction * total)
// steps, then cosine decay back to lr_base at step total - 1.
inline double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  detail::require(total_steps >= 1 && step >= 0 && step < total_steps, "lr_at: step outside [0, total_steps)");
  const std::int64_t warm = warmup_steps(total_steps, cfg);
  if (step <= warm) {
    if (warm == 0) return cfg.lr_peak;
    return cfg.lr_base + (cfg.lr_peak - cfg.lr_base) * static_cast<double>(step) / static_cast<double>(warm);
  }
  const std::int64_t decay_len = total_steps - 1 - warm;
  const double progress = decay_len <= 0 ? 1.0 : static_cast<double>(step - warm) / static_cast<double>(decay_len);
  return cfg.lr_base + 0.5 * (cfg.lr_peak - cfg.lr_base) * (1.0 + std::cos(std::numbers::pi * progress));
}

// One AdamW update with bias-corrected moments. Weight decay is decoupled:
// theta <- theta - lr * wd * theta, then the Adam step.
template <typename Real>
void adamw_step(std::vector<Real>& params, const std::vector<Real>& grads, OptimizerState<Real>& state, double lr,
                const TrainConfig& cfg) {
  detail::require(params.size() == grads.size() && params.size() == state.m.size() && params.size() == state.v.size(),
                  "adamw_step: misaligned vectors");
  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * static_cast<double>(state.m[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.v[i]) + (1.0 - b2) * g * g;
    double theta = params[i];
    theta -= lr * cfg.weight_decay * theta;
    theta -= lr * (m / c1) / (std::sqrt(v / c2) + cfg.adam_eps);
    if (!std::isfinite(theta)) {
      std::ostringstream msg;
      msg << "non-finite parameter update at optimizer step " << state.step << ", index " << i;
      throw TrainingError(msg.str());
    }
    state.m[i] = static_cast<Real>(m);
    state.v[i] = static_cast<Real>(v);
    params[i] = static_cast<Real>(theta);
  }
}

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

// Everything needed to continue training bit-identically.
struct TrainState {
  DenoiserParams params;
  OptimizerState<float> optimizer;
  int next_epoch = 0;
  std::vector<double> epoch_losses;
};

struct TrainHooks {
  // Called after every completed epoch with the state that would resume from it.
  std::function<void(const TrainState&)> on_epoch_end;
  std::function<void(const StepRecord&)> on_step;
  // Stop (cleanly, after checkpointing) once this many epochs are done; -1 = never.
  int stop_after_epoch = -1;
  int threads = 1;
};

namespace detail {

enum StreamTag : std::uint64_t { tag_permutation = 0x7065726d, tag_timestep = 0x74696d65, tag_train_noise = 0x6e6f6973 };

// Non-finite loss, or three consecutive epochs above 10x the first epoch.
inline bool loss_diverged(const std::vector<double>& losses) {
  if (losses.empty()) return false;
  if (!std::isfinite(losses.back())) return true;
  if (losses.size() < 4) return false;
  for (std::size_t i = losses.size() - 3; i < losses.size(); ++i)
    if (!(losses[i] > 10.0 * losses.front())) return false;
  return true;
}

inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(stream_key(seed, {tag_permutation, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

}  // namespace detail

inline TrainState fresh_train_state(const DenoiserConfig& dcfg, const TrainConfig& cfg) {
  TrainState st;
  st.params = init_params<float>(dcfg, cfg.seed);
  st.optimizer = OptimizerState<float>::zeros(st.params.values.size());
  return st;
}

// Trains eps_theta on healthy slices. Each sample gets t ~ U{1..T} and noise
// from cfg.training_noise; both are drawn from streams keyed by (seed, step,
// sample index), so the result does not depend on thread count and a resumed
// run continues exactly where the interrupted one stopped.
inline TrainState train(const std::vector<Slice>& dataset, const TrainConfig& cfg, const NoiseSchedule& schedule,
                        const PyramidConfig& pyramid, TrainState state, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("train: empty dataset");
  const auto& first = dataset.front();
  for (const auto& s : dataset)
    if (!s.same_shape(first)) throw InvalidArgument("train: slices have inconsistent shapes");
  if (first.channels != state.params.config.in_channels)
    throw InvalidArgument("train: dataset has " + std::to_string(first.channels) + " channels, model expects " +
                          std::to_string(state.params.config.in_channels));
  const std::size_t per_epoch = dataset.size() / static_cast<std::size_t>(cfg.batch_size);
  if (per_epoch == 0) throw InvalidArgument("train: batch_size exceeds dataset size");
  const std::int64_t total = static_cast<std::int64_t>(per_epoch) * cfg.epochs;
  const std::size_t P = state.params.values.size();
  const NoiseSpec noise{cfg.training_noise, pyramid};
  const int B = cfg.batch_size;

  std::vector<std::vector<float>> sample_grads(B);
  std::vector<double> sample_loss(B);
  std::vector<float> grad(P);

  for (int epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    const auto perm = detail::epoch_permutation(dataset.size(), cfg.seed, epoch);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::int64_t step = static_cast<std::int64_t>(epoch) * static_cast<std::int64_t>(per_epoch) + static_cast<std::int64_t>(b);
      parallel_for(static_cast<std::size_t>(B), hooks.threads, [&](std::size_t j) {
        const Slice& x0 = dataset[perm[b * B + j]];
        const auto k = static_cast<std::uint64_t>(step);
        Rng trng(stream_key(cfg.seed, {detail::tag_timestep, k, j}));
        const int t = 1 + static_cast<int>(trng.below(static_cast<std::uint64_t>(schedule.steps)));
        const Slice eps = sample_noise<float>(noise, x0.height, x0.width, x0.channels,
                                              stream_key(cfg.seed, {detail::tag_train_noise, k, j}));
        auto lg = loss_and_grad(state.params, x0, t, eps, schedule);
        sample_loss[j] = lg.loss;
        sample_grads[j] = std::move(lg.grad);
      });
      std::fill(grad.begin(), grad.end(), 0.0f);
      double batch_loss = 0.0;
      for (int j = 0; j < B; ++j) {
        batch_loss += sample_loss[j];
        const auto& g = sample_grads[j];
        for (std::size_t i = 0; i < P; ++i) grad[i] += g[i];
      }
      const float inv_b = 1.0f / static_cast<float>(B);
      for (auto& g : grad) g *= inv_b;
      batch_loss /= B;
      const double lr = lr_at(step, total, cfg);
      adamw_step(state.params.values, grad, state.optimizer, lr, cfg);
      epoch_sum += batch_loss;
      if (hooks.on_step) hooks.on_step({step, epoch, lr, batch_loss});
    }
    const double epoch_loss = epoch_sum / static_cast<double>(per_epoch);
    state.epoch_losses.push_back(epoch_loss);
    state.next_epoch = epoch + 1;

    if (detail::loss_diverged(state.epoch_losses)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << ": epoch loss " << epoch_loss << ", first-epoch loss "
          << state.epoch_losses.front();
      throw TrainingError(msg.str());
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(state);
    if (hooks.stop_after_epoch >= 0 && state.next_epoch >= hooks.stop_after_epoch) break;
  }
  return state;
}

}  // namespace andi
