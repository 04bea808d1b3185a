#pragma once

// Diffusion noise schedule and the closed-form DDPM quantities. Timesteps are
// 1-indexed; index 0 of alpha_bar holds the convention alpha_bar_0 = 1.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "andi/error.hpp"
#include "andi/grid.hpp"

namespace andi {

struct NoiseSchedule {
  int steps = 0;
  // All arrays have length steps + 1; entry 0 is unused except alpha_bar[0] = 1.
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_var;

  void check_step(int t) const {
    detail::require(t >= 1 && t <= steps, "timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  }
};

struct TimeRange {
  int t_low = 75;
  int t_high = 200;

  int count() const { return t_high - t_low + 1; }
  void validate(int steps) const {
    if (!(1 <= t_low && t_low <= t_high && t_high <= steps))
      throw InvalidArgument("time range [" + std::to_string(t_low) + ", " + std::to_string(t_high) +
                            "] must satisfy 1 <= t_low <= t_high <= " + std::to_string(steps));
  }
};

// Builds a schedule from explicit betas (index 1..T in betas[0..T-1]).
inline NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  NoiseSchedule s;
  s.steps = static_cast<int>(betas.size());
  detail::require(s.steps >= 1, "schedule needs at least one step");
  s.beta.assign(s.steps + 1, 0.0);
  s.alpha.assign(s.steps + 1, 1.0);
  s.alpha_bar.assign(s.steps + 1, 1.0);
  s.posterior_var.assign(s.steps + 1, 0.0);
  for (int t = 1; t <= s.steps; ++t) {
    const double b = betas[t - 1];
    detail::require(b >= 0.0 && b < 1.0, "beta must lie in [0, 1)");
    s.beta[t] = b;
    s.alpha[t] = 1.0 - b;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    const double denom = 1.0 - s.alpha_bar[t];
    s.posterior_var[t] = denom > 0.0 ? b * (1.0 - s.alpha_bar[t - 1]) / denom : 0.0;
  }
  return s;
}

// Endpoint-inclusive linear betas.
inline NoiseSchedule linear_beta_schedule(int steps = 1000, double beta_1 = 1e-4, double beta_T = 0.02) {
  detail::require(steps >= 1, "schedule needs at least one step");
  detail::require(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0, "betas must satisfy 0 < beta_1 <= beta_T < 1");
  std::vector<double> betas(steps);
  for (int t = 1; t <= steps; ++t)
    betas[t - 1] = steps == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * static_cast<double>(t - 1) / (steps - 1);
  betas[steps - 1] = steps == 1 ? beta_1 : beta_T;
  return schedule_from_betas(betas);
}

inline double posterior_variance(int t, const NoiseSchedule& s) {
  s.check_step(t);
  return s.posterior_var[t];
}

// Coefficients of mu_q(x_t, x_0) = coef_xt * x_t + coef_x0 * x_0.
struct PosteriorCoefficients {
  double coef_xt;
  double coef_x0;
};

inline PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s) {
  s.check_step(t);
  const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[t - 1];
  const double denom = 1.0 - ab;
  if (denom <= 0.0) return {0.0, 1.0};  // beta_t = 0 all the way: x_t == x_0
  return {std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / denom, std::sqrt(ab_prev) * s.beta[t] / denom};
}

// mu = coef_xt * x_t - coef_eps * eps.
struct EpsCoefficients {
  double coef_xt;
  double coef_eps;
};

inline EpsCoefficients eps_coefficients(int t, const NoiseSchedule& s) {
  s.check_step(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
  const double one_minus_ab = 1.0 - s.alpha_bar[t];
  const double ce = one_minus_ab > 0.0 ? inv_sqrt_alpha * s.beta[t] / std::sqrt(one_minus_ab) : 0.0;
  return {inv_sqrt_alpha, ce};
}

namespace detail {

template <typename T>
void require_same(const BasicSlice<T>& a, const BasicSlice<T>& b, const char* op) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
template <typename T>
BasicSlice<T> forward_noise(const BasicSlice<T>& x0, int t, const BasicSlice<T>& eps, const NoiseSchedule& s) {
  detail::require_same(x0, eps, "forward_noise");
  s.check_step(t);
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  BasicSlice<T> out = x0;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = static_cast<T>(a * static_cast<double>(x0.data[i]) + b * static_cast<double>(eps.data[i]));
  return out;
}

// Ground-truth backward transition mean mu_q(x_t, x_0).
template <typename T>
BasicSlice<T> posterior_mean(const BasicSlice<T>& xt, const BasicSlice<T>& x0, int t, const NoiseSchedule& s) {
  detail::require_same(xt, x0, "posterior_mean");
  const auto k = posterior_coefficients(t, s);
  BasicSlice<T> out = xt;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = static_cast<T>(k.coef_xt * static_cast<double>(xt.data[i]) + k.coef_x0 * static_cast<double>(x0.data[i]));
  return out;
}

// Predicted transition mean from an epsilon prediction. The result is not
// clipped.
template <typename T>
BasicSlice<T> mu_from_eps(const BasicSlice<T>& xt, const BasicSlice<T>& eps_pred, int t, const NoiseSchedule& s) {
  detail::require_same(xt, eps_pred, "mu_from_eps");
  const auto k = eps_coefficients(t, s);
  BasicSlice<T> out = xt;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = static_cast<T>(k.coef_xt * static_cast<double>(xt.data[i]) - k.coef_eps * static_cast<double>(eps_pred.data[i]));
  return out;
}

}  // namespace andi
