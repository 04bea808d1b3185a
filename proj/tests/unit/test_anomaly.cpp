#include <gtest/gtest.h>

#include <cmath>

#include "andi/anomaly.hpp"

using namespace andi;

namespace {

const DenoiserConfig small_net{2, 4, 2, 8};

DenoiserParams perturbed(std::uint64_t seed) {
  auto p = init_params(small_net, seed);
  Rng rng(seed + 1);
  for (auto& v : p.values) v += static_cast<float>(0.2 * rng.normal());
  return p;
}

Volume random_volume(int h, int w, int d, std::uint64_t seed) {
  Volume v(h, w, d, 2);
  Rng rng(seed);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform());
  return v;
}

DeviationStack random_stack(Rng& rng, int t_low, int t_high, int n) {
  DeviationStack st{{t_low, t_high}, {}};
  for (int t = t_low; t <= t_high; ++t) {
    Slice s(1, n, 1);
    for (auto& v : s.data) {
      // Spread over many decades, including exact zeros.
      v = rng.uniform() < 0.05 ? 0.0f : static_cast<float>(std::pow(10.0, rng.uniform(-12, 1)));
    }
    st.maps.push_back(std::move(s));
  }
  return st;
}

}  // namespace

TEST(Anomaly, ArithmeticMeanDominatesGeometricMean) {
  Rng rng(1);
  std::size_t checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int len = 1 + static_cast<int>(rng.below(40));
    const auto st = random_stack(rng, 10, 10 + len - 1, 100);
    const auto am = aggregate_am(st), gm = aggregate_gm(st);
    for (std::size_t i = 0; i < am.size(); ++i, ++checked)
      ASSERT_GE(std::max(am.data[i], 1e-20f) * (1 + 1e-6f), gm.data[i]) << "trial " << trial << " i " << i;
  }
  EXPECT_EQ(checked, 10000u);
}

TEST(Anomaly, AggregatesMatchDirectFormulas) {
  Rng rng(2);
  const auto st = random_stack(rng, 75, 90, 50);
  const auto am = aggregate_am(st, 78, 85);
  const auto gm = aggregate_gm(st, 78, 85, 1e-20f);
  for (std::size_t i = 0; i < am.size(); ++i) {
    long double s = 0, l = 0;
    for (int t = 78; t <= 85; ++t) {
      const long double v = st.at(t).data[i];
      s += v;
      l += std::log(std::max(v, 1e-20L));
    }
    EXPECT_NEAR(am.data[i], static_cast<float>(s / 8), 1e-6 * std::abs(static_cast<double>(s / 8)));
    EXPECT_NEAR(gm.data[i], static_cast<float>(std::exp(l / 8)), 1e-6 * std::exp(static_cast<double>(l / 8)));
  }
  EXPECT_THROW(aggregate_am(st, 70, 80), InvalidArgument);
  EXPECT_THROW(aggregate_gm(st, 80, 79), InvalidArgument);
}

TEST(Anomaly, ConstantStackAggregatesToConstant) {
  DeviationStack st{{1, 4}, std::vector<Slice>(4, Slice(2, 2, 1, 0.25f))};
  for (float v : aggregate_am(st).data) EXPECT_FLOAT_EQ(v, 0.25f);
  for (float v : aggregate_gm(st).data) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Anomaly, GeometricMeanFloorKeepsZerosFinite) {
  DeviationStack st{{1, 2}, {Slice(1, 1, 1, 0.0f), Slice(1, 1, 1, 1.0f)}};
  EXPECT_FLOAT_EQ(aggregate_gm(st).data[0], 1e-10f);
  EXPECT_THROW(aggregate_gm(st, 0.0f), InvalidArgument);
}

TEST(Anomaly, DeviationMatchesDefinition) {
  const auto p = perturbed(3);
  const auto s = linear_beta_schedule();
  Slice x0(8, 8, 2), eps(8, 8, 2);
  Rng rng(4);
  for (auto& v : x0.data) v = static_cast<float>(rng.uniform());
  for (auto& v : eps.data) v = static_cast<float>(rng.normal());
  const int t = 120;
  const auto d = deviation_at(p, x0, t, eps, s);
  const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[t - 1], beta = s.beta[t], alpha = 1 - beta;
  const auto xt = forward_noise(x0, t, eps, s);
  const auto pred = forward(p, xt, t);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double mq = std::sqrt(ab_prev) * beta / (1 - ab) * x0.data[i] + std::sqrt(alpha) * (1 - ab_prev) / (1 - ab) * xt.data[i];
    const double mt = (xt.data[i] - beta / std::sqrt(1 - ab) * pred.data[i]) / std::sqrt(alpha);
    EXPECT_NEAR(d.data[i], (mq - mt) * (mq - mt), 1e-6);
  }
}

TEST(Anomaly, ThreadCountDoesNotChangeOutput) {
  const auto p = perturbed(5);
  const auto v = random_volume(16, 16, 3, 6);
  const auto s = linear_beta_schedule();
  for (auto kind : {NoiseKind::gaussian, NoiseKind::pyramidal}) {
    DetectConfig cfg;
    cfg.range = {75, 90};
    cfg.eval_noise.kind = kind;
    cfg.seed = 11;
    const auto base = anomaly_volume(p, v, s, cfg);
    for (int threads : {2, 4, 8}) {
      cfg.threads = threads;
      const auto r = anomaly_volume(p, v, s, cfg);
      EXPECT_EQ(r.per_channel, base.per_channel) << threads;
      EXPECT_EQ(r.pooled, base.pooled) << threads;
    }
  }
}

TEST(Anomaly, SubRangeRequestsMatchDirectRuns) {
  const auto p = perturbed(7);
  const auto v = random_volume(16, 16, 2, 8);
  const auto s = linear_beta_schedule();
  DetectConfig cfg;
  cfg.range = {75, 100};
  cfg.seed = 3;
  const std::vector<AggregationRequest> reqs = {{{75, 100}, Aggregation::gm}, {{80, 90}, Aggregation::am}, {{90, 100}, Aggregation::gm}};
  const auto multi = anomaly_volume_multi(p, v, s, cfg, reqs);
  ASSERT_EQ(multi.size(), 3u);
  for (std::size_t r = 0; r < reqs.size(); ++r) {
    DetectConfig direct = cfg;
    direct.range = reqs[r].range;
    direct.agg = reqs[r].agg;
    EXPECT_EQ(anomaly_volume(p, v, s, direct).per_channel, multi[r].per_channel) << r;
  }
  EXPECT_THROW(anomaly_volume_multi(p, v, s, cfg, {{{70, 80}, Aggregation::am}}), InvalidArgument);
}

TEST(Anomaly, PooledIsChannelMax) {
  const auto p = perturbed(9);
  const auto v = random_volume(8, 8, 2, 10);
  DetectConfig cfg;
  cfg.range = {75, 80};
  const auto r = anomaly_volume(p, v, linear_beta_schedule(), cfg);
  for (int h = 0; h < 8; ++h)
    for (int w = 0; w < 8; ++w)
      for (int d = 0; d < 2; ++d)
        EXPECT_EQ(r.pooled.at(h, w, d), std::max(r.per_channel.at(h, w, d, 0), r.per_channel.at(h, w, d, 1)));
}

TEST(Anomaly, SeedChangesNoise) {
  const auto p = perturbed(1);
  const auto v = random_volume(8, 8, 1, 2);
  DetectConfig a;
  a.range = {75, 78};
  DetectConfig b = a;
  b.seed = 1;
  const auto s = linear_beta_schedule();
  EXPECT_NE(anomaly_volume(p, v, s, a).pooled, anomaly_volume(p, v, s, b).pooled);
  EXPECT_EQ(eval_noise_key(0, 1, 75), eval_noise_key(0, 1, 75));
  EXPECT_NE(eval_noise_key(0, 1, 75), eval_noise_key(0, 2, 75));
}

TEST(Anomaly, ChannelMismatchRejected) {
  const auto p = perturbed(1);
  DetectConfig cfg;
  cfg.range = {75, 76};
  EXPECT_THROW(anomaly_volume(p, Volume(8, 8, 1, 1), linear_beta_schedule(), cfg), InvalidArgument);
}
