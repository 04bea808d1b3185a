// Acceptance suite: one PASS/FAIL line per criterion, exit 0 only if all pass.

#include <CLI11.hpp>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "andi/commands.hpp"
#include "common/oracles.hpp"

using namespace andi;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and sizes.
constexpr double kPosteriorAbsTol = 1e-8;
constexpr double kReparamAbsTol = 1e-5;
constexpr double kAlphaBarRelTol = 1e-12;
constexpr double kC1Seconds = 10.0;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradFloor = 1e-7;
constexpr std::size_t kGradMinParams = 200;
constexpr double kC2Seconds = 60.0;
constexpr double kStdRelTol = 1e-3;
constexpr int kNoiseSeeds = 200;
constexpr int kAmGmStacks = 10000;
constexpr double kAmGmSlack = 1e-6;
constexpr int kPostprocVolumes = 100;
constexpr int kYenHistograms = 1000;
constexpr double kYenTieRelTol = 1e-10;
constexpr int kAuprcMaxLength = 8;
constexpr double kAuprcAbsTol = 1e-6;
constexpr double kAblationGap = 0.10;
constexpr double kNonInferiority = 0.02;
constexpr double kC7Seconds = 30.0 * 60.0;
constexpr double kSweepMaxRange = 0.15;
constexpr int kSmallLesionVolumes = 10;

const TimeRange kRange{75, 200};
const std::vector<TimeRange> kSweepGrid = {{75, 150}, {75, 200}, {75, 250}};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  fs::path cache;
  int threads = 1;
  std::ofstream log;
  std::vector<std::pair<std::string, EvalReport>> reports;
  // Shared by criteria 7, 8 and 9.
  fs::path data_dir;
  fs::path pyr_checkpoint;
  std::vector<std::vector<ScalarVolume>> pyr_maps;  // one set per entry of pyr_requests()
  std::string c7_error;
  bool c7_ran = false;
};

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// 1

Outcome criterion1(Context&) {
  const auto t0 = Clock::now();
  const auto s = linear_beta_schedule();
  const auto betas = oracle::linear_betas();

  double ab_worst = 0;
  long double prod = 1.0L;
  for (int t = 1; t <= s.steps; ++t) {
    prod *= 1.0L - betas[t - 1];
    ab_worst = std::max(ab_worst, static_cast<double>(std::abs(s.alpha_bar[t] - prod) / prod));
  }

  Rng rng(101);
  double post_worst = 0;
  int post_cases = 0;
  for (int t : {2, 3, 10, 75, 150, 200, 500, 999, 1000})
    for (int k = 0; k < 4; ++k, ++post_cases) {
      const double x0 = rng.uniform(-1.5, 1.5);
      const double xt = std::sqrt(s.alpha_bar[t]) * x0 + std::sqrt(1 - s.alpha_bar[t]) * rng.normal();
      const double mu = posterior_mean(BasicSlice<double>(1, 1, 1, xt), BasicSlice<double>(1, 1, 1, x0), t, s).data[0];
      post_worst = std::max(post_worst, std::abs(mu - oracle::bayes_posterior_mean(xt, x0, t, betas)));
    }

  double rep_worst = 0;
  for (int t = 1; t <= s.steps; ++t) {
    Slice x0(8, 8, 2), eps(8, 8, 2);
    for (auto& v : x0.data) v = static_cast<float>(rng.uniform(0, 1.2));
    for (auto& v : eps.data) v = static_cast<float>(rng.normal());
    const auto xt = forward_noise(x0, t, eps, s);
    const auto mq = posterior_mean(xt, x0, t, s);
    const auto me = mu_from_eps(xt, eps, t, s);
    for (std::size_t i = 0; i < mq.size(); ++i) rep_worst = std::max(rep_worst, static_cast<double>(std::abs(mq.data[i] - me.data[i])));
  }
  const double secs = since(t0);
  const bool pass = post_worst <= kPosteriorAbsTol && rep_worst <= kReparamAbsTol && ab_worst <= kAlphaBarRelTol && secs < kC1Seconds;
  return {pass, fmt("posterior vs quadrature max |err| %.2e (<= %.0e, %d cases); reparameterization max |err| %.2e (<= %.0e, t=1..1000); "
                    "alpha_bar max rel err %.2e (<= %.0e); %.2f s (< %.0f s)",
                    post_worst, kPosteriorAbsTol, post_cases, rep_worst, kReparamAbsTol, ab_worst, kAlphaBarRelTol, secs, kC1Seconds)};
}

// 2

double relative_error(double fd, double an) { return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), kGradFloor}); }

Outcome criterion2(Context&) {
  const auto t0 = Clock::now();
  const DenoiserConfig tiny{1, 2, 1, 4};
  auto p = init_params<double>(tiny, 1);
  Rng rng(202);
  for (auto& v : p.values) v += 0.3 * rng.normal();
  const auto s = linear_beta_schedule();
  BasicSlice<double> x(8, 8, 1), w(8, 8, 1), x0(8, 8, 1), eps(8, 8, 1);
  for (auto& v : x.data) v = rng.normal();
  for (auto& v : w.data) v = rng.normal();
  for (auto& v : x0.data) v = rng.uniform(0, 1);
  for (auto& v : eps.data) v = rng.normal();
  const double h = 1e-5;
  const auto fd = [&](std::size_t i, const std::function<double()>& f) {
    const double keep = p.values[i];
    p.values[i] = keep + h;
    const double up = f();
    p.values[i] = keep - h;
    const double down = f();
    p.values[i] = keep;
    return (up - down) / (2 * h);
  };

  double net_worst = 0, loss_worst = 0;
  for (int t : {1, 123, 900}) {
    const auto grad = backward(p, x, t, w);
    const auto objective = [&] {
      const auto y = forward(p, x, t);
      double acc = 0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += w.data[i] * y.data[i];
      return acc;
    };
    for (std::size_t i = 0; i < p.values.size(); ++i) net_worst = std::max(net_worst, relative_error(fd(i, objective), grad[i]));
  }
  for (int t : {1, 75, 600}) {
    const auto lg = loss_and_grad(p, x0, t, eps, s);
    const auto loss = [&] { return loss_and_grad(p, x0, t, eps, s).loss; };
    for (std::size_t i = 0; i < p.values.size(); ++i) loss_worst = std::max(loss_worst, relative_error(fd(i, loss), lg.grad[i]));
  }
  const double secs = since(t0);
  const bool pass = p.values.size() >= kGradMinParams && net_worst <= kGradRelTol && loss_worst <= kGradRelTol && secs < kC2Seconds;
  return {pass, fmt("%zu parameters (>= %zu) x 3 timesteps; denoiser max rel err %.2e, loss max rel err %.2e (<= %.0e); %.1f s (< %.0f s)",
                    p.values.size(), kGradMinParams, net_worst, loss_worst, kGradRelTol, secs, kC2Seconds)};
}

// 3

Outcome criterion3(Context&) {
  const PyramidConfig cfg;
  double std_worst = 0;
  int samples = 0;
  for (int seed = 0; seed < kNoiseSeeds; ++seed, ++samples)
    std_worst = std::max(std_worst, std::abs(oracle::sample_std(pyramidal_noise<float>(64, 64, 2, cfg, seed)) - 1.0));
  for (auto [h, w] : {std::pair{31, 31}, {32, 128}, {128, 128}, {8, 40}})
    for (int seed = 0; seed < 5; ++seed, ++samples)
      std_worst = std::max(std_worst, std::abs(oracle::sample_std(pyramidal_noise<float>(h, w, 2, cfg, 1000 + seed)) - 1.0));

  int dims_checked = 0, dims_bad = 0;
  for (int H : {31, 32, 128})
    for (int W : {31, 32, 128})
      for (int i = 1; i <= 10; ++i)
        for (int r : {2, 3, 4}) {
          const auto [h, w] = pyramid_level_dims(H, W, i, r);
          ++dims_checked;
          if (h != oracle::level_extent(H, i, r) || w != oracle::level_extent(W, i, r)) ++dims_bad;
        }

  int det_bad = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = io::encode(io::to_record(std::vector<Slice>{pyramidal_noise<float>(64, 64, 2, cfg, seed)}, "n"));
    const auto b = io::encode(io::to_record(std::vector<Slice>{pyramidal_noise<float>(64, 64, 2, cfg, seed)}, "n"));
    const auto c = io::encode(io::to_record(std::vector<Slice>{pyramidal_noise<float>(64, 64, 2, cfg, seed + 1)}, "n"));
    if (a != b || a == c) ++det_bad;
  }
  const bool pass = std_worst <= kStdRelTol && dims_bad == 0 && det_bad == 0;
  return {pass, fmt("%d samples, max |std - 1| %.2e (<= %.0e); level dims %d/%d exact; byte determinism %d/20 seeds",
                    samples, std_worst, kStdRelTol, dims_checked - dims_bad, dims_checked, 20 - det_bad)};
}

// 4

Outcome criterion4(Context&) {
  Rng rng(404);
  std::size_t elements = 0, violations = 0;
  for (int k = 0; k < kAmGmStacks; ++k) {
    const int len = 1 + static_cast<int>(rng.below(40));
    const int t_low = 1 + static_cast<int>(rng.below(900));
    DeviationStack st{{t_low, t_low + len - 1}, {}};
    for (int t = 0; t < len; ++t) {
      Slice s(1, 8, 1);
      for (auto& v : s.data) v = rng.uniform() < 0.05 ? 0.0f : static_cast<float>(std::pow(10.0, rng.uniform(-12, 1)));
      st.maps.push_back(std::move(s));
    }
    const auto am = aggregate_am(st), gm = aggregate_gm(st);
    for (std::size_t i = 0; i < am.size(); ++i, ++elements)
      if (gm.data[i] > std::max(am.data[i], default_gm_floor) * (1.0 + kAmGmSlack)) ++violations;
  }

  auto params = init_params(DenoiserConfig{}, 5);
  for (auto& v : params.values) v += static_cast<float>(0.05 * rng.normal());
  PhantomConfig pc;
  pc.height = pc.width = 32;
  pc.depth = 4;
  pc.seed = 9;
  const auto healthy = gen_healthy(pc);
  AnomalySpec spec;
  spec.r_max = 5;
  spec.seed = 9;
  const auto vol = inject_anomalies(healthy.volume, healthy.brain, spec).volume;
  const auto s = linear_beta_schedule();
  int mismatches = 0;
  for (Aggregation agg : {Aggregation::gm, Aggregation::am}) {
    std::string reference;
    for (int threads : {1, 2, 4, 8}) {
      DetectConfig dc;
      dc.range = {75, 90};
      dc.agg = agg;
      dc.seed = 7;
      dc.threads = threads;
      const auto r = anomaly_volume(params, vol, s, dc);
      const auto bytes = io::encode(io::to_record(r.per_channel, "a")) + io::encode(io::to_record(r.pooled, "p"));
      if (threads == 1)
        reference = bytes;
      else if (bytes != reference)
        ++mismatches;
    }
  }
  const bool pass = violations == 0 && mismatches == 0;
  return {pass, fmt("AM >= GM on %zu elements of %d stacks, %zu violations; threads {2,4,8} vs 1: %d byte mismatches (gm and am)",
                    elements, kAmGmStacks, violations, mismatches)};
}

// 5

Outcome criterion5(Context&) {
  Rng rng(505);
  int median_bad = 0, dilate_bad = 0, binarize_bad = 0;
  for (int k = 0; k < kPostprocVolumes; ++k) {
    ScalarVolume a(8, 8, 8);
    const bool ties = k % 2 == 0;
    for (auto& x : a.data) x = ties ? static_cast<float>(rng.below(5)) * 0.25f : static_cast<float>(rng.uniform());
    for (int kernel : {3, 5})
      if (median_filter_3d(a, kernel) != oracle::median(a, kernel)) ++median_bad;
    SegMask m(8, 8, 8);
    for (auto& x : m.data) x = rng.uniform() < 0.08;
    for (int r : {1, 2})
      if (dilate_3d(m, r) != oracle::dilation(m, r)) ++dilate_bad;
    const float thr = ties ? static_cast<float>(rng.below(5)) * 0.25f : static_cast<float>(rng.uniform());
    if (binarize(a, thr) != oracle::binarize(a, thr)) ++binarize_bad;
  }

  int yen_exact = 0, yen_tie = 0, yen_bad = 0;
  for (int trial = 0; trial < kYenHistograms; ++trial) {
    std::vector<std::uint64_t> counts(256, 0);
    const int shape = trial % 4;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double x = static_cast<double>(i);
      if (shape == 0) counts[i] = rng.below(1000);
      if (shape == 1) counts[i] = rng.uniform() < 0.1 ? rng.below(50) : 0;
      if (shape == 2)
        counts[i] = static_cast<std::uint64_t>(5000 * std::exp(-std::pow((x - 60) / 15, 2)) + 800 * std::exp(-std::pow((x - 190) / 10, 2))) +
                    rng.below(3);
      if (shape == 3) counts[i] = static_cast<std::uint64_t>(1e5 * std::exp(-x / 20)) + rng.below(2);
    }
    const auto expect = oracle::yen_argmax(counts);
    const int got = yen_bin(counts);
    if (got == expect.bin)
      ++yen_exact;
    else if (got >= 0 && std::abs(oracle::yen_criterion(counts, got) - expect.value) <= kYenTieRelTol * std::abs(expect.value))
      ++yen_tie;
    else
      ++yen_bad;
  }
  const bool pass = median_bad == 0 && dilate_bad == 0 && binarize_bad == 0 && yen_bad == 0;
  return {pass, fmt("%d volumes: median k3/k5 %d mismatches, dilation r1/r2 %d, binarize %d; Yen on %d histograms: %d exact argmax, "
                    "%d rounding ties (rel <= %.0e), %d wrong",
                    kPostprocVolumes, median_bad, dilate_bad, binarize_bad, kYenHistograms, yen_exact, yen_tie, kYenTieRelTol, yen_bad)};
}

// 6

Outcome criterion6(Context& ctx) {
  Rng rng(606);
  std::size_t cases = 0, auprc_bad = 0;
  double auprc_worst = 0;
  const auto check = [&](const std::vector<float>& sc, const std::vector<std::uint8_t>& lb) {
    const double err = std::abs(static_cast<double>(auprc(sc, lb)) - oracle::exact_ap(sc, lb).value());
    auprc_worst = std::max(auprc_worst, err);
    if (err > kAuprcAbsTol) ++auprc_bad;
    ++cases;
  };
  for (int n = 1; n <= kAuprcMaxLength; ++n)
    for (int pattern = 1; pattern < (1 << n); ++pattern) {
      std::vector<std::uint8_t> labels(n);
      for (int i = 0; i < n; ++i) labels[i] = (pattern >> i) & 1;
      if (n <= 5) {
        int combos = 1;
        for (int i = 0; i < n; ++i) combos *= 3;
        for (int c = 0; c < combos; ++c) {
          std::vector<float> scores(n);
          for (int i = 0, x = c; i < n; ++i, x /= 3) scores[i] = 0.5f * static_cast<float>(x % 3);
          check(scores, labels);
        }
      } else {
        for (int r = 0; r < 20; ++r) {
          std::vector<float> scores(n);
          for (auto& s : scores) s = 0.25f * static_cast<float>(rng.below(5));
          check(scores, labels);
        }
      }
    }

  SegMask a(6, 6, 6), b(6, 6, 6), c(6, 6, 6), half(6, 6, 6);
  for (int h = 0; h < 6; ++h)
    for (int w = 0; w < 6; ++w)
      for (int d = 0; d < 6; ++d) {
        a.at(h, w, d) = h < 2;
        c.at(h, w, d) = h >= 4;
        half.at(h, w, d) = h >= 1 && h < 3;
      }
  b = a;
  const bool dice_ok = dice(a, b) == 1.0f && dice(a, c) == 0.0f && dice(a, half) == 0.5f && oracle::dice(a, half) == 0.5;

  int random_runs = 0;
  for (int k = 0; k < 40; ++k, ++random_runs) {
    std::vector<ScalarVolume> maps;
    std::vector<EvalSubject> subs;
    for (int s = 0; s < 3; ++s) {
      ScalarVolume m(12, 12, 6);
      SegMask gt(12, 12, 6);
      const int h0 = 1 + static_cast<int>(rng.below(7)), w0 = 1 + static_cast<int>(rng.below(7));
      const double lift = rng.uniform(0.0, 2.0);
      for (int h = 0; h < 12; ++h)
        for (int w = 0; w < 12; ++w)
          for (int d = 0; d < 6; ++d) {
            const bool in = h >= h0 && h < h0 + 4 && w >= w0 && w < w0 + 4 && d >= 2 && d < 4;
            gt.at(h, w, d) = in;
            m.at(h, w, d) = static_cast<float>(rng.uniform() + (in ? lift : 0.0));
          }
      maps.push_back(std::move(m));
      subs.push_back({"r" + std::to_string(s), gt, SegMask(12, 12, 6, 1)});
    }
    ctx.reports.emplace_back("random" + std::to_string(k), evaluate_maps(maps, subs, PostprocConfig{}, MetricsConfig{}));
  }
  std::size_t ceil_bad = 0, from_yen = 0;
  for (const auto& [name, r] : ctx.reports) {
    if (r.ceil_dice < r.dice_yen) ++ceil_bad;
    if (r.ceil_from_yen) ++from_yen;
  }
  const bool pass = auprc_bad == 0 && cases > 0 && dice_ok && ceil_bad == 0;
  return {pass, fmt("AUPRC vs exact rationals on %zu cases (all label patterns, n <= %d): max |err| %.1e (<= %.0e), %zu bad; "
                    "Dice 1.0/0.0/0.5 cases %s; ceil_dice >= dice_yen on %zu/%zu evaluated runs (%zu pipeline runs, "
                    "Yen configuration was the ceiling in %zu)",
                    cases, kAuprcMaxLength, auprc_worst, kAuprcAbsTol, auprc_bad, dice_ok ? "exact" : "WRONG",
                    ctx.reports.size() - ceil_bad, ctx.reports.size(), ctx.reports.size() - random_runs, from_yen)};
}

// 7 (also prepares 8 and 9)

std::vector<AggregationRequest> pyr_requests() {
  // 0: gm [75,200], 1: am [75,200], then the sweep grid (gm).
  std::vector<AggregationRequest> r = {{kRange, Aggregation::gm}, {kRange, Aggregation::am}};
  for (const auto& g : kSweepGrid) r.push_back({g, Aggregation::gm});
  return r;
}

ExperimentConfig desk_config(NoiseKind training_noise) {
  auto c = preset_config("desk");
  c.train.training_noise = training_noise;
  c.anomaly.range = kRange;
  c.anomaly.aggregation = Aggregation::gm;
  c.anomaly.eval_noise = NoiseKind::gaussian;
  c.postproc.median_kernel = 3;
  c.validate();
  return c;
}

// Trains (or reuses a cached checkpoint trained by this binary) and returns the
// training wall time in seconds.
double train_model(Context& ctx, const ExperimentConfig& cfg, const fs::path& out, const std::string& tag) {
  const fs::path cached = ctx.cache.empty() ? fs::path{} : ctx.cache / (tag + "_" + config_fingerprint(cfg) + ".ntf");
  if (!cached.empty() && fs::exists(cached) && fs::exists(cached.string() + ".seconds")) {
    fs::copy_file(cached, out, fs::copy_options::overwrite_existing);
    std::ifstream in(cached.string() + ".seconds");
    double secs = 0;
    in >> secs;
    progress("reusing cached " + tag + " checkpoint (trained in " + fmt("%.0f", secs) + " s)");
    return secs;
  }
  progress("training " + tag + " model");
  const auto t0 = Clock::now();
  cmd_train(cfg, {ctx.data_dir, out, false, -1, ctx.threads}, ctx.log);
  const double secs = since(t0);
  if (!ctx.cache.empty()) {
    fs::create_directories(ctx.cache);
    fs::copy_file(out, cached, fs::copy_options::overwrite_existing);
    std::ofstream(cached.string() + ".seconds") << fmt("%.3f", secs) << "\n";
  }
  return secs;
}

EvalReport evaluate(Context& ctx, const std::string& name, const std::vector<ScalarVolume>& maps,
                    const std::vector<EvalSubject>& subjects, const ExperimentConfig& cfg) {
  auto rep = evaluate_maps(maps, subjects, cfg.postproc, cfg.metrics);
  rep.fingerprint = config_fingerprint(cfg);
  rep.seed = cfg.seed;
  write_eval_outputs(ctx.work / "reports" / name, rep, cfg);
  ctx.reports.emplace_back(name, rep);
  return rep;
}

Outcome criterion7(Context& ctx) {
  ctx.c7_ran = true;
  const auto pyr_cfg = desk_config(NoiseKind::pyramidal);
  const auto gau_cfg = desk_config(NoiseKind::gaussian);
  ctx.data_dir = ctx.work / "desk" / "data";
  progress("generating desk dataset");
  fs::remove_all(ctx.data_dir);
  const auto t_gen = Clock::now();
  cmd_gen_data(pyr_cfg, ctx.data_dir, ctx.threads, ctx.log);
  const double gen_secs = since(t_gen);

  ctx.pyr_checkpoint = ctx.work / "desk" / "pyramidal.ntf";
  const fs::path gau_checkpoint = ctx.work / "desk" / "gaussian.ntf";
  const double train_pyr = train_model(ctx, pyr_cfg, ctx.pyr_checkpoint, "pyramidal");
  const double train_gau = train_model(ctx, gau_cfg, gau_checkpoint, "gaussian");
  const auto pyr = load_checkpoint(ctx.pyr_checkpoint), gau = load_checkpoint(gau_checkpoint);
  if (pyr.state.optimizer.step != gau.state.optimizer.step) throw CorrectnessError("models trained for different step counts");

  const auto t_eval = Clock::now();
  const auto m = read_manifest(ctx.data_dir);
  const auto subjects = load_eval_subjects(ctx.data_dir, m);
  progress("mapping test set with the pyramidal model (gm/am, sweep ranges)");
  ctx.pyr_maps = compute_dataset_maps(pyr.state.params, ctx.data_dir, m, pyr.config, pyr_requests(), ctx.threads, ctx.log);
  progress("mapping test set with the gaussian model");
  const auto gau_maps = compute_dataset_maps(gau.state.params, ctx.data_dir, m, gau.config, {{kRange, Aggregation::gm}}, ctx.threads, ctx.log);
  auto pe_cfg = pyr.config;
  pe_cfg.anomaly.eval_noise = NoiseKind::pyramidal;
  progress("mapping test set with the pyramidal model and pyramidal eval noise");
  const auto pe_maps = compute_dataset_maps(pyr.state.params, ctx.data_dir, m, pe_cfg, {{kRange, Aggregation::gm}}, ctx.threads, ctx.log);

  auto am_cfg = pyr.config;
  am_cfg.anomaly.aggregation = Aggregation::am;
  const auto r_pyr = evaluate(ctx, "c7_pyramidal_gm", ctx.pyr_maps[0], subjects, pyr.config);
  const auto r_am = evaluate(ctx, "c7_pyramidal_am", ctx.pyr_maps[1], subjects, am_cfg);
  const auto r_gau = evaluate(ctx, "c7_gaussian_gm", gau_maps.front(), subjects, gau.config);
  const auto r_pe = evaluate(ctx, "c7_pyramidal_gm_pyramidal_eval", pe_maps.front(), subjects, pe_cfg);
  const double eval_secs = since(t_eval);
  const double total = gen_secs + train_pyr + train_gau + eval_secs;

  const double gap = r_pyr.auprc - r_gau.auprc;
  const bool gap_ok = gap >= kAblationGap;
  const bool gm_ok = r_pyr.auprc >= r_am.auprc - kNonInferiority;
  const bool ge_ok = r_pyr.auprc >= r_pe.auprc - kNonInferiority;
  const bool time_ok = total <= kC7Seconds;
  std::ofstream(ctx.work / "c7_summary.txt") << fmt(
      "auprc pyramidal_gm %.6f\nauprc gaussian_gm %.6f\nauprc pyramidal_am %.6f\nauprc pyramidal_gm_pyramidal_eval %.6f\n"
      "dice_yen pyramidal_gm %.6f\nceil_dice pyramidal_gm %.6f\nseconds gen %.1f train_pyramidal %.1f train_gaussian %.1f eval %.1f total %.1f\n"
      "threads %d\n",
      r_pyr.auprc, r_gau.auprc, r_am.auprc, r_pe.auprc, r_pyr.dice_yen, r_pyr.ceil_dice, gen_secs, train_pyr, train_gau, eval_secs, total,
      ctx.threads);
  return {gap_ok && gm_ok && ge_ok && time_ok,
          fmt("AUPRC pyramidal-trained %.4f vs gaussian-trained %.4f, gap %+.4f (>= %.2f) %s; gm %.4f vs am %.4f (gm >= am - %.2f) %s; "
              "gauss-eval %.4f vs pyramidal-eval %.4f (>= - %.2f) %s; runtime %.1f min on %d thread(s) (<= %.0f min) %s "
              "[gen %.0f s, train %.0f + %.0f s, eval %.0f s incl. the sweep's extra timesteps; %lld steps each]",
              r_pyr.auprc, r_gau.auprc, gap, kAblationGap, gap_ok ? "ok" : "FAILED", r_pyr.auprc, r_am.auprc, kNonInferiority,
              gm_ok ? "ok" : "FAILED", r_pyr.auprc, r_pe.auprc, kNonInferiority, ge_ok ? "ok" : "FAILED", total / 60, ctx.threads,
              kC7Seconds / 60, time_ok ? "ok" : "FAILED", gen_secs, train_pyr, train_gau, eval_secs,
              static_cast<long long>(pyr.state.optimizer.step))};
}

void require_desk(const Context& ctx) {
  if (!ctx.c7_ran) throw InvalidArgument("needs criterion 7 (desk models) in the same run");
  if (ctx.pyr_maps.empty()) throw CorrectnessError("desk models unavailable: " + ctx.c7_error);
}

// 8

Outcome criterion8(Context& ctx) {
  require_desk(ctx);
  const auto ck = load_checkpoint(ctx.pyr_checkpoint);
  auto gen_cfg = ck.config;
  gen_cfg.seed = ck.config.seed + 1;
  gen_cfg.synthgen.anomalies.r_min = 2.0;
  gen_cfg.synthgen.anomalies.r_max = 4.0;
  gen_cfg.synthgen.n_test = kSmallLesionVolumes;
  gen_cfg.synthgen.n_healthy_test = 0;
  gen_cfg.synthgen.n_train_slices = 1;
  const fs::path dir = ctx.work / "small_lesions";
  fs::remove_all(dir);
  progress("generating small-lesion split and mapping it");
  cmd_gen_data(gen_cfg, dir, ctx.threads, ctx.log);
  const auto m = read_manifest(dir);
  const auto subjects = load_eval_subjects(dir, m);
  const auto maps = compute_dataset_maps(ck.state.params, dir, m, ck.config, {{kRange, Aggregation::gm}}, ctx.threads, ctx.log);
  auto mf3 = ck.config, mf5 = ck.config;
  mf3.postproc.median_kernel = 3;
  mf5.postproc.median_kernel = 5;
  const auto r3 = evaluate(ctx, "c8_mf3", maps.front(), subjects, mf3);
  const auto r5 = evaluate(ctx, "c8_mf5", maps.front(), subjects, mf5);
  return {r3.dice_yen >= r5.dice_yen,
          fmt("%d volumes, lesion radii 2-4, seed %llu: Dice_Yen MF3 %.4f vs MF5 %.4f (AUPRC %.4f vs %.4f)", kSmallLesionVolumes,
              static_cast<unsigned long long>(gen_cfg.seed), r3.dice_yen, r5.dice_yen, r3.auprc, r5.auprc)};
}

// 9

Outcome criterion9(Context& ctx) {
  require_desk(ctx);
  const auto ck = load_checkpoint(ctx.pyr_checkpoint);
  const auto m = read_manifest(ctx.data_dir);
  const auto subjects = load_eval_subjects(ctx.data_dir, m);
  const std::vector<std::vector<ScalarVolume>> maps(ctx.pyr_maps.begin() + 2, ctx.pyr_maps.end());
  const fs::path csv = ctx.work / "sweep.csv";
  fs::remove(csv);
  const auto rows = sweep_from_maps(maps, kSweepGrid, subjects, ck.config, csv, ctx.log);
  double lo = 1, hi = 0;
  std::string values;
  for (const auto& r : rows) {
    lo = std::min(lo, r.report.auprc);
    hi = std::max(hi, r.report.auprc);
    values += fmt("%s[%d,%d] %.4f", values.empty() ? "" : ", ", r.range.t_low, r.range.t_high, r.report.auprc);
    ctx.reports.emplace_back(fmt("c9_%d_%d", r.range.t_low, r.range.t_high), r.report);
  }
  const auto text = io::read_file(csv);
  const bool csv_ok = text.rfind("t_low,t_high,auprc,ceil_dice,dice_yen\n", 0) == 0 &&
                      std::count(text.begin(), text.end(), '\n') == static_cast<long>(kSweepGrid.size()) + 1;
  return {hi - lo < kSweepMaxRange && csv_ok,
          fmt("AUPRC %s; range %.4f (< %.2f); CSV %s", values.c_str(), hi - lo, kSweepMaxRange, csv_ok ? "written" : "MISSING/INVALID")};
}

// 10

ExperimentConfig small_pipeline_config() {
  auto c = preset_config("desk");
  c.seed = 31;
  c.denoiser = {2, 4, 2, 8};
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.anomaly.range = {75, 85};
  auto& g = c.synthgen;
  g.n_train_slices = 48;
  g.n_test = 3;
  g.phantom.height = g.phantom.width = 32;
  g.phantom.depth = 6;
  g.anomalies.r_min = 2;
  g.anomalies.r_max = 5;
  c.validate();
  return c;
}

void run_pipeline(Context& ctx, const fs::path& root, int threads) {
  const auto cfg = small_pipeline_config();
  fs::remove_all(root);
  cmd_gen_data(cfg, root / "data", threads, ctx.log);
  cmd_train(cfg, {root / "data", root / "model.ntf", false, -1, threads}, ctx.log);
  const auto m = read_manifest(root / "data");
  cmd_detect({root / "model.ntf", root / "data" / m.test[0].volume, root / "detect", {}, threads}, ctx.log);
  const auto rep = cmd_eval({root / "model.ntf", root / "data", root / "eval", {}, MapSource::model, {}, threads}, ctx.log);
  ctx.reports.emplace_back("c10_" + root.filename().string(), rep);
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
  return out;
}

Outcome criterion10(Context& ctx) {
  progress("end-to-end determinism runs");
  const int wide = std::max(4, ctx.threads);
  run_pipeline(ctx, ctx.work / "e2e_a", 1);
  run_pipeline(ctx, ctx.work / "e2e_b", wide);
  const auto a = tree_bytes(ctx.work / "e2e_a"), b = tree_bytes(ctx.work / "e2e_b");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) ++differing;
  }
  const bool same = a.size() == b.size() && differing == 0 && !a.empty();

  const auto m = read_manifest(ctx.work / "e2e_a" / "data");
  bool bench_ok = true;
  try {
    cmd_bench({ctx.work / "e2e_a" / "model.ntf", ctx.work / "e2e_a" / "data" / m.test[0].volume, {1, 2, 4}, 2, {}}, ctx.log);
  } catch (const std::exception& e) {
    bench_ok = false;
    ctx.log << "bench failed: " << e.what() << "\n";
  }
  bool refused = false;
  try {
    bench_thread_counts([](int threads) { return threads == 1 ? std::string("x") : std::string("y"); }, {1, 2}, 2);
  } catch (const CorrectnessError&) {
    refused = true;
  }
  return {same && bench_ok && refused,
          fmt("gen-data -> train -> detect -> eval at 1 vs %d threads: %zu artifacts, %zu differing (byte comparison); "
              "bench on identical outputs %s; bench with divergent outputs %s",
              wide, a.size(), differing + (a.size() > b.size() ? a.size() - b.size() : b.size() - a.size()),
              bench_ok ? "reports" : "FAILED", refused ? "refuses (CorrectnessError)" : "DID NOT REFUSE")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ANDi acceptance suite"};
  fs::path work;
  std::string cache;
  std::vector<int> only;
  int threads = 0;
  app.add_option("--work-dir", work, "Scratch directory for datasets, models and reports")->required();
  app.add_option("--cache-dir", cache, "Reuse desk checkpoints trained by an earlier run (env ANDI_ACCEPTANCE_CACHE)")
      ->envname("ANDI_ACCEPTANCE_CACHE");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 10));
  app.add_option("--threads", threads, "Worker threads (0: ANDI_THREADS, else all cores)")->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  ctx.cache = cache;
  ctx.threads = resolve_threads(threads);
  fs::create_directories(ctx.work);
  ctx.log.open(ctx.work / "acceptance.log");

  const std::map<int, std::function<Outcome(Context&)>> criteria = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
  // 6 audits the reports of every other run, so it goes last.
  const std::vector<int> order = {1, 2, 3, 4, 5, 10, 7, 8, 9, 6};
  const auto selected = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

  std::map<int, Outcome> results;
  for (int n : order) {
    if (!selected(n)) continue;
    const auto t0 = Clock::now();
    try {
      results[n] = criteria.at(n)(ctx);
    } catch (const std::exception& e) {
      results[n] = {false, std::string("error: ") + e.what()};
      if (n == 7) ctx.c7_error = e.what();
    }
    progress(fmt("criterion %d %s (%.1f s)", n, results[n].pass ? "PASS" : "FAIL", since(t0)));
  }
  bool all = true;
  for (const auto& [n, r] : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << r.detail << "\n";
    all = all && r.pass;
  }
  std::cout << (all ? "ALL PASS" : "SOME FAILED") << " (" << results.size() << " criteria, " << ctx.threads << " thread(s))\n";
  return all ? 0 : 3;
}
