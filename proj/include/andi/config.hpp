#pragma once

// Experiment configuration: every module's settings in one JSON document with
// an explicit schema version. Missing keys keep the preset's value; unknown
// keys are rejected.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "andi/anomaly.hpp"
#include "andi/denoiser.hpp"
#include "andi/error.hpp"
#include "andi/io.hpp"
#include "andi/noise.hpp"
#include "andi/postproc.hpp"
#include "andi/schedule.hpp"
#include "andi/synthgen.hpp"
#include "andi/train.hpp"

namespace andi {

inline constexpr int config_schema_version = 1;

struct ScheduleConfig {
  int steps = 1000;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  bool operator==(const ScheduleConfig&) const = default;
};

struct AnomalyConfig {
  TimeRange range;
  Aggregation aggregation = Aggregation::gm;
  NoiseKind eval_noise = NoiseKind::gaussian;
  float gm_floor = default_gm_floor;
};

enum class AuprcPooling { pooled, per_subject };

struct MetricsConfig {
  int n_candidates = 200;
  AuprcPooling pooling = AuprcPooling::pooled;
  bool foreground_only = false;  // restrict AUPRC to brain voxels
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string checkpoint = "runs/model.ntf";
  std::string out_dir = "runs";
};

struct ExperimentConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  PyramidConfig pyramid;
  DenoiserConfig denoiser;
  TrainConfig train;
  AnomalyConfig anomaly;
  PostprocConfig postproc;
  MetricsConfig metrics;
  DatasetRequest synthgen;
  PathsConfig paths;

  NoiseSchedule make_schedule() const { return linear_beta_schedule(schedule.steps, schedule.beta_1, schedule.beta_T); }

  DetectConfig detect_config(int threads) const {
    DetectConfig d;
    d.range = anomaly.range;
    d.agg = anomaly.aggregation;
    d.eval_noise = {anomaly.eval_noise, pyramid};
    d.gm_floor = anomaly.gm_floor;
    d.seed = seed;
    d.threads = threads;
    return d;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  DatasetRequest dataset_request(int threads) const {
    DatasetRequest r = synthgen;
    r.seed = seed;
    r.threads = threads;
    return r;
  }

  void validate() const {
    detail::require(schedule.steps >= 1, "schedule.steps must be >= 1");
    detail::require(schedule.beta_1 > 0.0 && schedule.beta_1 <= schedule.beta_T && schedule.beta_T < 1.0,
                    "schedule betas must satisfy 0 < beta_1 <= beta_T < 1");
    if (anomaly.range.t_high > schedule.steps)
      throw InvalidArgument("anomaly.t_high = " + std::to_string(anomaly.range.t_high) + " exceeds schedule.steps = " +
                            std::to_string(schedule.steps));
    anomaly.range.validate(schedule.steps);
    detail::require(anomaly.gm_floor > 0.0f, "anomaly.gm_floor must be > 0");
    pyramid.validate();
    denoiser.validate();
    train.validate();
    postproc.validate();
    detail::require(metrics.n_candidates >= 1, "metrics.n_candidates must be >= 1");
    synthgen.phantom.validate();
    synthgen.anomalies.validate(synthgen.phantom.channels);
    detail::require(synthgen.n_train_slices >= 1 && synthgen.n_test >= 1 && synthgen.n_healthy_test >= 0,
                    "synthgen counts must be >= 1");
    if (synthgen.phantom.channels != denoiser.in_channels)
      throw InvalidArgument("synthgen.phantom.channels (" + std::to_string(synthgen.phantom.channels) +
                            ") differs from denoiser.in_channels (" + std::to_string(denoiser.in_channels) + ")");
    const int f = 1 << denoiser.depth;
    if (synthgen.phantom.height % f != 0 || synthgen.phantom.width % f != 0)
      throw InvalidArgument("synthgen phantom height and width must be divisible by 2^denoiser.depth");
  }
};

inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "paper") {
    c.train.batch_size = 128;
    c.train.epochs = 232;
    return c;
  }
  throw InvalidArgument("unknown preset '" + name + "' (expected desk or paper)");
}

namespace detail {

// Reads fields from one JSON object and rejects keys that were never read.
class StrictObject {
 public:
  StrictObject(const io::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const io::json::exception&) {
      throw InvalidArgument("config: '" + where(key) + "' has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  StrictObject child(const char* key) {
    seen_.insert(key);
    return StrictObject(j_.at(key), where(key));
  }

  const io::json& raw() const { return j_; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw InvalidArgument("config: unknown key '" + where(k) + "'");
  }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const io::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline io::json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  const auto& g = c.synthgen;
  io::json j;
  j["schema_version"] = config_schema_version;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["schedule"] = {{"steps", c.schedule.steps}, {"beta_1", c.schedule.beta_1}, {"beta_T", c.schedule.beta_T}};
  j["pyramid"] = {{"levels", c.pyramid.levels}, {"decay", c.pyramid.decay}, {"jitter", c.pyramid.jitter}};
  j["denoiser"] = {{"in_channels", c.denoiser.in_channels},
                   {"base_width", c.denoiser.base_width},
                   {"depth", c.denoiser.depth},
                   {"time_embed_dim", c.denoiser.time_embed_dim}};
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"lr_base", t.lr_base},
                {"lr_peak", t.lr_peak},
                {"warmup_fraction", t.warmup_fraction},
                {"weight_decay", t.weight_decay},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"noise", to_string(t.training_noise)}};
  j["anomaly"] = {{"t_low", c.anomaly.range.t_low},
                  {"t_high", c.anomaly.range.t_high},
                  {"aggregation", to_string(c.anomaly.aggregation)},
                  {"eval_noise", to_string(c.anomaly.eval_noise)},
                  {"gm_floor", c.anomaly.gm_floor}};
  j["postproc"] = {{"median_kernel", c.postproc.median_kernel},
                   {"dilate_radius", c.postproc.dilate_radius},
                   {"yen_bins", c.postproc.yen_bins},
                   {"yen_foreground_only", c.postproc.yen_foreground_only}};
  j["metrics"] = {{"n_candidates", c.metrics.n_candidates},
                  {"auprc_pooling", c.metrics.pooling == AuprcPooling::pooled ? "pooled" : "per_subject"},
                  {"foreground_only", c.metrics.foreground_only}};
  j["synthgen"] = {{"n_train_slices", g.n_train_slices},
                   {"n_test", g.n_test},
                   {"n_healthy_test", g.n_healthy_test},
                   {"phantom", g.phantom},
                   {"anomalies", g.anomalies}};
  j["paths"] = {{"data_dir", c.paths.data_dir}, {"checkpoint", c.paths.checkpoint}, {"out_dir", c.paths.out_dir}};
  return j;
}

// Overlays `j` on the preset it names (default "desk").
inline ExperimentConfig config_from_json(const io::json& j) {
  detail::StrictObject root(j, "");
  int version = config_schema_version;
  root.get("schema_version", version);
  if (version != config_schema_version)
    throw InvalidArgument("config: unsupported schema_version " + std::to_string(version));
  std::string preset = "desk";
  root.get("preset", preset);
  ExperimentConfig c = preset_config(preset);
  root.get("seed", c.seed);

  if (root.has("schedule")) {
    auto o = root.child("schedule");
    o.get("steps", c.schedule.steps);
    o.get("beta_1", c.schedule.beta_1);
    o.get("beta_T", c.schedule.beta_T);
    o.finish();
  }
  if (root.has("pyramid")) {
    auto o = root.child("pyramid");
    o.get("levels", c.pyramid.levels);
    o.get("decay", c.pyramid.decay);
    o.get("jitter", c.pyramid.jitter);
    o.finish();
  }
  if (root.has("denoiser")) {
    auto o = root.child("denoiser");
    o.get("in_channels", c.denoiser.in_channels);
    o.get("base_width", c.denoiser.base_width);
    o.get("depth", c.denoiser.depth);
    o.get("time_embed_dim", c.denoiser.time_embed_dim);
    o.finish();
  }
  if (root.has("train")) {
    auto o = root.child("train");
    auto& t = c.train;
    o.get("epochs", t.epochs);
    o.get("batch_size", t.batch_size);
    o.get("lr_base", t.lr_base);
    o.get("lr_peak", t.lr_peak);
    o.get("warmup_fraction", t.warmup_fraction);
    o.get("weight_decay", t.weight_decay);
    o.get("adam_beta1", t.adam_beta1);
    o.get("adam_beta2", t.adam_beta2);
    o.get("adam_eps", t.adam_eps);
    std::string noise = to_string(t.training_noise);
    o.get("noise", noise);
    t.training_noise = parse_noise_kind(noise);
    o.finish();
  }
  if (root.has("anomaly")) {
    auto o = root.child("anomaly");
    o.get("t_low", c.anomaly.range.t_low);
    o.get("t_high", c.anomaly.range.t_high);
    std::string agg = to_string(c.anomaly.aggregation), noise = to_string(c.anomaly.eval_noise);
    o.get("aggregation", agg);
    o.get("eval_noise", noise);
    c.anomaly.aggregation = parse_aggregation(agg);
    c.anomaly.eval_noise = parse_noise_kind(noise);
    o.get("gm_floor", c.anomaly.gm_floor);
    o.finish();
  }
  if (root.has("postproc")) {
    auto o = root.child("postproc");
    o.get("median_kernel", c.postproc.median_kernel);
    o.get("dilate_radius", c.postproc.dilate_radius);
    o.get("yen_bins", c.postproc.yen_bins);
    o.get("yen_foreground_only", c.postproc.yen_foreground_only);
    o.finish();
  }
  if (root.has("metrics")) {
    auto o = root.child("metrics");
    o.get("n_candidates", c.metrics.n_candidates);
    std::string pooling = c.metrics.pooling == AuprcPooling::pooled ? "pooled" : "per_subject";
    o.get("auprc_pooling", pooling);
    if (pooling == "pooled")
      c.metrics.pooling = AuprcPooling::pooled;
    else if (pooling == "per_subject")
      c.metrics.pooling = AuprcPooling::per_subject;
    else
      throw InvalidArgument("config: metrics.auprc_pooling must be pooled or per_subject");
    o.get("foreground_only", c.metrics.foreground_only);
    o.finish();
  }
  if (root.has("synthgen")) {
    auto o = root.child("synthgen");
    auto& g = c.synthgen;
    o.get("n_train_slices", g.n_train_slices);
    o.get("n_test", g.n_test);
    o.get("n_healthy_test", g.n_healthy_test);
    if (o.has("phantom")) {
      auto p = o.child("phantom");
      auto& ph = g.phantom;
      p.get("height", ph.height);
      p.get("width", ph.width);
      p.get("depth", ph.depth);
      p.get("channels", ph.channels);
      p.get("brain_semi_h", ph.brain_semi_h);
      p.get("brain_semi_w", ph.brain_semi_w);
      p.get("brain_semi_d", ph.brain_semi_d);
      p.get("smoothness", ph.smoothness);
      p.get("base", ph.base);
      p.get("amplitude", ph.amplitude);
      p.get("channel_correlation", ph.channel_correlation);
      p.finish();
    }
    if (o.has("anomalies")) {
      auto a = o.child("anomalies");
      auto& as = g.anomalies;
      a.get("count", as.count);
      a.get("r_min", as.r_min);
      a.get("r_max", as.r_max);
      a.get("offsets", as.offsets);
      a.get("multiplier_min", as.multiplier_min);
      a.get("multiplier_max", as.multiplier_max);
      a.get("z_scale", as.z_scale);
      a.finish();
    }
    o.finish();
  }
  if (root.has("paths")) {
    auto o = root.child("paths");
    o.get("data_dir", c.paths.data_dir);
    o.get("checkpoint", c.paths.checkpoint);
    o.get("out_dir", c.paths.out_dir);
    o.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  io::json j;
  try {
    j = io::json::parse(io::read_file(path));
  } catch (const io::json::exception& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// Hash of everything that can change results; paths are excluded.
inline std::string config_fingerprint(const ExperimentConfig& c) {
  auto j = config_to_json(c);
  j.erase("paths");
  j.erase("preset");
  return io::hex64(io::fnv1a64(j.dump()));
}

}  // namespace andi
