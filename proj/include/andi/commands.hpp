#pragma once

// The pipeline steps behind the command-line tool. Each command is a pure
// function of its config, input files and seed at the byte level of the files
// it writes; wall-clock timings only go to the log stream.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "andi/anomaly.hpp"
#include "andi/checkpoint.hpp"
#include "andi/config.hpp"
#include "andi/error.hpp"
#include "andi/io.hpp"
#include "andi/metrics.hpp"
#include "andi/postproc.hpp"
#include "andi/synthgen.hpp"
#include "andi/train.hpp"

namespace andi {

namespace fs = std::filesystem;

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Command-line adjustments applied on top of a checkpoint's config.
struct Overrides {
  std::optional<int> median_kernel;
  std::optional<Aggregation> aggregation;
  std::optional<int> t_low;
  std::optional<int> t_high;
  std::optional<NoiseKind> eval_noise;
};

inline ExperimentConfig apply_overrides(ExperimentConfig cfg, const Overrides& o) {
  if (o.median_kernel) cfg.postproc.median_kernel = *o.median_kernel;
  if (o.aggregation) cfg.anomaly.aggregation = *o.aggregation;
  if (o.t_low) cfg.anomaly.range.t_low = *o.t_low;
  if (o.t_high) cfg.anomaly.range.t_high = *o.t_high;
  if (o.eval_noise) cfg.anomaly.eval_noise = *o.eval_noise;
  cfg.validate();
  return cfg;
}

// gen-data

inline DatasetManifest cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out_dir, int threads, std::ostream& log) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = gen_dataset(cfg.dataset_request(threads), out_dir);
  log << "wrote " << m.n_train_slices << " training slices, " << m.test.size() << " test volumes and " << m.healthy.size()
      << " healthy volumes to " << out_dir.string() << " (" << detail::fmt("%.1f", detail::seconds_since(t0)) << " s)\n";
  log << "train checksum " << m.train_checksum << "\n";
  return m;
}

// train

inline std::vector<Slice> load_train_slices(const fs::path& data_dir, const DatasetManifest& m) {
  const auto path = data_dir / m.train_slices;
  if (io::file_checksum(path) != m.train_checksum)
    throw FormatError(path.string() + ": checksum does not match the dataset manifest");
  return io::slices_from(io::read_tensor(path));
}

struct TrainOptions {
  fs::path data_dir;
  fs::path checkpoint;
  bool resume = false;
  int stop_after_epoch = -1;
  int threads = 1;
};

inline fs::path train_log_path(const fs::path& checkpoint) {
  auto p = checkpoint;
  p += ".log.csv";
  return p;
}

inline void write_train_log(const fs::path& path, const std::vector<double>& losses) {
  std::ostringstream csv;
  csv << "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) csv << e + 1 << "," << detail::fmt("%.9g", losses[e]) << "\n";
  io::write_file(path, csv.str());
}

inline TrainState cmd_train(const ExperimentConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  cfg.validate();
  const auto manifest = read_manifest(opt.data_dir);
  if (manifest.phantom.channels != cfg.denoiser.in_channels)
    throw InvalidArgument("dataset has " + std::to_string(manifest.phantom.channels) + " channels, config expects " +
                          std::to_string(cfg.denoiser.in_channels));
  const int f = 1 << cfg.denoiser.depth;
  if (manifest.phantom.height % f != 0 || manifest.phantom.width % f != 0)
    throw InvalidArgument("dataset slice size is not divisible by 2^denoiser.depth");
  const auto slices = load_train_slices(opt.data_dir, manifest);
  const auto tcfg = cfg.train_config();

  TrainState state;
  if (opt.resume && fs::exists(opt.checkpoint)) {
    auto ck = load_checkpoint(opt.checkpoint);
    if (ck.fingerprint != config_fingerprint(cfg))
      throw InvalidArgument(opt.checkpoint.string() + " was written with a different config (fingerprint " + ck.fingerprint +
                            ", expected " + config_fingerprint(cfg) + ")");
    state = std::move(ck.state);
    log << "resuming at epoch " << state.next_epoch + 1 << "\n";
  } else {
    state = fresh_train_state(cfg.denoiser, tcfg);
  }
  if (state.next_epoch >= tcfg.epochs) {
    log << "checkpoint already holds all " << tcfg.epochs << " epochs\n";
    return state;
  }

  const std::size_t steps_per_epoch = slices.size() / static_cast<std::size_t>(tcfg.batch_size);
  const auto total = static_cast<std::int64_t>(steps_per_epoch) * tcfg.epochs;
  log << "training " << state.params.param_count() << " parameters on " << slices.size() << " slices, " << tcfg.epochs
      << " epochs x " << steps_per_epoch << " steps, " << to_string(tcfg.training_noise) << " noise, " << opt.threads
      << " thread(s)\n";
  log << "epoch        loss          lr   seconds\n";
  auto t_epoch = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.threads = opt.threads;
  hooks.stop_after_epoch = opt.stop_after_epoch;
  hooks.on_epoch_end = [&](const TrainState& st) {
    save_checkpoint(opt.checkpoint, cfg, st);
    write_train_log(train_log_path(opt.checkpoint), st.epoch_losses);
    const std::int64_t last_step = static_cast<std::int64_t>(st.next_epoch) * static_cast<std::int64_t>(steps_per_epoch) - 1;
    char line[128];
    std::snprintf(line, sizeof line, "%5d  %10.6f  %10.3e  %8.1f\n", st.next_epoch, st.epoch_losses.back(),
                  lr_at(last_step, total, tcfg), detail::seconds_since(t_epoch));
    log << line << std::flush;
    t_epoch = std::chrono::steady_clock::now();
  };
  state = train(slices, tcfg, cfg.make_schedule(), cfg.pyramid, std::move(state), hooks);
  if (state.next_epoch < tcfg.epochs) log << "stopped after epoch " << state.next_epoch << "; resume with --resume\n";
  return state;
}

// detect

inline std::vector<std::uint8_t> heatmap_pixels(const ScalarVolume& a, int d, float vmax) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(a.height) * a.width);
  for (int h = 0; h < a.height; ++h)
    for (int w = 0; w < a.width; ++w) {
      const double v = vmax > 0.0f ? std::clamp(static_cast<double>(a.at(h, w, d)) / vmax, 0.0, 1.0) : 0.0;
      px[static_cast<std::size_t>(h) * a.width + w] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  return px;
}

// One 8-bit image per axial slice, brightness scaled by the volume maximum.
inline void write_heatmaps(const fs::path& dir, const ScalarVolume& a) {
  float vmax = 0.0f;
  for (float v : a.data) vmax = std::max(vmax, v);
  for (int d = 0; d < a.depth; ++d) {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%03d.pgm", d);
    io::write_file(dir / name, io::encode_pgm(a.height, a.width, heatmap_pixels(a, d, vmax)));
  }
}

struct DetectOptions {
  fs::path checkpoint;
  fs::path volume;
  fs::path out_dir;
  Overrides overrides;
  int threads = 1;
};

struct DetectResult {
  AnomalyResult anomaly;
  Segmentation segmentation;
};

inline void require_trained(const Checkpoint& ck, const fs::path& path) {
  if (!ck.complete)
    throw InvalidArgument(path.string() + " is a partial checkpoint (" + std::to_string(ck.state.next_epoch) + " of " +
                          std::to_string(ck.config.train.epochs) + " epochs); finish training with --resume");
}

inline DetectResult cmd_detect(const DetectOptions& opt, std::ostream& log) {
  const auto ck = load_checkpoint(opt.checkpoint);
  require_trained(ck, opt.checkpoint);
  const auto cfg = apply_overrides(ck.config, opt.overrides);
  const Volume vol = io::volume_from(io::read_tensor(opt.volume));
  if (vol.channels != cfg.denoiser.in_channels)
    throw InvalidArgument(opt.volume.string() + " has " + std::to_string(vol.channels) + " channels, model expects " +
                          std::to_string(cfg.denoiser.in_channels));
  const int f = 1 << cfg.denoiser.depth;
  if (vol.height % f != 0 || vol.width % f != 0)
    throw InvalidArgument(opt.volume.string() + ": height and width must be divisible by " + std::to_string(f));
  const auto t0 = std::chrono::steady_clock::now();
  DetectResult r;
  r.anomaly = anomaly_volume(ck.state.params, vol, cfg.make_schedule(), cfg.detect_config(opt.threads));
  r.segmentation = segment(r.anomaly.pooled, cfg.postproc);
  io::write_tensor(opt.out_dir / "anomaly_channels.ntf", io::to_record(r.anomaly.per_channel, "anomaly_channels"));
  io::write_tensor(opt.out_dir / "anomaly.ntf", io::to_record(r.anomaly.pooled, "anomaly"));
  io::write_tensor(opt.out_dir / "mask.ntf", io::to_record(r.segmentation.mask, "mask"));
  write_heatmaps(opt.out_dir / "heatmaps", r.anomaly.pooled);
  std::size_t positives = 0;
  for (auto v : r.segmentation.mask.data) positives += v ? 1 : 0;
  if (r.segmentation.threshold)
    log << "yen threshold " << detail::fmt("%.9g", *r.segmentation.threshold) << "\n";
  else
    log << "yen threshold none (constant anomaly map, empty mask)\n";
  log << "mask voxels " << positives << " of " << r.segmentation.mask.size() << " ("
      << detail::fmt("%.4f", static_cast<double>(positives) / static_cast<double>(r.segmentation.mask.size())) << ")\n";
  log << "detect took " << detail::fmt("%.2f", detail::seconds_since(t0)) << " s\n";
  return r;
}

// eval

struct SubjectReport {
  std::string volume;
  double auprc = 0.0;  // NaN when the subject has no positive voxels
  double dice_yen = 0.0;
  std::optional<float> yen_threshold;
  std::size_t gt_voxels = 0;
  std::size_t mask_voxels = 0;
};

struct EvalReport {
  double auprc = 0.0;  // per the configured pooling
  double auprc_pooled = 0.0;
  double auprc_per_subject = 0.0;
  double ceil_dice = 0.0;
  float ceil_threshold = 0.0f;
  // The per-subject Yen segmentation beat every global threshold and is
  // reported as the ceiling; ceil_threshold then holds the best global one.
  bool ceil_from_yen = false;
  double dice_yen = 0.0;
  ScoreRange score_range;
  std::vector<SubjectReport> subjects;
  std::vector<PrPoint> pr_curve;
  std::vector<SegMask> masks;
  std::string fingerprint;
  std::uint64_t seed = 0;
};

struct EvalSubject {
  std::string volume;
  SegMask gt;
  SegMask brain;
};

// Metrics from raw pooled anomaly maps: median filter, min-max normalization
// over the whole set, pooled (or per-subject) AUPRC, per-subject Yen masks,
// ceil Dice with the Yen thresholds among the candidates.
inline EvalReport evaluate_maps(const std::vector<ScalarVolume>& raw, const std::vector<EvalSubject>& subjects,
                                const PostprocConfig& post, const MetricsConfig& metrics) {
  if (raw.empty() || raw.size() != subjects.size()) throw InvalidArgument("evaluate_maps: need one map per subject");
  post.validate();
  std::vector<ScalarVolume> filtered;
  filtered.reserve(raw.size());
  for (const auto& a : raw) filtered.push_back(apply_median(a, post.median_kernel));
  EvalReport rep;
  const auto norm = normalize_scores(filtered, &rep.score_range);

  std::vector<SegMask> gts;
  std::vector<float> pooled_scores;
  std::vector<std::uint8_t> pooled_labels;
  for (std::size_t s = 0; s < norm.size(); ++s) {
    const auto& sub = subjects[s];
    if (!norm[s].same_shape(sub.gt)) throw InvalidArgument("evaluate_maps: map and ground truth of " + sub.volume + " differ in shape");
    gts.push_back(sub.gt);
    for (std::size_t i = 0; i < norm[s].size(); ++i) {
      if (metrics.foreground_only && !sub.brain.data[i]) continue;
      pooled_scores.push_back(norm[s].data[i]);
      pooled_labels.push_back(sub.gt.data[i] ? 1 : 0);
    }
  }
  rep.auprc_pooled = auprc(pooled_scores, pooled_labels);
  rep.pr_curve = pr_curve(pooled_scores, pooled_labels);

  PostprocConfig seg_cfg = post;
  seg_cfg.median_kernel = 0;
  std::vector<float> yen_thresholds;
  double per_subject_sum = 0.0;
  int per_subject_n = 0;
  for (std::size_t s = 0; s < norm.size(); ++s) {
    const auto& sub = subjects[s];
    SubjectReport sr;
    sr.volume = sub.volume;
    std::vector<float> sc;
    std::vector<std::uint8_t> lb;
    for (std::size_t i = 0; i < norm[s].size(); ++i) {
      if (metrics.foreground_only && !sub.brain.data[i]) continue;
      sc.push_back(norm[s].data[i]);
      lb.push_back(sub.gt.data[i] ? 1 : 0);
      sr.gt_voxels += sub.gt.data[i] ? 1 : 0;
    }
    if (std::any_of(lb.begin(), lb.end(), [](std::uint8_t v) { return v != 0; })) {
      sr.auprc = auprc(sc, lb);
      per_subject_sum += sr.auprc;
      ++per_subject_n;
    } else {
      sr.auprc = std::nan("");
    }
    auto seg = segment(norm[s], seg_cfg, sub.brain.size() ? &sub.brain : nullptr);
    sr.yen_threshold = seg.threshold;
    if (seg.threshold) yen_thresholds.push_back(*seg.threshold);
    sr.dice_yen = dice(seg.mask, sub.gt);
    for (auto v : seg.mask.data) sr.mask_voxels += v ? 1 : 0;
    rep.masks.push_back(std::move(seg.mask));
    rep.subjects.push_back(std::move(sr));
  }
  rep.auprc_per_subject = per_subject_n ? per_subject_sum / per_subject_n : std::nan("");
  rep.auprc = metrics.pooling == AuprcPooling::pooled ? rep.auprc_pooled : rep.auprc_per_subject;
  const auto cd = ceil_dice(norm, gts, metrics.n_candidates, yen_thresholds);
  rep.ceil_dice = cd.dice;
  rep.ceil_threshold = cd.threshold;
  rep.dice_yen = dice_yen(rep.masks, gts);
  if (rep.dice_yen > rep.ceil_dice) {
    rep.ceil_dice = rep.dice_yen;
    rep.ceil_from_yen = true;
  }
  return rep;
}

// Drops PR points that move neither precision nor recall by at least `step`
// since the last kept point; the first and last points are always kept.
inline std::vector<PrPoint> thin_pr_curve(const std::vector<PrPoint>& curve, double step = 1e-3) {
  std::vector<PrPoint> out;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const bool edge = i == 0 || i + 1 == curve.size();
    if (edge || std::abs(curve[i].precision - out.back().precision) >= step ||
        std::abs(curve[i].recall - out.back().recall) >= step)
      out.push_back(curve[i]);
  }
  return out;
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream o;
  const auto row = [&](const char* k, const std::string& v) {
    char key[32];
    std::snprintf(key, sizeof key, "%-18s", k);
    o << key << v << "\n";
  };
  row("fingerprint", r.fingerprint);
  row("seed", std::to_string(r.seed));
  row("auprc", detail::fmt("%.6f", r.auprc));
  row("auprc_pooled", detail::fmt("%.6f", r.auprc_pooled));
  row("auprc_per_subject", detail::fmt("%.6f", r.auprc_per_subject));
  row("ceil_dice", detail::fmt("%.6f", r.ceil_dice));
  row("ceil_threshold", detail::fmt("%.6f", r.ceil_threshold));
  row("ceil_from_yen", r.ceil_from_yen ? "true" : "false");
  row("dice_yen", detail::fmt("%.6f", r.dice_yen));
  row("score_min", detail::fmt("%.9g", r.score_range.min));
  row("score_max", detail::fmt("%.9g", r.score_range.max));
  o << "\nsubject                 auprc  dice_yen   yen_thr  gt_voxels  mask_voxels\n";
  for (const auto& s : r.subjects) {
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %8.4f  %8.4f  %8.4f  %9zu  %11zu\n", s.volume.c_str(), s.auprc, s.dice_yen,
                  s.yen_threshold ? static_cast<double>(*s.yen_threshold) : std::nan(""), s.gt_voxels, s.mask_voxels);
    o << line;
  }
  return o.str();
}

inline io::json report_json(const EvalReport& r, const ExperimentConfig& cfg) {
  const auto num = [](double v) { return std::isnan(v) ? io::json(nullptr) : io::json(v); };
  io::json subjects = io::json::array();
  for (const auto& s : r.subjects)
    subjects.push_back({{"volume", s.volume},
                        {"auprc", num(s.auprc)},
                        {"dice_yen", s.dice_yen},
                        {"yen_threshold", s.yen_threshold ? io::json(*s.yen_threshold) : io::json(nullptr)},
                        {"gt_voxels", s.gt_voxels},
                        {"mask_voxels", s.mask_voxels}});
  return {{"fingerprint", r.fingerprint},
          {"seed", r.seed},
          {"auprc", num(r.auprc)},
          {"auprc_pooled", r.auprc_pooled},
          {"auprc_per_subject", num(r.auprc_per_subject)},
          {"ceil_dice", r.ceil_dice},
          {"ceil_threshold", r.ceil_threshold},
          {"ceil_from_yen", r.ceil_from_yen},
          {"dice_yen", r.dice_yen},
          {"score_min", r.score_range.min},
          {"score_max", r.score_range.max},
          {"subjects", subjects},
          {"stream_keys",
           {{"eval_noise", "stream_key(seed, [" + std::to_string(detail::tag_eval_noise) + ", slice, t])"},
            {"eval_noise_slice0_t_low", io::hex64(eval_noise_key(cfg.seed, 0, cfg.anomaly.range.t_low))}}},
          {"config", config_to_json(cfg)}};
}

enum class MapSource { model, cached, oracle };

struct EvalOptions {
  fs::path checkpoint;
  fs::path data_dir;
  fs::path out_dir;
  Overrides overrides;
  MapSource source = MapSource::model;
  fs::path maps_dir;  // for MapSource::cached; defaults to out_dir/maps
  int threads = 1;
};

inline std::vector<EvalSubject> load_eval_subjects(const fs::path& data_dir, const DatasetManifest& m) {
  std::vector<EvalSubject> out;
  for (const auto& e : m.test) {
    if (e.mask.empty() || !fs::exists(data_dir / e.mask))
      throw InvalidArgument("test volume " + e.volume + " has no ground-truth mask in " + data_dir.string());
    EvalSubject s{e.volume, io::mask_from(io::read_tensor(data_dir / e.mask)), {}};
    if (!e.brain.empty() && fs::exists(data_dir / e.brain)) s.brain = io::mask_from(io::read_tensor(data_dir / e.brain));
    else s.brain = SegMask(s.gt.height, s.gt.width, s.gt.depth, 1);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InvalidArgument("dataset " + data_dir.string() + " has no test volumes");
  return out;
}

inline std::string map_file_name(std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "anomaly_%03zu.ntf", i);
  return name;
}

// Raw pooled anomaly maps for every test volume, one set per request.
inline std::vector<std::vector<ScalarVolume>> compute_dataset_maps(const DenoiserParams& params, const fs::path& data_dir,
                                                                   const DatasetManifest& m, const ExperimentConfig& cfg,
                                                                   const std::vector<AggregationRequest>& requests,
                                                                   int threads, std::ostream& log) {
  const auto schedule = cfg.make_schedule();
  DetectConfig dc = cfg.detect_config(threads);
  dc.range = requests.front().range;
  for (const auto& r : requests) {
    dc.range.t_low = std::min(dc.range.t_low, r.range.t_low);
    dc.range.t_high = std::max(dc.range.t_high, r.range.t_high);
  }
  std::vector<std::vector<ScalarVolume>> out(requests.size());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < m.test.size(); ++i) {
    const Volume v = io::volume_from(io::read_tensor(data_dir / m.test[i].volume));
    if (v.channels != params.config.in_channels)
      throw InvalidArgument(m.test[i].volume + " has " + std::to_string(v.channels) + " channels, model expects " +
                            std::to_string(params.config.in_channels));
    auto res = anomaly_volume_multi(params, v, schedule, dc, requests);
    for (std::size_t r = 0; r < requests.size(); ++r) out[r].push_back(std::move(res[r].pooled));
    log << "  mapped " << m.test[i].volume << " (" << i + 1 << "/" << m.test.size() << ", "
        << detail::fmt("%.1f", detail::seconds_since(t0)) << " s)\n"
        << std::flush;
  }
  return out;
}

inline void write_eval_outputs(const fs::path& out_dir, const EvalReport& rep, const ExperimentConfig& cfg) {
  io::write_file(out_dir / "report.txt", report_text(rep));
  io::write_file(out_dir / "report.json", report_json(rep, cfg).dump(2) + "\n");
  std::ostringstream csv;
  csv << "threshold,precision,recall\n";
  for (const auto& p : thin_pr_curve(rep.pr_curve))
    csv << detail::fmt("%.9g", p.threshold) << "," << detail::fmt("%.9g", p.precision) << "," << detail::fmt("%.9g", p.recall)
        << "\n";
  io::write_file(out_dir / "pr_curve.csv", csv.str());
  for (std::size_t i = 0; i < rep.masks.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "mask_%03zu.ntf", i);
    io::write_tensor(out_dir / "masks" / name, io::to_record(rep.masks[i], "mask"));
  }
}

inline EvalReport cmd_eval(const EvalOptions& opt, std::ostream& log) {
  const auto ck = load_checkpoint(opt.checkpoint);
  const auto cfg = apply_overrides(ck.config, opt.overrides);
  const auto m = read_manifest(opt.data_dir);
  const auto subjects = load_eval_subjects(opt.data_dir, m);
  std::vector<ScalarVolume> maps;
  switch (opt.source) {
    case MapSource::model: {
      require_trained(ck, opt.checkpoint);
      maps = std::move(compute_dataset_maps(ck.state.params, opt.data_dir, m, cfg, {{cfg.anomaly.range, cfg.anomaly.aggregation}},
                                            opt.threads, log)
                           .front());
      for (std::size_t i = 0; i < maps.size(); ++i)
        io::write_tensor(opt.out_dir / "maps" / map_file_name(i), io::to_record(maps[i], "anomaly"));
      break;
    }
    case MapSource::cached: {
      const fs::path dir = opt.maps_dir.empty() ? opt.out_dir / "maps" : opt.maps_dir;
      for (std::size_t i = 0; i < subjects.size(); ++i) maps.push_back(io::scalar_volume_from(io::read_tensor(dir / map_file_name(i))));
      break;
    }
    case MapSource::oracle:
      for (const auto& s : subjects) {
        ScalarVolume a(s.gt.height, s.gt.width, s.gt.depth);
        for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = s.gt.data[i] ? 1.0f : 0.0f;
        maps.push_back(std::move(a));
      }
      break;
  }
  auto rep = evaluate_maps(maps, subjects, cfg.postproc, cfg.metrics);
  rep.fingerprint = config_fingerprint(cfg);
  rep.seed = cfg.seed;
  write_eval_outputs(opt.out_dir, rep, cfg);
  log << report_text(rep);
  return rep;
}

// sweep

struct SweepOptions {
  fs::path checkpoint;
  fs::path data_dir;
  fs::path out_csv;
  std::vector<TimeRange> grid;
  Overrides overrides;
  int threads = 1;
};

struct SweepRow {
  TimeRange range;
  EvalReport report;
};

// Evaluates one map set per grid entry and writes the sweep CSV.
inline std::vector<SweepRow> sweep_from_maps(const std::vector<std::vector<ScalarVolume>>& maps,
                                             const std::vector<TimeRange>& grid, const std::vector<EvalSubject>& subjects,
                                             const ExperimentConfig& cfg, const fs::path& out_csv, std::ostream& log) {
  if (maps.size() != grid.size()) throw InvalidArgument("sweep: need one map set per grid entry");
  std::vector<SweepRow> rows;
  std::ostringstream csv;
  csv << "t_low,t_high,auprc,ceil_dice,dice_yen\n";
  for (std::size_t r = 0; r < grid.size(); ++r) {
    auto rep = evaluate_maps(maps[r], subjects, cfg.postproc, cfg.metrics);
    rep.fingerprint = config_fingerprint(cfg);
    rep.seed = cfg.seed;
    csv << grid[r].t_low << "," << grid[r].t_high << "," << detail::fmt("%.6f", rep.auprc) << ","
        << detail::fmt("%.6f", rep.ceil_dice) << "," << detail::fmt("%.6f", rep.dice_yen) << "\n";
    log << "[" << grid[r].t_low << ", " << grid[r].t_high << "] auprc " << detail::fmt("%.4f", rep.auprc) << "\n";
    rows.push_back({grid[r], std::move(rep)});
  }
  io::write_file(out_csv, csv.str());
  return rows;
}

inline std::vector<SweepRow> cmd_sweep(const SweepOptions& opt, std::ostream& log) {
  const auto ck = load_checkpoint(opt.checkpoint);
  require_trained(ck, opt.checkpoint);
  const auto cfg = apply_overrides(ck.config, opt.overrides);
  if (opt.grid.empty()) throw InvalidArgument("sweep: empty (t_low, t_high) grid");
  std::vector<AggregationRequest> requests;
  for (const auto& r : opt.grid) {
    r.validate(cfg.schedule.steps);
    requests.push_back({r, cfg.anomaly.aggregation});
  }
  const auto m = read_manifest(opt.data_dir);
  const auto subjects = load_eval_subjects(opt.data_dir, m);
  const auto maps = compute_dataset_maps(ck.state.params, opt.data_dir, m, cfg, requests, opt.threads, log);
  return sweep_from_maps(maps, opt.grid, subjects, cfg, opt.out_csv, log);
}

// bench

struct BenchRow {
  int threads = 1;
  int runs = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
};

// Times `run(threads)` `runs` times per thread count. Every run's output must
// equal the first thread count's; otherwise no timings are reported.
inline std::vector<BenchRow> bench_thread_counts(const std::function<std::string(int)>& run, const std::vector<int>& threads,
                                                 int runs) {
  detail::require(!threads.empty(), "bench: no thread counts");
  detail::require(runs >= 2, "bench: need at least 2 runs for a standard deviation");
  for (int t : threads) detail::require(t >= 1, "bench: thread counts must be >= 1");
  std::optional<std::string> reference;
  std::vector<BenchRow> rows;
  for (int t : threads) {
    std::vector<double> ms;
    for (int k = 0; k < runs; ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::string out = run(t);
      ms.push_back(1e3 * detail::seconds_since(t0));
      if (!reference)
        reference = out;
      else if (out != *reference)
        throw CorrectnessError("bench: output with " + std::to_string(t) + " thread(s) differs from the output with " +
                               std::to_string(threads.front()) + " thread(s); refusing to report timings");
    }
    double mean = 0.0;
    for (double v : ms) mean += v;
    mean /= runs;
    double var = 0.0;
    for (double v : ms) var += (v - mean) * (v - mean);
    rows.push_back({t, runs, mean, std::sqrt(var / (runs - 1))});
  }
  return rows;
}

inline std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream o;
  o << "threads  runs     mean_ms      std_ms  speedup\n";
  for (const auto& r : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%7d  %4d  %10.1f  %10.1f  %7.2f\n", r.threads, r.runs, r.mean_ms, r.std_ms,
                  rows.front().mean_ms / r.mean_ms);
    o << line;
  }
  return o.str();
}

struct BenchOptions {
  fs::path checkpoint;
  fs::path volume;
  std::vector<int> threads = {1};
  int runs = 10;
  Overrides overrides;
};

inline std::vector<BenchRow> cmd_bench(const BenchOptions& opt, std::ostream& log) {
  const auto ck = load_checkpoint(opt.checkpoint);
  const auto cfg = apply_overrides(ck.config, opt.overrides);
  const Volume vol = io::volume_from(io::read_tensor(opt.volume));
  if (vol.channels != cfg.denoiser.in_channels)
    throw InvalidArgument(opt.volume.string() + " has " + std::to_string(vol.channels) + " channels, model expects " +
                          std::to_string(cfg.denoiser.in_channels));
  const auto schedule = cfg.make_schedule();
  const auto run = [&](int threads) {
    const auto r = anomaly_volume(ck.state.params, vol, schedule, cfg.detect_config(threads));
    return io::encode(io::to_record(r.per_channel, "anomaly_channels"));
  };
  log << "anomaly map of " << opt.volume.filename().string() << " over t in [" << cfg.anomaly.range.t_low << ", "
      << cfg.anomaly.range.t_high << "] (" << cfg.anomaly.range.count() << " timesteps x " << vol.depth << " slices), "
      << opt.runs << " runs per thread count\n";
  const auto rows = bench_thread_counts(run, opt.threads, opt.runs);
  log << "outputs identical across thread counts\n" << bench_table(rows);
  return rows;
}

}  // namespace andi
