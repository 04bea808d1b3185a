#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "andi/commands.hpp"
#include "andi/runtime.hpp"

namespace {

using namespace andi;

enum ExitCode { ok = 0, validation_failure = 2, runtime_failure = 3 };

struct ConfigSource {
  std::string file;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;

  ExperimentConfig load() const {
    ExperimentConfig c = file.empty() ? preset_config(preset) : load_config(file);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

void add_config_options(CLI::App* cmd, ConfigSource& src) {
  cmd->add_option("--config", src.file, "Experiment config (JSON)");
  cmd->add_option("--preset", src.preset, "Preset used when no config file is given")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", src.seed, "Override the global seed");
}

struct OverrideFlags {
  std::optional<int> mf;
  std::string agg;
  std::optional<int> t_low;
  std::optional<int> t_high;
  std::string eval_noise;

  Overrides get() const {
    Overrides o;
    o.median_kernel = mf;
    if (!agg.empty()) o.aggregation = parse_aggregation(agg);
    o.t_low = t_low;
    o.t_high = t_high;
    if (!eval_noise.empty()) o.eval_noise = parse_noise_kind(eval_noise);
    return o;
  }
};

void add_override_options(CLI::App* cmd, OverrideFlags& f) {
  cmd->add_option("--mf", f.mf, "Median filter size (0 disables, 3 or 5)");
  cmd->add_option("--agg", f.agg, "Aggregation over timesteps")->check(CLI::IsMember({"am", "gm"}));
  cmd->add_option("--t-low", f.t_low, "First timestep of the aggregation range");
  cmd->add_option("--t-high", f.t_high, "Last timestep of the aggregation range");
  cmd->add_option("--eval-noise", f.eval_noise, "Noise used at evaluation")->check(CLI::IsMember({"gaussian", "pyramidal"}));
}

std::vector<TimeRange> parse_grid(const std::vector<std::string>& items) {
  std::vector<TimeRange> grid;
  for (const auto& s : items) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw InvalidArgument("grid entry '" + s + "' must look like T_low:T_high");
    try {
      grid.push_back({std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw InvalidArgument("grid entry '" + s + "' must look like T_low:T_high");
    }
  }
  return grid;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Aggregated normative diffusion for unsupervised anomaly detection"};
  app.require_subcommand(1);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "Worker threads (default: ANDI_THREADS, else all cores)")->check(CLI::NonNegativeNumber);

  ConfigSource cfg_src;
  auto* config_cmd = app.add_subcommand("config", "Print the resolved experiment config");
  add_config_options(config_cmd, cfg_src);

  std::string out_dir;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  add_config_options(gen_cmd, cfg_src);
  gen_cmd->add_option("--out", out_dir, "Dataset directory")->required();

  TrainOptions train_opt;
  std::string train_noise;
  auto* train_cmd = app.add_subcommand("train", "Train the denoiser on healthy slices");
  add_config_options(train_cmd, cfg_src);
  train_cmd->add_option("--data", train_opt.data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", train_opt.checkpoint, "Checkpoint file")->required();
  train_cmd->add_flag("--resume", train_opt.resume, "Continue from an existing checkpoint");
  train_cmd->add_option("--stop-after-epoch", train_opt.stop_after_epoch, "Stop once this many epochs are done");
  train_cmd->add_option("--noise", train_noise, "Training noise")->check(CLI::IsMember({"gaussian", "pyramidal"}));

  DetectOptions detect_opt;
  OverrideFlags detect_flags;
  auto* detect_cmd = app.add_subcommand("detect", "Anomaly maps and segmentation for one volume");
  detect_cmd->add_option("--checkpoint", detect_opt.checkpoint)->required();
  detect_cmd->add_option("--volume", detect_opt.volume)->required();
  detect_cmd->add_option("--out", detect_opt.out_dir)->required();
  add_override_options(detect_cmd, detect_flags);

  EvalOptions eval_opt;
  OverrideFlags eval_flags;
  std::string maps_dir;
  bool oracle = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate on the dataset's test volumes");
  eval_cmd->add_option("--checkpoint", eval_opt.checkpoint)->required();
  eval_cmd->add_option("--data", eval_opt.data_dir)->required();
  eval_cmd->add_option("--out", eval_opt.out_dir)->required();
  auto* maps_opt = eval_cmd->add_option("--maps", maps_dir, "Reuse anomaly maps saved by an earlier eval");
  eval_cmd->add_flag("--oracle-maps", oracle, "Use the ground truth as anomaly maps")->excludes(maps_opt);
  add_override_options(eval_cmd, eval_flags);

  SweepOptions sweep_opt;
  OverrideFlags sweep_flags;
  std::vector<std::string> grid = {"75:150", "75:200", "75:250"};
  auto* sweep_cmd = app.add_subcommand("sweep", "AUPRC across timestep ranges");
  sweep_cmd->add_option("--checkpoint", sweep_opt.checkpoint)->required();
  sweep_cmd->add_option("--data", sweep_opt.data_dir)->required();
  sweep_cmd->add_option("--out", sweep_opt.out_csv, "CSV file")->required();
  sweep_cmd->add_option("--grid", grid, "T_low:T_high pairs")->delimiter(',');
  add_override_options(sweep_cmd, sweep_flags);

  BenchOptions bench_opt;
  OverrideFlags bench_flags;
  auto* bench_cmd = app.add_subcommand("bench", "Time anomaly-map computation across thread counts");
  bench_cmd->add_option("--checkpoint", bench_opt.checkpoint)->required();
  bench_cmd->add_option("--volume", bench_opt.volume)->required();
  bench_cmd->add_option("--thread-counts", bench_opt.threads, "e.g. 1,2,4")->delimiter(',');
  bench_cmd->add_option("--runs", bench_opt.runs, "Runs per thread count");
  add_override_options(bench_cmd, bench_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : validation_failure;
  }

  try {
    const int threads = resolve_threads(threads_flag);
    if (*config_cmd) {
      std::cout << config_to_json(cfg_src.load()).dump(2) << "\n";
    } else if (*gen_cmd) {
      cmd_gen_data(cfg_src.load(), out_dir, threads, std::cout);
    } else if (*train_cmd) {
      auto cfg = cfg_src.load();
      if (!train_noise.empty()) cfg.train.training_noise = parse_noise_kind(train_noise);
      train_opt.threads = threads;
      cmd_train(cfg, train_opt, std::cout);
    } else if (*detect_cmd) {
      detect_opt.overrides = detect_flags.get();
      detect_opt.threads = threads;
      cmd_detect(detect_opt, std::cout);
    } else if (*eval_cmd) {
      eval_opt.overrides = eval_flags.get();
      eval_opt.threads = threads;
      if (oracle) eval_opt.source = MapSource::oracle;
      if (!maps_dir.empty()) {
        eval_opt.source = MapSource::cached;
        eval_opt.maps_dir = maps_dir;
      }
      cmd_eval(eval_opt, std::cout);
    } else if (*sweep_cmd) {
      sweep_opt.grid = parse_grid(grid);
      sweep_opt.overrides = sweep_flags.get();
      sweep_opt.threads = threads;
      cmd_sweep(sweep_opt, std::cout);
    } else if (*bench_cmd) {
      bench_opt.overrides = bench_flags.get();
      cmd_bench(bench_opt, std::cout);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return validation_failure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return runtime_failure;
  }
  return ok;
}
