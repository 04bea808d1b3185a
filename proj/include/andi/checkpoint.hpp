#pragma once

// Checkpoints are a single tensor container of dims (3, P): parameters, Adam
// first moments, Adam second moments. The header's "meta" object carries the
// experiment config, its fingerprint, the parameter layout and the training
// progress needed to resume.

#include <filesystem>
#include <string>

#include "andi/config.hpp"
#include "andi/denoiser.hpp"
#include "andi/error.hpp"
#include "andi/io.hpp"
#include "andi/train.hpp"

namespace andi {

struct Checkpoint {
  ExperimentConfig config;
  std::string fingerprint;
  TrainState state;
  bool complete = false;  // all configured epochs done
};

inline io::TensorRecord checkpoint_record(const ExperimentConfig& cfg, const TrainState& st) {
  const auto P = st.params.values.size();
  io::TensorRecord rec{"checkpoint", {3, static_cast<std::int64_t>(P)}, io::DType::f32, {}, {}, {}};
  rec.f32.reserve(3 * P);
  rec.f32.insert(rec.f32.end(), st.params.values.begin(), st.params.values.end());
  rec.f32.insert(rec.f32.end(), st.optimizer.m.begin(), st.optimizer.m.end());
  rec.f32.insert(rec.f32.end(), st.optimizer.v.begin(), st.optimizer.v.end());
  io::json layout = io::json::array();
  for (const auto& e : st.params.layout.entries) layout.push_back({{"name", e.name}, {"offset", e.offset}, {"shape", e.shape}});
  rec.meta = {{"config", config_to_json(cfg)},
              {"fingerprint", config_fingerprint(cfg)},
              {"layout", layout},
              {"next_epoch", st.next_epoch},
              {"optimizer_step", st.optimizer.step},
              {"epoch_losses", st.epoch_losses}};
  return rec;
}

// Writes to a temporary sibling and renames, so an interrupted write never
// leaves a truncated checkpoint behind.
inline void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const TrainState& st) {
  auto tmp = path;
  tmp += ".tmp";
  io::write_tensor(tmp, checkpoint_record(cfg, st));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto rec = io::read_tensor(path);
  if (rec.dtype != io::DType::f32 || rec.dims.size() != 2 || rec.dims[0] != 3 || !rec.meta.is_object())
    throw FormatError(path.string() + ": not a checkpoint");
  Checkpoint ck;
  try {
    ck.config = config_from_json(rec.meta.at("config"));
    ck.fingerprint = rec.meta.at("fingerprint").get<std::string>();
    ck.state.next_epoch = rec.meta.at("next_epoch").get<int>();
    ck.state.optimizer.step = rec.meta.at("optimizer_step").get<std::int64_t>();
    ck.state.epoch_losses = rec.meta.at("epoch_losses").get<std::vector<double>>();
  } catch (const io::json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint metadata: " + e.what());
  }
  if (ck.fingerprint != config_fingerprint(ck.config))
    throw FormatError(path.string() + ": checkpoint config does not match its fingerprint");
  const auto P = static_cast<std::size_t>(rec.dims[1]);
  auto& params = ck.state.params;
  params.config = ck.config.denoiser;
  params.layout = build_layout(params.config);
  if (params.layout.total != P)
    throw FormatError(path.string() + ": parameter count " + std::to_string(P) + " does not match the denoiser config (" +
                      std::to_string(params.layout.total) + ")");
  const auto it = rec.f32.begin();
  params.values.assign(it, it + static_cast<std::ptrdiff_t>(P));
  ck.state.optimizer.m.assign(it + static_cast<std::ptrdiff_t>(P), it + static_cast<std::ptrdiff_t>(2 * P));
  ck.state.optimizer.v.assign(it + static_cast<std::ptrdiff_t>(2 * P), rec.f32.end());
  ck.complete = ck.state.next_epoch >= ck.config.train.epochs;
  return ck;
}

}  // namespace andi
