#pragma once

// Flat run configuration shared by the command-line tools. Every section is
// optional on disk; missing keys keep their defaults, unknown keys are
// rejected at every level.

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "ps2/eval/bss.hpp"
#include "ps2/eval/report.hpp"
#include "ps2/model/config.hpp"
#include "ps2/room/render.hpp"
#include "ps2/room/rir.hpp"
#include "ps2/room/scene.hpp"
#include "ps2/train/optim.hpp"

namespace ps2::io {

enum class TargetKind { kReverberant, kDry };

std::string to_string(TargetKind kind);
TargetKind parse_target_kind(const std::string& text);
std::string to_string(room::RenderMode mode);
room::RenderMode parse_render_mode(const std::string& text);

struct SimulateOptions {
  std::size_t count = 10;
  std::size_t hop = room::kDefaultHop;
  room::RenderMode render = room::RenderMode::kCrossfade;
  friend bool operator==(const SimulateOptions&, const SimulateOptions&) = default;
};

struct TrainOptions {
  std::size_t steps = 500;
  train::AdamConfig adam{};
  double clip = 5.0;
  // Reverberant images at mic 0, or the dry sources (joint dereverberation).
  TargetKind target = TargetKind::kReverberant;
  friend bool operator==(const TrainOptions& a, const TrainOptions& b) {
    return a.steps == b.steps && a.adam.lr == b.adam.lr && a.adam.beta1 == b.adam.beta1 &&
           a.adam.beta2 == b.adam.beta2 && a.adam.eps == b.adam.eps && a.clip == b.clip &&
           a.target == b.target;
  }
};

struct EvalOptions {
  eval::BssOptions bss{};
  eval::Binning binning = eval::paper_binning();  // compared irrespective of order
  std::string metric = "si_sdr";
  friend bool operator==(const EvalOptions& a, const EvalOptions& b);
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: PS2_OUTPUT_DIR, then the current directory
  std::string model_profile = "paper";
  model::Ps2Config model = model::Ps2Config::paper();
  room::ProtocolRanges protocol{};
  SimulateOptions simulate{};
  TrainOptions train{};
  EvalOptions eval{};
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
// The "model" section overrides the profile named by "model_profile".
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig read_run_config(const std::string& path);
void write_run_config(const RunConfig& cfg, const std::string& path);

nlohmann::ordered_json binning_to_json(const eval::Binning& binning);

// Explicit directory, else $PS2_OUTPUT_DIR, else ".".
std::string resolve_output_dir(const std::string& explicit_dir);

}  // namespace ps2::io
