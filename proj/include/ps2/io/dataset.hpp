#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ps2/io/manifest.hpp"
#include "ps2/io/run_config.hpp"
#include "ps2/room/scene.hpp"
#include "ps2/signal/waveform.hpp"

namespace ps2::io {

// Scene seed of item `index` in a dataset drawn with `seed`.
std::uint64_t item_seed(std::uint64_t seed, std::size_t index);
std::string item_id(std::size_t index);

// Throws a usage error if `path` exists and `force` is off.
void guard_overwrite(const std::string& path, bool force);

struct SimulateRequest {
  std::string dir;
  std::uint64_t seed = 1;
  std::size_t count = 1;
  room::ProtocolRanges protocol{};
  SimulateOptions options{};
  int jobs = 1;
  bool force = false;
};

// Samples, renders and writes `count` scenes as float-32 WAV files under
// dir/<id>/ plus dir/manifest.jsonl. Items are rendered in parallel (at most
// `jobs` at a time); every item writes only its own files.
std::vector<ManifestRecord> simulate_dataset(const SimulateRequest& request);

struct DatasetItem {
  room::SceneSpec scene;
  signal::Waveform mixture;
  std::vector<signal::Waveform> sources;
  std::vector<signal::Waveform> dry;
  signal::Waveform noise;
};

// Paths in `record` are resolved against `base_dir`.
DatasetItem load_item(const std::string& base_dir, const ManifestRecord& record);

// Reference signals for training and scoring: one channel per source, either
// the reverberant images at mic 0 or the dry sources, at the mixture length.
signal::Waveform targets_of(const DatasetItem& item, TargetKind kind);

}  // namespace ps2::io
