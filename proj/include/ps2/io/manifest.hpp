#pragma once

// Dataset manifests: JSON lines. The first line is a header
// {"format":"ps2-manifest","version":1}; every further line is one mixture
// record with a fixed key order. Paths are relative to the manifest's directory.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ps2/room/scene.hpp"

namespace ps2::io {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFormat = "ps2-manifest";

struct ManifestFiles {
  std::string scene;                // full scene JSON
  std::string mixture;              // M channels
  std::vector<std::string> sources; // gained reverberant images, one per source
  std::vector<std::string> dry;     // dry source signals
  std::string noise;                // scaled noise, M channels
  friend bool operator==(const ManifestFiles&, const ManifestFiles&) = default;
};

struct ManifestRecord {
  std::string id;
  std::uint64_t seed = 0;
  room::Vec3 room{};
  double rt60 = 0.0;
  double snr_db = 0.0;
  std::vector<double> speeds;                         // m/s per source
  std::vector<std::pair<room::Vec3, room::Vec3>> endpoints;  // start, end per source
  double min_angle_deg = 0.0;
  double duration_s = 0.0;                            // mixture length
  ManifestFiles files;
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

// Scene-derived fields; file paths are left empty.
ManifestRecord record_of(const std::string& id, const room::SceneSpec& scene);

nlohmann::ordered_json to_json(const ManifestRecord& r);
// Strict: every field present, no others, with the right types. Errors name
// the offending field; `line` (1-based, 0 for none) is prefixed to messages.
ManifestRecord record_from_json(const nlohmann::json& j, std::size_t line = 0);

std::string manifest_text(const std::vector<ManifestRecord>& records);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);
std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::string& origin = "manifest");

}  // namespace ps2::io
