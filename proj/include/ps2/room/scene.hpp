#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ps2::room {

using Vec3 = std::array<double, 3>;

constexpr double kSpeedOfSound = 343.0;

struct Range {
  double lo = 0.0, hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct ProtocolRanges {
  Range length{8.0, 10.0};
  Range width{8.0, 10.0};
  Range height{3.0, 4.0};
  Range rt60{0.1, 0.7};
  Range array_height{1.0, 1.5};
  Range source_height{1.5, 2.0};
  Range speed{0.0, 1.0};
  Range gain_db{-5.0, 5.0};  // pairwise energy ratio between sources
  Range snr_db{0.0, 10.0};
  Range duration{2.0, 5.0};  // seconds, drawn per source
  double wall_margin = 0.5;
  double min_distance = 0.5;
  double array_radius = 0.05;
  std::vector<double> mic_azimuths_deg{0.0, 60.0, 120.0, 180.0, 240.0, 300.0};
  int sources = 2;
  int sample_rate = 16000;

  void validate() const;
  friend bool operator==(const ProtocolRanges&, const ProtocolRanges&) = default;
};

struct Trajectory {
  Vec3 start{};
  Vec3 velocity{};
  double duration = 0.0;

  Vec3 at(double t) const;
  Vec3 end() const { return at(duration); }
  double speed() const;
  // Samples covered at rate fs: round(duration * fs), at least 1.
  std::size_t samples(int fs) const;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct SceneSpec {
  Vec3 room{};
  double rt60 = 0.0;
  std::vector<Vec3> mics;
  std::vector<Trajectory> trajectories;
  double target_snr_db = 0.0;
  std::vector<double> source_gain_db;
  std::uint64_t seed = 0;
  int sample_rate = 16000;

  std::size_t sources() const { return trajectories.size(); }
  // "min" mode: the shortest source sets the mixture length.
  std::size_t mixture_length() const;
  Vec3 array_center() const;
  // Minimum over the mixture duration (10 ms grid plus the last sample) of
  // the 3-D angle two sources subtend at mic 0, in degrees; smallest pair.
  double min_source_angle_deg() const;
  // Mean source speed in m/s.
  double mean_speed() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

// Deterministic rejection sampler; throws kData "scene sampling failed"
// after 1000 attempts.
SceneSpec sample_scene(std::uint64_t seed, const ProtocolRanges& protocol);

// Every violated protocol constraint, as readable messages (empty when valid).
std::vector<std::string> check_scene(const SceneSpec& scene, const ProtocolRanges& protocol);

double distance(const Vec3& a, const Vec3& b);
// Smallest distance from p to any wall of a [0,room] box; negative outside.
double wall_clearance(const Vec3& p, const Vec3& room);

nlohmann::ordered_json to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ProtocolRanges& protocol);
ProtocolRanges protocol_from_json(const nlohmann::json& j, ProtocolRanges base = {});

}  // namespace ps2::room
