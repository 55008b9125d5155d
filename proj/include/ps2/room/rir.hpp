#pragma once

// Shoebox image-source room impulse responses.
//
// Uniform wall reflection coefficient calibrated to RT60, images up to the
// order whose path length covers the response length, each image placed
// with an 81-tap Hann-windowed sinc at its fractional delay and scaled by
// reflection product / (4 pi distance). Reverberant responses then pass
// through a 30 Hz DC blocker.

#include <cstddef>
#include <span>
#include <vector>

#include "ps2/room/scene.hpp"

namespace ps2::room {

constexpr int kSincTaps = 81;
constexpr int kSincHalf = kSincTaps / 2;
constexpr std::size_t kDefaultHop = 2048;
constexpr double kHighpassHz = 30.0;

// M x L taps.
using MicRirs = std::vector<std::vector<double>>;

// T20-based decay time of the continuum image model with reflection
// coefficient 1/e; decay time for attenuation k = -ln(beta) is this over k.
double decay_time_unit_attenuation(const Vec3& room);

// Wall pressure reflection coefficient whose image-source energy decay has
// the requested RT60; 0 for rt60 <= 0.
double reflection_coefficient(const Vec3& room, double rt60);

// ceil(rt60 * fs) + direct delay of the farthest mic + sinc margin.
std::size_t rir_length(const Vec3& room, double rt60, const Vec3& src,
                       const std::vector<Vec3>& mics, int fs);

// rt60 <= 0 gives the anechoic response (direct path only). length 0 picks
// rir_length(); longer responses are zero padded, images beyond are dropped.
MicRirs compute_rir(const Vec3& room, double rt60, const Vec3& src,
                    const std::vector<Vec3>& mics, int fs, std::size_t length = 0);

namespace reference {
// Serial accumulation; compute_rir parallelizes over microphones with the
// same per-mic summation order, so results are bit-identical.
MicRirs compute_rir(const Vec3& room, double rt60, const Vec3& src,
                    const std::vector<Vec3>& mics, int fs, std::size_t length = 0);
}  // namespace reference

struct WaypointPlan {
  std::vector<std::size_t> times;  // sample indices, strictly increasing
  std::vector<Vec3> positions;
};

// Every `hop` samples plus the final sample of the trajectory.
WaypointPlan plan_waypoints(const Trajectory& traj, int fs, std::size_t hop = kDefaultHop);

// Time-varying response of one source: K waypoints x M mics x L taps.
struct RirSet {
  std::vector<MicRirs> taps;
  std::vector<std::size_t> times;
  int sample_rate = 0;

  std::size_t waypoints() const { return taps.size(); }
  std::size_t mics() const { return taps.empty() ? 0 : taps.front().size(); }
  std::size_t length() const { return mics() == 0 ? 0 : taps.front().front().size(); }
  void validate() const;
};

// One common length L over all waypoints of the source.
RirSet compute_rir_set(const SceneSpec& scene, std::size_t source, std::size_t hop = kDefaultHop);

// Schroeder backward integration, line fit between -5 and -25 dB (T20),
// extrapolated to 60 dB. Throws kNumerical if the decay never reaches -25 dB.
double schroeder_rt60(std::span<const double> rir, int fs);

}  // namespace ps2::room
