#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ps2/common/rng.hpp"
#include "ps2/room/rir.hpp"
#include "ps2/room/scene.hpp"
#include "ps2/signal/waveform.hpp"

namespace ps2::room {

enum class RenderMode {
  // Convolve with each waypoint response (FFT) and crossfade linearly
  // between neighbouring waypoints.
  kCrossfade,
  // Direct per-sample time-variant sum with the response interpolated
  // linearly between waypoints. O(N L); oracle for kCrossfade.
  kExact,
};

// Single-channel source -> M channels, same length as the source.
signal::Waveform render_moving(const signal::Waveform& source, const RirSet& rirs,
                               RenderMode mode = RenderMode::kCrossfade);

// Direct convolution truncated to x's length: y[n] = sum_l h[l] x[n - l].
std::vector<double> convolve_truncated(std::span<const double> x, std::span<const double> h);

struct Mixture {
  signal::Waveform mixture;               // M channels
  std::vector<signal::Waveform> sources;  // gained reverberant images
  signal::Waveform noise;                 // scaled noise
  double noise_gain = 0.0;
};

// "min" mode: all signals truncated to the shortest source. Noise shorter
// than that is looped from its start. Powers are measured on mic 0 and the
// noise scaled so that mean source power / noise power hits the target.
// mixture = (sum of sources, in order) + noise, sample by sample.
Mixture mix_to_snr(const std::vector<signal::Waveform>& rendered, const signal::Waveform& noise,
                   const SceneSpec& scene);

// Mean power of channel c.
double power(const signal::Waveform& w, std::size_t c = 0);

// Speech-shaped synthetic source: white Gaussian noise through the tilt
// filter 1 / (1 - 1.3 z^-1 + 0.4 z^-2) (poles 0.8 and 0.5), shaped by a
// syllable-like envelope of Hann bursts (100-300 ms, random level 0.3-1,
// gaps 0-100 ms), normalized to unit power.
signal::Waveform synth_speech(std::size_t length, int fs, Rng& rng);

// Independent white Gaussian noise per channel, unit power.
signal::Waveform white_noise(std::size_t channels, std::size_t length, int fs, Rng& rng);

struct RenderedScene {
  std::vector<signal::Waveform> dry;  // per source, own length
  Mixture mix;
};

// Synthetic dry sources and noise drawn from the scene seed, rendered
// through each source's moving RIRs and mixed.
RenderedScene render_scene(const SceneSpec& scene, std::size_t hop = kDefaultHop,
                           RenderMode mode = RenderMode::kCrossfade);

// Same with caller-provided dry sources (one per trajectory, each exactly
// trajectory.samples() long) and noise.
RenderedScene render_scene(const SceneSpec& scene, std::vector<signal::Waveform> dry,
                           const signal::Waveform& noise, std::size_t hop = kDefaultHop,
                           RenderMode mode = RenderMode::kCrossfade);

}  // namespace ps2::room
