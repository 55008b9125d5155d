#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ps2/signal/waveform.hpp"

namespace ps2::signal {

enum class WindowKind { kHannPeriodic, kRectangular };

struct StftConfig {
  std::size_t fft_size = 512;  // also the window length
  std::size_t hop = 256;
  WindowKind window = WindowKind::kHannPeriodic;

  std::size_t bins() const { return fft_size / 2 + 1; }
  // Center padding of fft_size/2 zeros each side: T = floor(length/hop) + 1.
  std::size_t frames(std::size_t length) const { return length / hop + 1; }

  void validate() const;
  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

std::vector<double> make_window(const StftConfig& cfg);

// channels x frames x bins, row-major.
class ComplexSpectrogram {
 public:
  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t channels, std::size_t frames,
                     std::size_t fft_size, std::size_t hop, int sample_rate);

  std::size_t channels() const { return channels_; }
  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  std::size_t fft_size() const { return fft_size_; }
  std::size_t hop() const { return hop_; }
  int sample_rate() const { return sample_rate_; }

  std::complex<double>& at(std::size_t c, std::size_t t, std::size_t f) {
    return data_[(c * frames_ + t) * bins_ + f];
  }
  const std::complex<double>& at(std::size_t c, std::size_t t,
                                 std::size_t f) const {
    return data_[(c * frames_ + t) * bins_ + f];
  }
  std::span<std::complex<double>> channel(std::size_t c) {
    return std::span(data_).subspan(c * frames_ * bins_, frames_ * bins_);
  }
  std::span<const std::complex<double>> channel(std::size_t c) const {
    return std::span(data_).subspan(c * frames_ * bins_, frames_ * bins_);
  }
  std::span<const std::complex<double>> data() const { return data_; }
  std::span<std::complex<double>> data() { return data_; }

 private:
  std::size_t channels_ = 0, frames_ = 0, bins_ = 0, fft_size_ = 0, hop_ = 0;
  int sample_rate_ = 0;
  std::vector<std::complex<double>> data_;
};

// Real channels x frames x bins grid (network input features, delay maps).
struct FeatureGrid {
  std::size_t channels = 0, frames = 0, bins = 0;
  std::vector<double> data;

  double& at(std::size_t c, std::size_t t, std::size_t f) {
    return data[(c * frames + t) * bins + f];
  }
  double at(std::size_t c, std::size_t t, std::size_t f) const {
    return data[(c * frames + t) * bins + f];
  }
};

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg);

Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
               std::size_t out_length);

// Single-channel synthesis on raw frames (frames x bins), used by the
// differentiable iSTFT. `adjoint` maps a waveform gradient back to frames.
void istft_frames(std::span<const std::complex<double>> frames,
                  std::size_t num_frames, const StftConfig& cfg,
                  std::span<double> out);
void istft_frames_adjoint(std::span<const double> grad_out,
                          std::size_t num_frames, const StftConfig& cfg,
                          std::span<std::complex<double>> grad_frames);

// Sum over frames of the squared synthesis window, in padded coordinates.
std::vector<double> window_envelope(const StftConfig& cfg,
                                    std::size_t num_frames);

// Channel 2m = Re, 2m+1 = Im of mic m.
FeatureGrid to_ri(const ComplexSpectrogram& spec);
ComplexSpectrogram from_ri(const FeatureGrid& grid, std::size_t fft_size,
                           std::size_t hop, int sample_rate);

// Channel 2m = magnitude, 2m+1 = phase in (-pi, pi]; phase of 0 is 0.
FeatureGrid to_mp(const ComplexSpectrogram& spec);
ComplexSpectrogram from_mp(const FeatureGrid& grid, std::size_t fft_size,
                           std::size_t hop, int sample_rate);

double wrap_phase(double x);

// Per-bin inter-channel time difference in seconds (1 x frames x bins).
FeatureGrid itd_map(const ComplexSpectrogram& spec,
                    std::pair<std::size_t, std::size_t> mics);

}  // namespace ps2::signal
