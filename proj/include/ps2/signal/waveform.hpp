#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ps2::signal {

// Multichannel time-domain signal, channel-major storage.
class Waveform {
 public:
  Waveform() = default;
  Waveform(std::size_t channels, std::size_t length, int sample_rate);
  Waveform(const std::vector<std::vector<double>>& channels, int sample_rate);

  std::size_t channels() const { return channels_; }
  std::size_t length() const { return length_; }
  int sample_rate() const { return sample_rate_; }
  bool empty() const { return channels_ == 0; }

  std::span<double> channel(std::size_t c);
  std::span<const double> channel(std::size_t c) const;
  std::span<const double> samples() const { return data_; }
  std::span<double> samples() { return data_; }

  Waveform select_channel(std::size_t c) const;
  Waveform truncated(std::size_t length) const;
  double energy(std::size_t c) const;

  friend bool operator==(const Waveform&, const Waveform&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t length_ = 0;
  int sample_rate_ = 0;
  std::vector<double> data_;
};

}  // namespace ps2::signal
