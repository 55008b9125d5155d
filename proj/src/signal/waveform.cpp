#include "ps2/signal/waveform.hpp"

#include <numeric>
#include <string>

#include "ps2/common/error.hpp"

namespace ps2::signal {

Waveform::Waveform(std::size_t channels, std::size_t length, int sample_rate)
    : channels_(channels),
      length_(length),
      sample_rate_(sample_rate),
      data_(channels * length, 0.0) {
  require(channels >= 1, ErrorKind::kData, "waveform needs at least one channel");
  require(length >= 1, ErrorKind::kData, "waveform length must be >= 1");
  require(sample_rate > 0, ErrorKind::kData, "sample rate must be positive");
}

Waveform::Waveform(const std::vector<std::vector<double>>& channels,
                   int sample_rate)
    : Waveform(channels.size(), channels.empty() ? 0 : channels[0].size(),
               sample_rate) {
  for (std::size_t c = 0; c < channels_; ++c) {
    require(channels[c].size() == length_, ErrorKind::kData,
            "all channels must have equal length");
    std::copy(channels[c].begin(), channels[c].end(), channel(c).begin());
  }
}

std::span<double> Waveform::channel(std::size_t c) {
  require(c < channels_, ErrorKind::kUsage,
          "channel index " + std::to_string(c) + " out of range");
  return std::span<double>(data_).subspan(c * length_, length_);
}

std::span<const double> Waveform::channel(std::size_t c) const {
  require(c < channels_, ErrorKind::kUsage,
          "channel index " + std::to_string(c) + " out of range");
  return std::span<const double>(data_).subspan(c * length_, length_);
}

Waveform Waveform::select_channel(std::size_t c) const {
  Waveform out(1, length_, sample_rate_);
  const auto src = channel(c);
  std::copy(src.begin(), src.end(), out.channel(0).begin());
  return out;
}

Waveform Waveform::truncated(std::size_t length) const {
  require(length >= 1 && length <= length_, ErrorKind::kData,
          "truncation length out of range");
  Waveform out(channels_, length, sample_rate_);
  for (std::size_t c = 0; c < channels_; ++c) {
    const auto src = channel(c).first(length);
    std::copy(src.begin(), src.end(), out.channel(c).begin());
  }
  return out;
}

double Waveform::energy(std::size_t c) const {
  const auto x = channel(c);
  return std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
}

}  // namespace ps2::signal
