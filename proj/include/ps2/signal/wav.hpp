#pragma once

#include <optional>
#include <string>

#include "ps2/signal/waveform.hpp"

namespace ps2::signal {

enum class WavFormat { kPcm16, kFloat32 };

// Little-endian RIFF/WAVE, PCM 16-bit or IEEE float 32-bit, any channel count.
// When `expected_rate` is set, a file at another rate is a data error.
Waveform read_wav(const std::string& path,
                  std::optional<int> expected_rate = std::nullopt);

void write_wav(const std::string& path, const Waveform& wave,
               WavFormat format = WavFormat::kFloat32);

}  // namespace ps2::signal
