#pragma once

#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

#include "ps2/signal/stft.hpp"

namespace ps2::model {

enum class FusionMode { kCrossAttention, kSum };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct Ps2Config {
  std::size_t mics = 6;     // M
  std::size_t sources = 2;  // C
  std::size_t embed = 48;   // D
  std::size_t blocks = 8;   // B

  std::size_t freq_block = 3, freq_stride = 1;  // I_F, J_F
  std::size_t time_block = 3, time_stride = 1;  // I_T, J_T
  std::size_t freq_hidden = 96;                 // H_F per direction

  std::size_t mamba_state = 128;
  std::size_t mamba_conv = 4;
  std::size_t mamba_expand = 2;

  std::size_t sa_heads = 4;  // G_SA
  std::size_t sa_dim = 8;    // D_SA

  std::size_t gru_layers = 2;
  std::size_t gru_hidden = 96;
  double gru_dropout = 0.05;

  std::size_t ca_dim = 8;  // D_CA
  std::size_t ca_heads = 4;
  double ca_dropout = 0.05;
  FusionMode fusion = FusionMode::kCrossAttention;

  // false drops the spatial branch and the fusion stage (RI-only model).
  bool spatial_branch = true;

  signal::StftConfig stft{512, 256, signal::WindowKind::kHannPeriodic};
  int sample_rate = 16000;

  std::size_t bins() const { return stft.bins(); }
  void validate() const;

  static Ps2Config paper();
  // Small model for the single-mixture overfit run.
  static Ps2Config toy();
  // Tiny model for finite-difference checks (T = 6, F = 9 on 40 samples).
  static Ps2Config gradcheck();
  static Ps2Config profile(const std::string& name);

  friend bool operator==(const Ps2Config&, const Ps2Config&) = default;
};

nlohmann::json to_json(const Ps2Config& cfg);
// Unknown keys are rejected; missing keys keep the values of `base`.
Ps2Config config_from_json(const nlohmann::json& j, const Ps2Config& base = Ps2Config::paper());

}  // namespace ps2::model
