#include "ps2/model/config.hpp"

#include <set>

#include "ps2/common/error.hpp"

namespace ps2::model {

std::string to_string(FusionMode mode) {
  return mode == FusionMode::kSum ? "sum" : "cross_attention";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "cross_attention") return FusionMode::kCrossAttention;
  if (text == "sum") return FusionMode::kSum;
  fail(ErrorKind::kUsage, "unknown fusion mode '" + text + "' (expected cross_attention or sum)");
}

void Ps2Config::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    require(v > 0, ErrorKind::kUsage, std::string("config: ") + name + " must be positive");
  };
  positive(mics, "mics");
  positive(sources, "sources");
  positive(embed, "embed");
  positive(blocks, "blocks");
  positive(freq_hidden, "freq_hidden");
  positive(mamba_state, "mamba_state");
  positive(mamba_conv, "mamba_conv");
  positive(mamba_expand, "mamba_expand");
  positive(sa_heads, "sa_heads");
  positive(sa_dim, "sa_dim");
  positive(gru_layers, "gru_layers");
  positive(gru_hidden, "gru_hidden");
  positive(ca_dim, "ca_dim");
  positive(ca_heads, "ca_heads");
  require(sample_rate > 0, ErrorKind::kUsage, "config: sample_rate must be positive");
  require(freq_stride >= 1 && freq_block >= freq_stride, ErrorKind::kUsage,
          "config: need freq_block >= freq_stride >= 1");
  require(time_stride >= 1 && time_block >= time_stride, ErrorKind::kUsage,
          "config: need time_block >= time_stride >= 1");
  require(ca_dim % ca_heads == 0, ErrorKind::kUsage,
          "config: ca_dim " + std::to_string(ca_dim) + " not divisible by ca_heads " +
              std::to_string(ca_heads));
  require(gru_dropout >= 0.0 && gru_dropout < 1.0 && ca_dropout >= 0.0 && ca_dropout < 1.0,
          ErrorKind::kUsage, "config: dropout must lie in [0, 1)");
  stft.validate();
}

Ps2Config Ps2Config::paper() { return Ps2Config{}; }

Ps2Config Ps2Config::toy() {
  Ps2Config c;
  c.mics = 2;
  c.sources = 2;
  c.embed = 8;
  c.blocks = 2;
  c.freq_hidden = 32;
  c.mamba_state = 16;
  c.sa_heads = 2;
  c.sa_dim = 4;
  c.gru_hidden = 32;
  c.stft = {128, 64, signal::WindowKind::kHannPeriodic};
  return c;
}

Ps2Config Ps2Config::gradcheck() {
  Ps2Config c;
  c.mics = 2;
  c.sources = 2;
  c.embed = 4;
  c.blocks = 1;
  c.freq_hidden = 3;
  c.mamba_state = 3;
  c.sa_heads = 2;
  c.sa_dim = 2;
  c.gru_hidden = 3;
  c.ca_dim = 4;
  c.ca_heads = 2;
  c.stft = {16, 8, signal::WindowKind::kHannPeriodic};
  return c;
}

Ps2Config Ps2Config::profile(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "toy") return toy();
  if (name == "gradcheck") return gradcheck();
  fail(ErrorKind::kUsage, "unknown model profile '" + name + "' (expected paper, toy or gradcheck)");
}

nlohmann::json to_json(const Ps2Config& c) {
  return {
      {"mics", c.mics},
      {"sources", c.sources},
      {"embed", c.embed},
      {"blocks", c.blocks},
      {"freq_block", c.freq_block},
      {"freq_stride", c.freq_stride},
      {"time_block", c.time_block},
      {"time_stride", c.time_stride},
      {"freq_hidden", c.freq_hidden},
      {"mamba_state", c.mamba_state},
      {"mamba_conv", c.mamba_conv},
      {"mamba_expand", c.mamba_expand},
      {"sa_heads", c.sa_heads},
      {"sa_dim", c.sa_dim},
      {"gru_layers", c.gru_layers},
      {"gru_hidden", c.gru_hidden},
      {"gru_dropout", c.gru_dropout},
      {"ca_dim", c.ca_dim},
      {"ca_heads", c.ca_heads},
      {"ca_dropout", c.ca_dropout},
      {"fusion", to_string(c.fusion)},
      {"spatial_branch", c.spatial_branch},
      {"fft_size", c.stft.fft_size},
      {"hop", c.stft.hop},
      {"sample_rate", c.sample_rate},
  };
}

Ps2Config config_from_json(const nlohmann::json& j, const Ps2Config& base) {
  require(j.is_object(), ErrorKind::kUsage, "model config must be a JSON object");
  const auto keys = to_json(base);
  for (const auto& [key, value] : j.items()) {
    require(keys.contains(key), ErrorKind::kUsage, "model config: unknown key '" + key + "'");
  }
  Ps2Config c = base;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("mics", c.mics);
    get("sources", c.sources);
    get("embed", c.embed);
    get("blocks", c.blocks);
    get("freq_block", c.freq_block);
    get("freq_stride", c.freq_stride);
    get("time_block", c.time_block);
    get("time_stride", c.time_stride);
    get("freq_hidden", c.freq_hidden);
    get("mamba_state", c.mamba_state);
    get("mamba_conv", c.mamba_conv);
    get("mamba_expand", c.mamba_expand);
    get("sa_heads", c.sa_heads);
    get("sa_dim", c.sa_dim);
    get("gru_layers", c.gru_layers);
    get("gru_hidden", c.gru_hidden);
    get("gru_dropout", c.gru_dropout);
    get("ca_dim", c.ca_dim);
    get("ca_heads", c.ca_heads);
    get("ca_dropout", c.ca_dropout);
    get("spatial_branch", c.spatial_branch);
    get("fft_size", c.stft.fft_size);
    get("hop", c.stft.hop);
    get("sample_rate", c.sample_rate);
    if (j.contains("fusion")) c.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace ps2::model
