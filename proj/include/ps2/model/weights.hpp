#pragma once

// PS2W weights files: "PS2W", u32 format version, u32 tensor count, then per
// tensor a u16 name length, the UTF-8 name, a u8 rank, u32 extents and raw
// little-endian float32 values. A JSON sidecar (<path>.json) mirrors the
// name/shape manifest.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ps2/ad/tensor.hpp"
#include "ps2/nn/parameter_store.hpp"

namespace ps2::model {

inline constexpr std::uint32_t kWeightsFormatVersion = 1;

struct StoredTensor {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

std::vector<StoredTensor> read_weights(const std::string& path);

// `extra` is merged into the sidecar (the CLI stores the model config there).
template <typename T>
void save_params(const nn::ParameterStore<T>& store, const std::string& path,
                 const nlohmann::json& extra = nlohmann::json::object());

// Fills `store` from `path`. The file's names and shapes must match the store
// exactly; otherwise throws a data error listing every offending tensor.
template <typename T>
void load_params(nn::ParameterStore<T>& store, const std::string& path);

std::string sidecar_path(const std::string& path);
nlohmann::json read_sidecar(const std::string& path);

}  // namespace ps2::model
