#include "ps2/model/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "ps2/common/error.hpp"

namespace ps2::model {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<char>& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorKind::kData, path_ + ": truncated weights file");
  }
  const std::vector<char>& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string sidecar_path(const std::string& path) { return path + ".json"; }

std::vector<StoredTensor> read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kData, "cannot open weights file " + path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes, path);
  require(r.text(4) == "PS2W", ErrorKind::kData, path + ": not a PS2W weights file");
  const auto version = r.uint(4);
  require(version == kWeightsFormatVersion, ErrorKind::kData,
          path + ": unsupported format version " + std::to_string(version));
  const auto count = r.uint(4);
  std::vector<StoredTensor> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    StoredTensor t;
    t.name = r.text(r.uint(2));
    const auto rank = r.uint(1);
    for (std::uint64_t d = 0; d < rank; ++d) t.shape.push_back(r.uint(4));
    t.values.resize(ad::numel(t.shape));
    for (auto& v : t.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    out.push_back(std::move(t));
  }
  require(r.done(), ErrorKind::kData, path + ": trailing bytes after the last tensor");
  return out;
}

template <typename T>
void save_params(const nn::ParameterStore<T>& store, const std::string& path,
                 const nlohmann::json& extra) {
  std::string out = "PS2W";
  put_u32(out, kWeightsFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : store.entries()) {
    require(e.name.size() < 65536 && e.tensor.rank() < 256, ErrorKind::kUsage,
            "parameter " + e.name + " cannot be stored in PS2W");
    out.push_back(static_cast<char>(e.name.size()));
    out.push_back(static_cast<char>(e.name.size() >> 8));
    out += e.name;
    out.push_back(static_cast<char>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : e.tensor.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    manifest.push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(file), ErrorKind::kData, "cannot write weights file " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(file), ErrorKind::kData, "failed writing " + path);

  nlohmann::json side = extra.is_object() ? extra : nlohmann::json::object();
  side["format"] = "PS2W";
  side["format_version"] = kWeightsFormatVersion;
  side["parameter_count"] = store.total_count();
  side["tensors"] = manifest;
  std::ofstream js(sidecar_path(path), std::ios::trunc);
  require(static_cast<bool>(js), ErrorKind::kData, "cannot write " + sidecar_path(path));
  js << side.dump(2) << "\n";
}

template <typename T>
void load_params(nn::ParameterStore<T>& store, const std::string& path) {
  const auto stored = read_weights(path);
  std::map<std::string, const StoredTensor*> by_name;
  std::vector<std::string> problems;
  for (const auto& t : stored) {
    if (!by_name.emplace(t.name, &t).second) problems.push_back("duplicate " + t.name);
  }
  for (const auto& e : store.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) {
      problems.push_back("missing " + e.name);
    } else if (it->second->shape != e.tensor.shape()) {
      problems.push_back("shape mismatch " + e.name + " file " + ad::to_string(it->second->shape) +
                         " expected " + ad::to_string(e.tensor.shape()));
    }
  }
  for (const auto& t : stored) {
    if (!store.contains(t.name)) problems.push_back("unknown " + t.name);
  }
  if (!problems.empty()) {
    std::string msg = path + ": weights do not match the model manifest:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::kData, msg);
  }
  for (auto& e : store.entries()) {
    auto dst = ad::Tensor<T>(e.tensor).mutable_values();
    const auto& src = by_name.at(e.name)->values;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

nlohmann::json read_sidecar(const std::string& path) {
  std::ifstream in(sidecar_path(path));
  require(static_cast<bool>(in), ErrorKind::kData, "cannot open " + sidecar_path(path));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, sidecar_path(path) + ": " + e.what());
  }
}

template void save_params(const nn::ParameterStore<float>&, const std::string&, const nlohmann::json&);
template void save_params(const nn::ParameterStore<double>&, const std::string&, const nlohmann::json&);
template void load_params(nn::ParameterStore<float>&, const std::string&);
template void load_params(nn::ParameterStore<double>&, const std::string&);

}  // namespace ps2::model
