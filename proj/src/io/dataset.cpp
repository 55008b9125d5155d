#include "ps2/io/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>

#include "ps2/common/error.hpp"
#include "ps2/common/rng.hpp"
#include "ps2/room/render.hpp"
#include "ps2/signal/wav.hpp"

namespace ps2::io {

namespace fs = std::filesystem;

std::uint64_t item_seed(std::uint64_t seed, std::size_t index) {
  return Rng(seed).fork(index).next_u64();
}

std::string item_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

void guard_overwrite(const std::string& path, bool force) {
  require(force || !fs::exists(path), ErrorKind::kUsage,
          "refusing to overwrite " + path + " (pass --force)");
}

namespace {

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kData, "cannot write " + path);
  out << j.dump(2) << '\n';
}

ManifestRecord write_item(const fs::path& dir, const std::string& id, const room::SceneSpec& scene,
                          const SimulateOptions& opt) {
  const room::RenderedScene r = room::render_scene(scene, opt.hop, opt.render);
  const fs::path item = dir / id;
  fs::create_directories(item);
  ManifestRecord rec = record_of(id, scene);
  auto put = [&](const std::string& name, const signal::Waveform& w) {
    signal::write_wav((item / name).string(), w, signal::WavFormat::kFloat32);
    return id + "/" + name;
  };
  write_json((item / "scene.json").string(), room::to_json(scene));
  rec.files.scene = id + "/scene.json";
  rec.files.mixture = put("mixture.wav", r.mix.mixture);
  for (std::size_t s = 0; s < r.mix.sources.size(); ++s) {
    rec.files.sources.push_back(put("source" + std::to_string(s) + ".wav", r.mix.sources[s]));
    rec.files.dry.push_back(put("dry" + std::to_string(s) + ".wav", r.dry[s]));
  }
  rec.files.noise = put("noise.wav", r.mix.noise);
  return rec;
}

}  // namespace

std::vector<ManifestRecord> simulate_dataset(const SimulateRequest& req) {
  require(req.count > 0, ErrorKind::kUsage, "simulate: count must be positive");
  require(req.jobs > 0, ErrorKind::kUsage, "simulate: jobs must be positive");
  req.protocol.validate();
  const fs::path dir(req.dir);
  const fs::path manifest = dir / "manifest.jsonl";
  guard_overwrite(manifest.string(), req.force);
  fs::create_directories(dir);

  const auto n = static_cast<std::ptrdiff_t>(req.count);
  std::vector<ManifestRecord> records(req.count);
  std::vector<std::exception_ptr> errors(req.count);
#pragma omp parallel for schedule(dynamic) num_threads(req.jobs)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto idx = static_cast<std::size_t>(i);
      const room::SceneSpec scene = room::sample_scene(item_seed(req.seed, idx), req.protocol);
      records[idx] = write_item(dir, item_id(idx), scene, req.options);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  write_manifest(manifest.string(), records);
  return records;
}

DatasetItem load_item(const std::string& base_dir, const ManifestRecord& record) {
  const fs::path base(base_dir);
  auto wav = [&](const std::string& rel) { return signal::read_wav((base / rel).string()); };
  DatasetItem item;
  {
    const std::string path = (base / record.files.scene).string();
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::kData, "cannot open scene file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kData, path + ": " + e.what());
    }
    item.scene = room::scene_from_json(j);
  }
  item.mixture = wav(record.files.mixture);
  for (const auto& s : record.files.sources) item.sources.push_back(wav(s));
  for (const auto& s : record.files.dry) item.dry.push_back(wav(s));
  item.noise = wav(record.files.noise);
  require(item.sources.size() == item.scene.sources() && item.dry.size() == item.scene.sources(), ErrorKind::kData,
          record.id + ": source file count does not match the scene");
  for (const auto& s : item.sources)
    require(s.length() == item.mixture.length() && s.channels() == item.mixture.channels(), ErrorKind::kData,
            record.id + ": source image shape does not match the mixture");
  return item;
}

signal::Waveform targets_of(const DatasetItem& item, TargetKind kind) {
  const std::size_t n = item.mixture.length();
  const auto& list = kind == TargetKind::kDry ? item.dry : item.sources;
  signal::Waveform out(list.size(), n, item.mixture.sample_rate());
  for (std::size_t s = 0; s < list.size(); ++s) {
    require(list[s].length() >= n, ErrorKind::kData, "target shorter than the mixture");
    const auto src = list[s].channel(0);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n), out.channel(s).begin());
  }
  return out;
}

}  // namespace ps2::io
