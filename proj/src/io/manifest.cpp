#include "ps2/io/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ps2/common/error.hpp"

namespace ps2::io {

namespace {

const std::vector<std::string> kRecordKeys{"id",     "seed",      "room",          "rt60",       "snr_db", "speeds",
                                           "endpoints", "min_angle_deg", "duration_s", "files"};
const std::vector<std::string> kFileKeys{"scene", "mixture", "sources", "dry", "noise"};

class Reader {
 public:
  explicit Reader(std::size_t line) : prefix_(line > 0 ? "line " + std::to_string(line) + ": " : "") {}

  [[noreturn]] void error(const std::string& what) const { fail(ErrorKind::kData, prefix_ + what); }

  void check_keys(const nlohmann::json& j, const std::vector<std::string>& keys, const std::string& scope) const {
    if (!j.is_object()) error(scope.empty() ? "record is not a JSON object" : "field '" + scope + "' is not an object");
    const std::string dot = scope.empty() ? "" : scope + ".";
    for (const auto& k : keys)
      if (!j.contains(k)) error("missing field '" + dot + k + "'");
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
      if (!known.contains(k)) error("unexpected field '" + dot + k + "'");
  }

  double number(const nlohmann::json& j, const std::string& name) const {
    if (!j.is_number()) error("field '" + name + "' must be a number");
    return j.get<double>();
  }

  std::string string(const nlohmann::json& j, const std::string& name) const {
    if (!j.is_string()) error("field '" + name + "' must be a string");
    return j.get<std::string>();
  }

  room::Vec3 vec3(const nlohmann::json& j, const std::string& name) const {
    if (!j.is_array() || j.size() != 3) error("field '" + name + "' must be an array of 3 numbers");
    room::Vec3 v;
    for (std::size_t i = 0; i < 3; ++i) v[i] = number(j[i], name);
    return v;
  }

  template <typename F>
  void array(const nlohmann::json& j, const std::string& name, F&& each) const {
    if (!j.is_array()) error("field '" + name + "' must be an array");
    for (const auto& e : j) each(e);
  }

 private:
  std::string prefix_;
};

}  // namespace

ManifestRecord record_of(const std::string& id, const room::SceneSpec& scene) {
  ManifestRecord r;
  r.id = id;
  r.seed = scene.seed;
  r.room = scene.room;
  r.rt60 = scene.rt60;
  r.snr_db = scene.target_snr_db;
  for (const auto& t : scene.trajectories) {
    r.speeds.push_back(t.speed());
    r.endpoints.emplace_back(t.start, t.end());
  }
  r.min_angle_deg = scene.min_source_angle_deg();
  r.duration_s = static_cast<double>(scene.mixture_length()) / scene.sample_rate;
  return r;
}

nlohmann::ordered_json to_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["seed"] = r.seed;
  j["room"] = r.room;
  j["rt60"] = r.rt60;
  j["snr_db"] = r.snr_db;
  j["speeds"] = r.speeds;
  auto ends = nlohmann::ordered_json::array();
  for (const auto& [start, end] : r.endpoints) ends.push_back({{"start", start}, {"end", end}});
  j["endpoints"] = std::move(ends);
  j["min_angle_deg"] = r.min_angle_deg;
  j["duration_s"] = r.duration_s;
  nlohmann::ordered_json f;
  f["scene"] = r.files.scene;
  f["mixture"] = r.files.mixture;
  f["sources"] = r.files.sources;
  f["dry"] = r.files.dry;
  f["noise"] = r.files.noise;
  j["files"] = std::move(f);
  return j;
}

ManifestRecord record_from_json(const nlohmann::json& j, std::size_t line) {
  const Reader rd(line);
  rd.check_keys(j, kRecordKeys, "");
  ManifestRecord r;
  r.id = rd.string(j["id"], "id");
  if (r.id.empty()) rd.error("field 'id' is empty");
  if (!j["seed"].is_number_unsigned()) rd.error("field 'seed' must be a non-negative integer");
  r.seed = j["seed"].get<std::uint64_t>();
  r.room = rd.vec3(j["room"], "room");
  r.rt60 = rd.number(j["rt60"], "rt60");
  r.snr_db = rd.number(j["snr_db"], "snr_db");
  rd.array(j["speeds"], "speeds", [&](const nlohmann::json& e) { r.speeds.push_back(rd.number(e, "speeds")); });
  rd.array(j["endpoints"], "endpoints", [&](const nlohmann::json& e) {
    rd.check_keys(e, {"start", "end"}, "endpoints");
    r.endpoints.emplace_back(rd.vec3(e["start"], "endpoints.start"), rd.vec3(e["end"], "endpoints.end"));
  });
  if (r.endpoints.size() != r.speeds.size()) rd.error("fields 'speeds' and 'endpoints' differ in length");
  r.min_angle_deg = rd.number(j["min_angle_deg"], "min_angle_deg");
  r.duration_s = rd.number(j["duration_s"], "duration_s");
  const auto& f = j["files"];
  rd.check_keys(f, kFileKeys, "files");
  r.files.scene = rd.string(f["scene"], "files.scene");
  r.files.mixture = rd.string(f["mixture"], "files.mixture");
  r.files.noise = rd.string(f["noise"], "files.noise");
  rd.array(f["sources"], "files.sources",
           [&](const nlohmann::json& e) { r.files.sources.push_back(rd.string(e, "files.sources")); });
  rd.array(f["dry"], "files.dry", [&](const nlohmann::json& e) { r.files.dry.push_back(rd.string(e, "files.dry")); });
  if (r.files.sources.size() != r.speeds.size() || r.files.dry.size() != r.speeds.size())
    rd.error("fields 'files.sources' and 'files.dry' need one entry per source");
  return r;
}

std::string manifest_text(const std::vector<ManifestRecord>& records) {
  std::string out = nlohmann::ordered_json{{"format", kManifestFormat}, {"version", kManifestVersion}}.dump();
  out += '\n';
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kData, "cannot write manifest " + path);
  out << manifest_text(records);
  require(static_cast<bool>(out), ErrorKind::kData, "failed writing manifest " + path);
}

std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  auto parse_line = [&](const std::string& s) {
    try {
      return nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kData, origin + ": line " + std::to_string(number) + ": invalid JSON: " + e.what());
    }
  };
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kData, origin + ": empty manifest");
  ++number;
  const auto header = parse_line(line);
  require(header.is_object() && header.size() == 2 && header.value("format", "") == kManifestFormat &&
              header.contains("version") && header["version"].is_number_integer(),
          ErrorKind::kData, origin + ": line 1: expected header {\"format\":\"ps2-manifest\",\"version\":N}");
  const int version = header["version"].get<int>();
  require(version == kManifestVersion, ErrorKind::kData,
          origin + ": line 1: unsupported manifest version " + std::to_string(version) + " (expected " +
              std::to_string(kManifestVersion) + ")");
  std::vector<ManifestRecord> records;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(parse_line(line), number));
    } catch (const Error& e) {
      fail(e.kind(), origin + ": " + e.what());
    }
    require(ids.insert(records.back().id).second, ErrorKind::kData,
            origin + ": line " + std::to_string(number) + ": duplicate id '" + records.back().id + "'");
  }
  return records;
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kData, "cannot open manifest " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path);
}

}  // namespace ps2::io
