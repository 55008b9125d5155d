#include "ps2/room/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "ps2/common/error.hpp"
#include "ps2/common/rng.hpp"

namespace ps2::room {

namespace {

constexpr int kMaxAttempts = 1000;
constexpr double kTol = 1e-9;

double draw(Rng& rng, const Range& r) { return r.hi > r.lo ? rng.uniform(r.lo, r.hi) : r.lo; }

void require_range(const Range& r, const char* name) {
  require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi, ErrorKind::kUsage,
          std::string("protocol: range '") + name + "' must satisfy lo <= hi");
}

// Largest distance a point can travel from p along unit direction u while
// staying inside the box shrunk by margin.
double travel_limit(const Vec3& p, const Vec3& u, const Vec3& room, double margin) {
  double limit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (u[a] > 0.0) limit = std::min(limit, (room[a] - margin - p[a]) / u[a]);
    if (u[a] < 0.0) limit = std::min(limit, (margin - p[a]) / u[a]);
  }
  return std::max(limit, 0.0);
}

std::optional<SceneSpec> attempt(Rng& rng, const ProtocolRanges& p) {
  SceneSpec s;
  s.sample_rate = p.sample_rate;
  s.room = {draw(rng, p.length), draw(rng, p.width), draw(rng, p.height)};
  s.rt60 = draw(rng, p.rt60);
  const double m = p.wall_margin;

  const double reach = m + p.array_radius;
  if (s.room[0] <= 2 * reach || s.room[1] <= 2 * reach) return std::nullopt;
  const Vec3 center{rng.uniform(reach, s.room[0] - reach), rng.uniform(reach, s.room[1] - reach),
                    draw(rng, p.array_height)};
  for (const double az : p.mic_azimuths_deg) {
    const double phi = az * std::numbers::pi / 180.0;
    s.mics.push_back({center[0] + p.array_radius * std::cos(phi),
                      center[1] + p.array_radius * std::sin(phi), center[2]});
  }
  for (const Vec3& mic : s.mics) {
    if (wall_clearance(mic, s.room) < m) return std::nullopt;
  }

  for (int c = 0; c < p.sources; ++c) {
    Trajectory t;
    t.start = {rng.uniform(m, s.room[0] - m), rng.uniform(m, s.room[1] - m),
               draw(rng, p.source_height)};
    t.duration = draw(rng, p.duration);
    const double speed = draw(rng, p.speed);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec3 dir{std::cos(theta), std::sin(theta), 0.0};
    if (wall_clearance(t.start, s.room) < m) return std::nullopt;
    // Clip: slow the source so the whole straight path keeps the margin.
    const double travel = std::min(speed * t.duration,
                                   travel_limit(t.start, dir, s.room, m) * (1.0 - 1e-9));
    const double v = t.duration > 0.0 ? travel / t.duration : 0.0;
    t.velocity = {v * dir[0], v * dir[1], 0.0};
    s.trajectories.push_back(t);
  }

  for (std::size_t c = 0; c < s.trajectories.size(); ++c) {
    const Vec3& src = s.trajectories[c].start;
    if (distance(src, center) < p.min_distance) return std::nullopt;
    for (const Vec3& mic : s.mics) {
      if (distance(src, mic) < p.min_distance) return std::nullopt;
    }
    for (std::size_t o = 0; o < c; ++o) {
      if (distance(src, s.trajectories[o].start) < p.min_distance) return std::nullopt;
    }
  }

  // Gains relative to source 0; every later draw stays inside the window
  // that keeps all pairwise ratios in range.
  s.source_gain_db.push_back(0.0);
  double gmin = 0.0, gmax = 0.0;
  for (int c = 1; c < p.sources; ++c) {
    const double lo_ok = gmax + std::max(p.gain_db.lo, -p.gain_db.hi);
    const double hi_ok = gmin + std::min(p.gain_db.hi, -p.gain_db.lo);
    if (lo_ok > hi_ok) return std::nullopt;
    const double g = draw(rng, Range{lo_ok, hi_ok});
    s.source_gain_db.push_back(g);
    gmin = std::min(gmin, g);
    gmax = std::max(gmax, g);
  }
  s.target_snr_db = draw(rng, p.snr_db);
  return s;
}

}  // namespace

void ProtocolRanges::validate() const {
  require_range(length, "length");
  require_range(width, "width");
  require_range(height, "height");
  require_range(rt60, "rt60");
  require_range(array_height, "array_height");
  require_range(source_height, "source_height");
  require_range(speed, "speed");
  require_range(gain_db, "gain_db");
  require_range(snr_db, "snr_db");
  require_range(duration, "duration");
  require(speed.lo >= 0.0, ErrorKind::kUsage, "protocol: speeds must be non-negative");
  require(duration.lo > 0.0, ErrorKind::kUsage, "protocol: durations must be positive");
  require(length.lo > 0.0 && width.lo > 0.0 && height.lo > 0.0, ErrorKind::kUsage,
          "protocol: room dimensions must be positive");
  require(wall_margin >= 0.0 && min_distance >= 0.0 && array_radius >= 0.0, ErrorKind::kUsage,
          "protocol: margins and radius must be non-negative");
  require(!mic_azimuths_deg.empty(), ErrorKind::kUsage, "protocol: at least one microphone");
  require(sources >= 1 && sources <= 4, ErrorKind::kUsage, "protocol: sources must be in [1, 4]");
  require(sample_rate > 0, ErrorKind::kUsage, "protocol: sample_rate must be positive");
}

Vec3 Trajectory::at(double t) const {
  return {start[0] + velocity[0] * t, start[1] + velocity[1] * t, start[2] + velocity[2] * t};
}

double Trajectory::speed() const {
  return std::sqrt(velocity[0] * velocity[0] + velocity[1] * velocity[1] +
                   velocity[2] * velocity[2]);
}

std::size_t Trajectory::samples(int fs) const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(duration * fs)));
}

std::size_t SceneSpec::mixture_length() const {
  require(!trajectories.empty(), ErrorKind::kData, "scene has no sources");
  std::size_t n = trajectories.front().samples(sample_rate);
  for (const auto& t : trajectories) n = std::min(n, t.samples(sample_rate));
  return n;
}

Vec3 SceneSpec::array_center() const {
  Vec3 c{};
  for (const Vec3& m : mics) {
    for (int a = 0; a < 3; ++a) c[a] += m[a] / static_cast<double>(mics.size());
  }
  return c;
}

double SceneSpec::min_source_angle_deg() const {
  require(!mics.empty(), ErrorKind::kData, "scene has no microphones");
  const Vec3& o = mics.front();
  const std::size_t n = mixture_length();
  const std::size_t step = std::max(1, sample_rate / 100);
  double best = 180.0;
  auto angle_at = [&](std::size_t sample) {
    const double t = static_cast<double>(sample) / sample_rate;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        const Vec3 a = trajectories[i].at(t), b = trajectories[j].at(t);
        const Vec3 u{a[0] - o[0], a[1] - o[1], a[2] - o[2]};
        const Vec3 v{b[0] - o[0], b[1] - o[1], b[2] - o[2]};
        const double cross = std::hypot(u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                                        u[0] * v[1] - u[1] * v[0]);
        const double dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        best = std::min(best, std::atan2(cross, dot) * 180.0 / std::numbers::pi);
      }
    }
  };
  for (std::size_t k = 0; k < n; k += step) angle_at(k);
  angle_at(n - 1);
  return best;
}

double SceneSpec::mean_speed() const {
  double s = 0.0;
  for (const auto& t : trajectories) s += t.speed() / static_cast<double>(trajectories.size());
  return s;
}

double distance(const Vec3& a, const Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
}

double wall_clearance(const Vec3& p, const Vec3& room) {
  double c = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) c = std::min({c, p[a], room[a] - p[a]});
  return c;
}

SceneSpec sample_scene(std::uint64_t seed, const ProtocolRanges& protocol) {
  protocol.validate();
  Rng rng(seed);
  for (int i = 0; i < kMaxAttempts; ++i) {
    if (auto s = attempt(rng, protocol)) {
      s->seed = seed;
      return *s;
    }
  }
  fail(ErrorKind::kData, "scene sampling failed");
}

std::vector<std::string> check_scene(const SceneSpec& s, const ProtocolRanges& p) {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  auto in = [](const Range& r, double x) { return x >= r.lo - kTol && x <= r.hi + kTol; };
  check(in(p.length, s.room[0]), "room length");
  check(in(p.width, s.room[1]), "room width");
  check(in(p.height, s.room[2]), "room height");
  check(in(p.rt60, s.rt60), "rt60");
  check(in(p.snr_db, s.target_snr_db), "snr");
  check(s.mics.size() == p.mic_azimuths_deg.size(), "microphone count");
  check(s.trajectories.size() == static_cast<std::size_t>(p.sources), "source count");
  check(s.source_gain_db.size() == s.trajectories.size(), "gain count");

  const Vec3 center = s.array_center();
  check(in(p.array_height, center[2]), "array height");
  for (const Vec3& mic : s.mics) {
    check(std::abs(mic[2] - center[2]) <= kTol, "microphones not coplanar");
    check(std::abs(distance(mic, center) - p.array_radius) <= kTol, "array radius");
    check(wall_clearance(mic, s.room) >= p.wall_margin - kTol, "microphone wall margin");
  }
  for (std::size_t c = 0; c < s.trajectories.size(); ++c) {
    const Trajectory& t = s.trajectories[c];
    const std::string tag = "source " + std::to_string(c) + " ";
    check(in(p.source_height, t.start[2]) && in(p.source_height, t.end()[2]), tag + "height");
    check(in(p.speed, t.speed()), tag + "speed");
    check(in(p.duration, t.duration), tag + "duration");
    check(wall_clearance(t.start, s.room) >= p.wall_margin - kTol, tag + "start wall margin");
    check(wall_clearance(t.end(), s.room) >= p.wall_margin - kTol, tag + "end wall margin");
    for (const Vec3& mic : s.mics) {
      check(distance(t.start, mic) >= p.min_distance - kTol, tag + "too close to array");
    }
    for (std::size_t o = 0; o < c; ++o) {
      check(distance(t.start, s.trajectories[o].start) >= p.min_distance - kTol,
            tag + "too close to source " + std::to_string(o));
    }
  }
  for (std::size_t i = 0; i < s.source_gain_db.size(); ++i) {
    for (std::size_t j = 0; j < s.source_gain_db.size(); ++j) {
      if (i != j) check(in(p.gain_db, s.source_gain_db[i] - s.source_gain_db[j]), "energy ratio");
    }
  }
  return bad;
}

nlohmann::ordered_json to_json(const SceneSpec& s) {
  nlohmann::ordered_json j;
  j["room"] = s.room;
  j["rt60"] = s.rt60;
  j["mics"] = s.mics;
  auto trajs = nlohmann::ordered_json::array();
  for (const auto& t : s.trajectories) {
    nlohmann::ordered_json r;
    r["start"] = t.start;
    r["velocity"] = t.velocity;
    r["duration"] = t.duration;
    trajs.push_back(r);
  }
  j["trajectories"] = trajs;
  j["target_snr_db"] = s.target_snr_db;
  j["source_gain_db"] = s.source_gain_db;
  j["seed"] = s.seed;
  j["sample_rate"] = s.sample_rate;
  return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.room = j.at("room").get<Vec3>();
    s.rt60 = j.at("rt60").get<double>();
    s.mics = j.at("mics").get<std::vector<Vec3>>();
    for (const auto& r : j.at("trajectories")) {
      s.trajectories.push_back({r.at("start").get<Vec3>(), r.at("velocity").get<Vec3>(),
                                r.at("duration").get<double>()});
    }
    s.target_snr_db = j.at("target_snr_db").get<double>();
    s.source_gain_db = j.at("source_gain_db").get<std::vector<double>>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.sample_rate = j.at("sample_rate").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("scene: ") + e.what());
  }
  return s;
}

nlohmann::ordered_json to_json(const ProtocolRanges& p) {
  auto range = [](const Range& r) { return nlohmann::ordered_json::array({r.lo, r.hi}); };
  nlohmann::ordered_json j;
  j["length"] = range(p.length);
  j["width"] = range(p.width);
  j["height"] = range(p.height);
  j["rt60"] = range(p.rt60);
  j["array_height"] = range(p.array_height);
  j["source_height"] = range(p.source_height);
  j["speed"] = range(p.speed);
  j["gain_db"] = range(p.gain_db);
  j["snr_db"] = range(p.snr_db);
  j["duration"] = range(p.duration);
  j["wall_margin"] = p.wall_margin;
  j["min_distance"] = p.min_distance;
  j["array_radius"] = p.array_radius;
  j["mic_azimuths_deg"] = p.mic_azimuths_deg;
  j["sources"] = p.sources;
  j["sample_rate"] = p.sample_rate;
  return j;
}

ProtocolRanges protocol_from_json(const nlohmann::json& j, ProtocolRanges base) {
  require(j.is_object(), ErrorKind::kUsage, "protocol must be a JSON object");
  const auto keys = to_json(base);
  for (const auto& [key, value] : j.items()) {
    require(keys.contains(key), ErrorKind::kUsage, "protocol: unknown key '" + key + "'");
  }
  try {
    auto range = [&](const char* key, Range& r) {
      if (!j.contains(key)) return;
      const auto v = j.at(key).get<std::vector<double>>();
      require(v.size() == 2, ErrorKind::kUsage, std::string("protocol: '") + key + "' needs [lo, hi]");
      r = {v[0], v[1]};
    };
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    range("length", base.length);
    range("width", base.width);
    range("height", base.height);
    range("rt60", base.rt60);
    range("array_height", base.array_height);
    range("source_height", base.source_height);
    range("speed", base.speed);
    range("gain_db", base.gain_db);
    range("snr_db", base.snr_db);
    range("duration", base.duration);
    get("wall_margin", base.wall_margin);
    get("min_distance", base.min_distance);
    get("array_radius", base.array_radius);
    get("mic_azimuths_deg", base.mic_azimuths_deg);
    get("sources", base.sources);
    get("sample_rate", base.sample_rate);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, std::string("protocol: ") + e.what());
  }
  base.validate();
  return base;
}

}  // namespace ps2::room
