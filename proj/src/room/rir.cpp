#include "ps2/room/rir.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "ps2/common/error.hpp"

namespace ps2::room {

namespace {

// Adds amp * sinc(n - t) * hann(n - t) for the 81 taps around t.
void add_fractional_impulse(std::vector<double>& h, double t, double amp) {
  const long n0 = std::lround(t);
  const double x0 = static_cast<double>(n0 - kSincHalf) - t;
  // Angle recurrences for sin(pi x) and cos(pi x / (half + 1)).
  const double sin_base = std::sin(std::numbers::pi * (static_cast<double>(n0) - t));
  const double dw = std::numbers::pi / (kSincHalf + 1);
  double wc = std::cos(x0 * dw), ws = std::sin(x0 * dw);
  const double rc = std::cos(dw), rs = std::sin(dw);
  const long len = static_cast<long>(h.size());
  for (int j = -kSincHalf; j <= kSincHalf; ++j) {
    const long n = n0 + j;
    const double x = x0 + (j + kSincHalf);
    if (n >= 0 && n < len) {
      double sinc;
      if (std::abs(x) < 1e-12) {
        sinc = 1.0;
      } else {
        const double s = (j % 2 == 0) ? sin_base : -sin_base;
        sinc = s / (std::numbers::pi * x);
      }
      h[static_cast<std::size_t>(n)] += amp * sinc * 0.5 * (1.0 + wc);
    }
    const double c = wc * rc - ws * rs;
    ws = ws * rc + wc * rs;
    wc = c;
  }
}

struct Geometry {
  Vec3 room;
  Vec3 src;
  double beta;
  int fs;
  std::size_t length;
  bool anechoic;
  std::array<int, 3> order;
};

Geometry make_geometry(const Vec3& room, double rt60, const Vec3& src,
                       const std::vector<Vec3>& mics, int fs, std::size_t length,
                       std::optional<double> beta = std::nullopt) {
  require(fs > 0, ErrorKind::kUsage, "rir: sample rate must be positive");
  for (int a = 0; a < 3; ++a) {
    require(room[a] > 0.0, ErrorKind::kData, "rir: room dimensions must be positive");
    require(src[a] > 0.0 && src[a] < room[a], ErrorKind::kData, "rir: source outside room");
  }
  for (const Vec3& m : mics) {
    for (int a = 0; a < 3; ++a) {
      require(m[a] > 0.0 && m[a] < room[a], ErrorKind::kData, "rir: microphone outside room");
    }
  }
  Geometry g{room, src, beta ? *beta : reflection_coefficient(room, rt60), fs,
             length ? length : rir_length(room, rt60, src, mics, fs), rt60 <= 0.0, {0, 0, 0}};
  const double reach = kSpeedOfSound * static_cast<double>(g.length) / fs;
  if (!g.anechoic) {
    for (int a = 0; a < 3; ++a) g.order[a] = static_cast<int>(std::ceil(reach / (2.0 * room[a]))) + 1;
  }
  return g;
}

void accumulate_mic(const Geometry& g, const Vec3& mic, std::vector<double>& h) {
  h.assign(g.length, 0.0);
  const int max_refl = 2 * (g.order[0] + g.order[1] + g.order[2]) + 6;
  std::vector<double> beta_pow(static_cast<std::size_t>(max_refl) + 1, 1.0);
  for (std::size_t i = 1; i < beta_pow.size(); ++i) beta_pow[i] = beta_pow[i - 1] * g.beta;
  const double samples_per_metre = g.fs / kSpeedOfSound;
  const double limit = static_cast<double>(g.length);
  const int qmax = g.anechoic ? 0 : 1;

  for (int nx = -g.order[0]; nx <= g.order[0]; ++nx) {
    for (int qx = 0; qx <= qmax; ++qx) {
      const double dx = (1 - 2 * qx) * g.src[0] + 2.0 * nx * g.room[0] - mic[0];
      const int rx = std::abs(nx - qx) + std::abs(nx);
      for (int ny = -g.order[1]; ny <= g.order[1]; ++ny) {
        for (int qy = 0; qy <= qmax; ++qy) {
          const double dy = (1 - 2 * qy) * g.src[1] + 2.0 * ny * g.room[1] - mic[1];
          const int ry = std::abs(ny - qy) + std::abs(ny);
          for (int nz = -g.order[2]; nz <= g.order[2]; ++nz) {
            for (int qz = 0; qz <= qmax; ++qz) {
              const double dz = (1 - 2 * qz) * g.src[2] + 2.0 * nz * g.room[2] - mic[2];
              const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
              const double t = d * samples_per_metre;
              if (t >= limit) continue;
              const int rz = std::abs(nz - qz) + std::abs(nz);
              const double amp = beta_pow[static_cast<std::size_t>(rx + ry + rz)] /
                                 (4.0 * std::numbers::pi * d);
              add_fractional_impulse(h, t, amp);
            }
          }
        }
      }
    }
  }
  if (!g.anechoic) {
    // All image amplitudes are positive, so their dense late sum carries a
    // growing low-frequency component that stretches the energy decay; a
    // first-order DC blocker removes it.
    const double r = std::exp(-2.0 * std::numbers::pi * kHighpassHz / g.fs);
    double x_prev = 0.0, y_prev = 0.0;
    for (double& v : h) {
      const double y = v - x_prev + r * y_prev;
      x_prev = v;
      y_prev = y;
      v = y;
    }
  }
}

}  // namespace

double decay_time_unit_attenuation(const Vec3& room) {
  // Continuum image lattice: an image at distance c t along direction u has
  // undergone about c t sum_a |u_a| / L_a reflections, so with beta = e^-k the
  // energy arriving at t is the sphere average of exp(-2 k c t g(u)) and its
  // backward integral is available in closed form. Time scales as 1 / k.
  constexpr int kGrid = 64;
  std::vector<double> weight, rate;
  const double h = std::numbers::pi / 2.0 / kGrid;
  for (int i = 0; i < kGrid; ++i) {
    const double th = (i + 0.5) * h;
    for (int j = 0; j < kGrid; ++j) {
      const double ph = (j + 0.5) * h;
      const double g = std::sin(th) * std::cos(ph) / room[0] +
                       std::sin(th) * std::sin(ph) / room[1] + std::cos(th) / room[2];
      weight.push_back(std::sin(th) * h * h);
      rate.push_back(2.0 * kSpeedOfSound * g);
    }
  }
  auto edc = [&](double t) {
    double e = 0.0;
    for (std::size_t i = 0; i < rate.size(); ++i) e += weight[i] * std::exp(-rate[i] * t) / rate[i];
    return e;
  };
  const double e0 = edc(0.0);
  const double mean_rate = kSpeedOfSound * (1.0 / room[0] + 1.0 / room[1] + 1.0 / room[2]);
  const double dt = 1e-2 / mean_rate;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, count = 0;
  for (double t = 0.0;; t += dt) {
    const double db = 10.0 * std::log10(edc(t) / e0);
    if (db > -5.0) continue;
    if (db < -25.0) break;
    sx += t;
    sy += db;
    sxx += t * t;
    sxy += t * db;
    count += 1.0;
  }
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  return -60.0 / slope;
}

double reflection_coefficient(const Vec3& room, double rt60) {
  if (rt60 <= 0.0) return 0.0;
  return std::exp(-decay_time_unit_attenuation(room) / rt60);
}

std::size_t rir_length(const Vec3& room, double rt60, const Vec3& src,
                       const std::vector<Vec3>& mics, int fs) {
  (void)room;
  double direct = 0.0;
  for (const Vec3& m : mics) direct = std::max(direct, distance(src, m));
  const auto tail = rt60 > 0.0 ? static_cast<std::size_t>(std::ceil(rt60 * fs)) : 0;
  return tail + static_cast<std::size_t>(std::ceil(direct / kSpeedOfSound * fs)) + kSincHalf + 1;
}

MicRirs compute_rir(const Vec3& room, double rt60, const Vec3& src,
                    const std::vector<Vec3>& mics, int fs, std::size_t length) {
  const Geometry g = make_geometry(room, rt60, src, mics, fs, length);
  MicRirs out(mics.size());
  const auto n = static_cast<std::ptrdiff_t>(mics.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t m = 0; m < n; ++m) accumulate_mic(g, mics[m], out[m]);
  return out;
}

namespace reference {

MicRirs compute_rir(const Vec3& room, double rt60, const Vec3& src,
                    const std::vector<Vec3>& mics, int fs, std::size_t length) {
  const Geometry g = make_geometry(room, rt60, src, mics, fs, length);
  MicRirs out(mics.size());
  for (std::size_t m = 0; m < mics.size(); ++m) accumulate_mic(g, mics[m], out[m]);
  return out;
}

}  // namespace reference

WaypointPlan plan_waypoints(const Trajectory& traj, int fs, std::size_t hop) {
  require(hop >= 1, ErrorKind::kUsage, "waypoints: hop must be at least 1 sample");
  const std::size_t last = traj.samples(fs) - 1;
  WaypointPlan plan;
  for (std::size_t t = 0; t < last; t += hop) plan.times.push_back(t);
  plan.times.push_back(last);
  for (const std::size_t t : plan.times) {
    plan.positions.push_back(traj.at(static_cast<double>(t) / fs));
  }
  return plan;
}

void RirSet::validate() const {
  require(!taps.empty() && taps.size() == times.size(), ErrorKind::kData,
          "rir set: waypoint count mismatch");
  for (std::size_t k = 1; k < times.size(); ++k) {
    require(times[k] > times[k - 1], ErrorKind::kData, "rir set: waypoint times not increasing");
  }
  for (const auto& w : taps) {
    require(w.size() == mics(), ErrorKind::kData, "rir set: microphone count mismatch");
    for (const auto& h : w) {
      require(h.size() == length() && !h.empty(), ErrorKind::kData, "rir set: tap length mismatch");
    }
  }
}

RirSet compute_rir_set(const SceneSpec& scene, std::size_t source, std::size_t hop) {
  require(source < scene.trajectories.size(), ErrorKind::kUsage, "rir set: source index out of range");
  const WaypointPlan plan = plan_waypoints(scene.trajectories[source], scene.sample_rate, hop);
  std::size_t length = 0;
  for (const Vec3& p : plan.positions) {
    length = std::max(length, rir_length(scene.room, scene.rt60, p, scene.mics, scene.sample_rate));
  }
  RirSet set;
  set.times = plan.times;
  set.sample_rate = scene.sample_rate;
  set.taps.assign(plan.times.size(), MicRirs(scene.mics.size()));
  const double beta = reflection_coefficient(scene.room, scene.rt60);
  std::vector<Geometry> geo;
  for (const Vec3& p : plan.positions) {
    geo.push_back(
        make_geometry(scene.room, scene.rt60, p, scene.mics, scene.sample_rate, length, beta));
  }
  const std::size_t mics = scene.mics.size();
  const auto jobs = static_cast<std::ptrdiff_t>(geo.size() * mics);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t j = 0; j < jobs; ++j) {
    const std::size_t k = static_cast<std::size_t>(j) / mics, m = static_cast<std::size_t>(j) % mics;
    accumulate_mic(geo[k], scene.mics[m], set.taps[k][m]);
  }
  return set;
}

double schroeder_rt60(std::span<const double> rir, int fs) {
  std::vector<double> edc(rir.size() + 1, 0.0);
  for (std::size_t n = rir.size(); n-- > 0;) edc[n] = edc[n + 1] + rir[n] * rir[n];
  require(edc[0] > 0.0, ErrorKind::kNumerical, "schroeder: silent impulse response");
  std::size_t begin = rir.size(), end = rir.size();
  for (std::size_t n = 0; n < rir.size(); ++n) {
    const double db = 10.0 * std::log10(edc[n] / edc[0]);
    if (begin == rir.size() && db <= -5.0) begin = n;
    if (db <= -25.0) {
      end = n;
      break;
    }
  }
  require(end < rir.size() && end > begin + 1, ErrorKind::kNumerical,
          "schroeder: decay does not reach -25 dB");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double count = static_cast<double>(end - begin + 1);
  for (std::size_t n = begin; n <= end; ++n) {
    const double x = static_cast<double>(n) / fs;
    const double y = 10.0 * std::log10(edc[n] / edc[0]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  require(slope < 0.0, ErrorKind::kNumerical, "schroeder: non-decaying response");
  return -60.0 / slope;
}

}  // namespace ps2::room
