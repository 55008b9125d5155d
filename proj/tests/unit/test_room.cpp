#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ps2/common/error.hpp"
#include "ps2/room/render.hpp"
#include "ps2/room/rir.hpp"
#include "ps2/room/scene.hpp"
#include "support.hpp"

using namespace ps2;
using namespace ps2::room;
using signal::Waveform;

namespace {

// Short, lightly reverberant scenes for rendering tests.
ProtocolRanges quick_protocol() {
  ProtocolRanges p;
  p.duration = {0.25, 0.4};
  p.rt60 = {0.1, 0.15};
  return p;
}

std::size_t argmax_abs(const std::vector<double>& h) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (std::abs(h[i]) > std::abs(h[best])) best = i;
  }
  return best;
}

Waveform random_wave(std::size_t channels, std::size_t length, Rng& rng) {
  Waveform w(channels, length, 16000);
  for (double& v : w.samples()) v = rng.uniform(-1.0, 1.0);
  return w;
}

RirSet constant_set(const std::vector<std::size_t>& times, const MicRirs& taps) {
  RirSet set;
  set.times = times;
  set.sample_rate = 16000;
  set.taps.assign(times.size(), taps);
  return set;
}

double rel_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_SUITE("room") {
  TEST_CASE("scene sampling is deterministic") {
    const ProtocolRanges p;
    const SceneSpec a = sample_scene(7, p);
    const SceneSpec b = sample_scene(7, p);
    CHECK(a == b);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(!(sample_scene(8, p) == a));
    CHECK(scene_from_json(nlohmann::json::parse(to_json(a).dump())) == a);
  }

  TEST_CASE("ten thousand sampled scenes satisfy the protocol") {
    const ProtocolRanges p;
    std::size_t violations = 0;
    std::string first;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      const SceneSpec s = sample_scene(seed, p);
      const auto bad = check_scene(s, p);
      if (!bad.empty() && first.empty()) first = "seed " + std::to_string(seed) + ": " + bad.front();
      violations += bad.size();
      std::size_t shortest = SIZE_MAX;
      for (const auto& t : s.trajectories) shortest = std::min(shortest, t.samples(s.sample_rate));
      violations += s.mixture_length() != shortest;
      violations += s.mics.size() != 6 || s.sources() != 2;
    }
    INFO(first);
    CHECK(violations == 0);
  }

  TEST_CASE("check_scene reports violations") {
    const ProtocolRanges p;
    SceneSpec s = sample_scene(3, p);
    CHECK(check_scene(s, p).empty());
    s.trajectories[0].velocity = {3.0, 0.0, 0.0};
    s.rt60 = 0.9;
    const auto bad = check_scene(s, p);
    CHECK(std::find(bad.begin(), bad.end(), "rt60") != bad.end());
    CHECK(std::find(bad.begin(), bad.end(), "source 0 speed") != bad.end());
  }

  TEST_CASE("zero speed keeps the source in place") {
    ProtocolRanges p;
    p.speed = {0.0, 0.0};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const SceneSpec s = sample_scene(seed, p);
      for (const auto& t : s.trajectories) CHECK(t.end() == t.start);
    }
  }

  TEST_CASE("infeasible protocols fail cleanly") {
    ProtocolRanges p;
    p.min_distance = 50.0;
    CHECK_THROWS_WITH_AS(sample_scene(1, p), "scene sampling failed", Error);
    ProtocolRanges q;
    q.rt60 = {0.7, 0.1};
    CHECK_THROWS_AS(sample_scene(1, q), Error);
  }

  TEST_CASE("protocol json round trip rejects unknown keys") {
    ProtocolRanges p;
    p.rt60 = {0.2, 0.3};
    p.sources = 3;
    const auto j = nlohmann::json::parse(to_json(p).dump());
    CHECK(protocol_from_json(j) == p);
    CHECK_THROWS_WITH_AS(protocol_from_json(nlohmann::json{{"rt_60", {0.1, 0.2}}}),
                         doctest::Contains("unknown key 'rt_60'"), Error);
  }

  TEST_CASE("anechoic direct path matches geometry") {
    const Vec3 room{8.0, 9.0, 3.5};
    const Vec3 src{2.0, 3.0, 1.5};
    const double fs = 16000.0;
    SUBCASE("distance 1.7 m") {
      const Vec3 mic{3.7, 3.0, 1.5};
      const auto h = compute_rir(room, 0.0, src, {mic}, 16000)[0];
      const double t = 1.7 / 343.0 * fs;
      CHECK(argmax_abs(h) == 79);
      const double amp = 1.0 / (4.0 * std::numbers::pi * 1.7);
      // Hann-windowed sinc evaluated directly at every tap.
      for (std::size_t n = 39; n <= 119; ++n) {
        const double x = static_cast<double>(n) - t;
        const double expect = amp * std::sin(std::numbers::pi * x) / (std::numbers::pi * x) * 0.5 *
                              (1.0 + std::cos(std::numbers::pi * x / 41.0));
        CHECK(h[n] == doctest::Approx(expect).epsilon(1e-9));
      }
      double dc = 0.0;
      for (const double v : h) dc += v;
      CHECK(dc == doctest::Approx(amp).epsilon(1e-2));
    }
    SUBCASE("integer delay gives the exact peak amplitude") {
      const double d = 80.0 * 343.0 / fs;
      const Vec3 mic{2.0 + d, 3.0, 1.5};
      const auto h = compute_rir(room, 0.0, src, {mic}, 16000)[0];
      CHECK(argmax_abs(h) == 80);
      CHECK(h[80] == doctest::Approx(1.0 / (4.0 * std::numbers::pi * d)).epsilon(1e-12));
      CHECK(std::abs(h[79]) < 1e-15);
      CHECK(std::abs(h[81]) < 1e-15);
    }
  }

  TEST_CASE("equidistant microphones share the direct-path tap") {
    const Vec3 room{9.0, 8.5, 3.2};
    const Vec3 src{4.0, 4.0, 1.6};
    std::vector<Vec3> mics;
    for (const double az : {0.3, 1.9, 4.1}) {
      mics.push_back({src[0] + 2.2 * std::cos(az), src[1] + 2.2 * std::sin(az), 1.6});
    }
    for (const double rt : {0.0, 0.3}) {
      const auto h = compute_rir(room, rt, src, mics, 16000);
      // Direct path lies well before the first reflection here.
      std::vector<std::size_t> idx;
      for (const auto& x : h) {
        idx.push_back(argmax_abs(std::vector<double>(x.begin(), x.begin() + 120)));
      }
      CHECK(idx[0] == static_cast<std::size_t>(std::lround(2.2 / 343.0 * 16000)));
      CHECK(idx[1] == idx[0]);
      CHECK(idx[2] == idx[0]);
    }
  }

  TEST_CASE("direct-path delay within one sample of geometry") {
    const ProtocolRanges p;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const SceneSpec s = sample_scene(seed, p);
      const Vec3 src = s.trajectories[0].start;
      const auto h = compute_rir(s.room, 0.15, src, s.mics, 16000);
      for (std::size_t m = 0; m < s.mics.size(); ++m) {
        const double expect = distance(src, s.mics[m]) / 343.0 * 16000.0;
        CHECK(std::abs(static_cast<double>(argmax_abs(h[m])) - expect) <= 1.0);
      }
    }
  }

  TEST_CASE("schroeder estimate tracks the requested rt60") {
    const SceneSpec s = sample_scene(0, ProtocolRanges{});
    const auto h = compute_rir(s.room, 0.4, s.trajectories[0].start, s.mics, 16000);
    for (const auto& x : h) {
      const double est = schroeder_rt60(x, 16000);
      CHECK(est >= 0.32);
      CHECK(est <= 0.48);
    }
  }

  TEST_CASE("schroeder estimate of an exact exponential decay") {
    // Noise-free energy envelope decaying 60 dB in 0.5 s.
    std::vector<double> h(16000);
    for (std::size_t n = 0; n < h.size(); ++n) h[n] = std::pow(10.0, -3.0 * n / 8000.0);
    CHECK(schroeder_rt60(h, 16000) == doctest::Approx(0.5).epsilon(1e-3));
    CHECK_THROWS_AS(schroeder_rt60(std::vector<double>(10, 0.0), 16000), Error);
  }

  TEST_CASE("reflection coefficient") {
    const Vec3 room{9.0, 9.0, 3.5};
    CHECK(reflection_coefficient(room, 0.0) == 0.0);
    double prev = 0.0;
    for (const double rt : {0.1, 0.2, 0.4, 0.7, 1.5}) {
      const double b = reflection_coefficient(room, rt);
      CHECK(b > prev);
      CHECK(b < 1.0);
      prev = b;
    }
  }

  TEST_CASE("parallel rir accumulation equals the serial reference") {
    const SceneSpec s = sample_scene(5, ProtocolRanges{});
    const auto a = compute_rir(s.room, 0.3, s.trajectories[1].start, s.mics, 16000);
    const auto b = reference::compute_rir(s.room, 0.3, s.trajectories[1].start, s.mics, 16000);
    CHECK(a == b);
  }

  TEST_CASE("rir input validation and length") {
    const Vec3 room{8.0, 8.0, 3.0};
    CHECK_THROWS_AS(compute_rir(room, 0.3, {9.0, 1.0, 1.0}, {{1.0, 1.0, 1.0}}, 16000), Error);
    CHECK_THROWS_AS(compute_rir(room, 0.3, {1.0, 1.0, 1.0}, {{1.0, 1.0, -1.0}}, 16000), Error);
    const Vec3 src{2.0, 2.0, 1.5};
    const std::vector<Vec3> mics{{4.0, 5.0, 1.2}, {4.05, 5.0, 1.2}};
    const double far = std::max(distance(src, mics[0]), distance(src, mics[1]));
    const std::size_t len = rir_length(room, 0.3, src, mics, 16000);
    CHECK(len == 4800 + static_cast<std::size_t>(std::ceil(far / 343.0 * 16000)) + 41);
    CHECK(len >= static_cast<std::size_t>(std::lround(far / 343.0 * 16000)));
    CHECK(compute_rir(room, 0.3, src, mics, 16000)[1].size() == len);
    CHECK(compute_rir(room, 0.3, src, mics, 16000, 9000)[0].size() == 9000);
  }

  TEST_CASE("waypoint plans") {
    Trajectory t{{1.0, 2.0, 1.5}, {0.5, -0.25, 0.0}, 1.0};
    const auto plan = plan_waypoints(t, 16000, 2048);
    std::vector<std::size_t> expect;
    for (std::size_t k = 0; k <= 7; ++k) expect.push_back(2048 * k);
    expect.push_back(15999);
    CHECK(plan.times == expect);
    for (std::size_t k = 0; k < plan.times.size(); ++k) {
      const double sec = plan.times[k] / 16000.0;
      CHECK(plan.positions[k][0] == doctest::Approx(1.0 + 0.5 * sec));
      CHECK(plan.positions[k][1] == doctest::Approx(2.0 - 0.25 * sec));
    }
    t.duration = 0.1;
    CHECK(plan_waypoints(t, 16000, 2048).times == std::vector<std::size_t>{0, 1599});
    t.velocity = {0.0, 0.0, 0.0};
    t.duration = 2.0;
    const auto still = plan_waypoints(t, 16000, 2048);
    for (const auto& pos : still.positions) CHECK(pos == t.start);
    CHECK_THROWS_AS(plan_waypoints(t, 16000, 0), Error);
  }

  TEST_CASE("static rendering equals lti convolution") {
    Rng rng(11);
    const SceneSpec s = sample_scene(2, quick_protocol());
    const Vec3 src = s.trajectories[0].start;
    const MicRirs h = compute_rir(s.room, 0.15, src, s.mics, 16000);
    const Waveform x = random_wave(1, 6000, rng);
    const std::vector<std::size_t> times{0, 2048, 4096, 5999};
    const Waveform y = render_moving(x, constant_set(times, h));
    REQUIRE(y.channels() == s.mics.size());
    REQUIRE(y.length() == x.length());
    for (std::size_t m = 0; m < h.size(); ++m) {
      const auto ref = convolve_truncated(x.channel(0), h[m]);
      CHECK(rel_diff(y.channel(m), ref) < 1e-6);
      double ey = 0.0, er = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        ey += y.channel(m)[i] * y.channel(m)[i];
        er += ref[i] * ref[i];
      }
      CHECK(ey == doctest::Approx(er).epsilon(1e-9));
    }
  }

  TEST_CASE("unit impulse responses pass the source through") {
    Rng rng(3);
    const Waveform x = random_wave(1, 5000, rng);
    MicRirs delta(2, std::vector<double>(16, 0.0));
    delta[0][0] = delta[1][0] = 1.0;
    for (const auto mode : {RenderMode::kCrossfade, RenderMode::kExact}) {
      const Waveform y = render_moving(x, constant_set({0, 2048, 4096, 4999}, delta), mode);
      for (std::size_t m = 0; m < 2; ++m) {
        for (std::size_t i = 0; i < x.length(); ++i) {
          CHECK(y.channel(m)[i] == doctest::Approx(x.channel(0)[i]).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("two-waypoint blend of delayed impulses") {
    Rng rng(5);
    const Waveform x = random_wave(1, 101, rng);
    RirSet set;
    set.times = {0, 100};
    set.sample_rate = 16000;
    set.taps = {MicRirs{std::vector<double>(8, 0.0)}, MicRirs{std::vector<double>(8, 0.0)}};
    set.taps[0][0][0] = 1.0;
    set.taps[1][0][4] = 1.0;
    for (const auto mode : {RenderMode::kCrossfade, RenderMode::kExact}) {
      const Waveform y = render_moving(x, set, mode);
      const auto xs = x.channel(0);
      CHECK(y.channel(0)[50] == doctest::Approx(0.5 * xs[50] + 0.5 * xs[46]).epsilon(1e-12));
      CHECK(y.channel(0)[0] == doctest::Approx(xs[0]).epsilon(1e-12));
      CHECK(y.channel(0)[100] == doctest::Approx(xs[96]).epsilon(1e-12));
      CHECK(y.channel(0)[25] == doctest::Approx(0.75 * xs[25] + 0.25 * xs[21]).epsilon(1e-12));
    }
  }

  TEST_CASE("crossfade rendering matches the per-sample time-variant sum") {
    ProtocolRanges p = quick_protocol();
    p.speed = {0.8, 1.0};
    p.duration = {0.15, 0.15};
    const SceneSpec s = sample_scene(9, p);
    const RirSet set = compute_rir_set(s, 0, 512);
    CHECK(set.waypoints() == 6);
    Rng rng(2);
    const Waveform x = random_wave(1, s.trajectories[0].samples(16000), rng);
    const Waveform a = render_moving(x, set, RenderMode::kCrossfade);
    const Waveform b = render_moving(x, set, RenderMode::kExact);
    for (std::size_t m = 0; m < a.channels(); ++m) CHECK(rel_diff(a.channel(m), b.channel(m)) < 1e-9);
  }

  TEST_CASE("render input validation") {
    Rng rng(1);
    MicRirs delta(1, std::vector<double>(4, 0.0));
    delta[0][0] = 1.0;
    CHECK_THROWS_WITH_AS(render_moving(random_wave(1, 100, rng), constant_set({0, 50, 98}, delta)),
                         doctest::Contains("waypoint/source length mismatch"), Error);
    CHECK_THROWS_AS(render_moving(random_wave(2, 100, rng), constant_set({0, 99}, delta)), Error);
    CHECK_THROWS_AS(render_moving(random_wave(1, 100, rng), constant_set({0, 60, 50, 99}, delta)),
                    Error);
  }

  TEST_CASE("mix_to_snr hits the target and decomposes exactly") {
    Rng rng(21);
    SceneSpec s = sample_scene(4, ProtocolRanges{});
    s.source_gain_db = {0.0, 0.0};
    const std::vector<Waveform> rendered{random_wave(3, 48000, rng), random_wave(3, 32000, rng)};
    const Waveform noise = random_wave(3, 32000, rng);
    for (const double snr : {0.0, 10.0, 3.7}) {
      s.target_snr_db = snr;
      const Mixture mix = mix_to_snr(rendered, noise, s);
      CHECK(mix.mixture.length() == 32000);
      const double ps = 0.5 * (power(mix.sources[0]) + power(mix.sources[1]));
      const double pn = power(mix.noise);
      CHECK(std::abs(10.0 * std::log10(ps / pn) - snr) < 0.01);
      if (snr == 10.0) CHECK(ps / pn == doctest::Approx(10.0).epsilon(1e-12));
      for (std::size_t m = 0; m < 3; ++m) {
        for (std::size_t i = 0; i < 32000; ++i) {
          const double sum = mix.sources[0].channel(m)[i] + mix.sources[1].channel(m)[i];
          REQUIRE(mix.mixture.channel(m)[i] == sum + mix.noise.channel(m)[i]);
        }
      }
    }
  }

  TEST_CASE("mix_to_snr gains, looping and errors") {
    Rng rng(8);
    SceneSpec s = sample_scene(4, ProtocolRanges{});
    s.source_gain_db = {0.0, -4.0};
    s.target_snr_db = 5.0;
    const std::vector<Waveform> rendered{random_wave(2, 300, rng), random_wave(2, 300, rng)};
    const Waveform short_noise = random_wave(2, 70, rng);
    const Mixture mix = mix_to_snr(rendered, short_noise, s);
    CHECK(mix.noise.channel(1)[75] == doctest::Approx(mix.noise_gain * short_noise.channel(1)[5]));
    CHECK(mix.sources[1].channel(0)[9] ==
          doctest::Approx(std::pow(10.0, -0.2) * rendered[1].channel(0)[9]));
    CHECK_THROWS_WITH_AS(mix_to_snr(rendered, Waveform(2, 300, 16000), s), "degenerate noise", Error);
    s.target_snr_db = std::numeric_limits<double>::infinity();
    CHECK(mix_to_snr(rendered, Waveform(2, 300, 16000), s).noise_gain == 0.0);
    CHECK_THROWS_AS(mix_to_snr(rendered, random_wave(3, 300, rng), s), Error);
  }

  TEST_CASE("synthetic signals") {
    Rng a(4), b(4);
    const Waveform x = synth_speech(16000, 16000, a);
    CHECK(x == synth_speech(16000, 16000, b));
    CHECK(power(x) == doctest::Approx(1.0));
    // Syllabic envelope: short-time power varies strongly.
    double lo = 1e9, hi = 0.0;
    for (std::size_t f = 0; f + 400 <= x.length(); f += 400) {
      double e = 0.0;
      for (std::size_t i = f; i < f + 400; ++i) e += x.channel(0)[i] * x.channel(0)[i];
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
    CHECK(hi / lo > 100.0);
    const Waveform n = white_noise(3, 1000, 16000, a);
    for (std::size_t c = 0; c < 3; ++c) CHECK(power(n, c) == doctest::Approx(1.0));
  }

  TEST_CASE("rendered scenes are deterministic and min-mode") {
    const SceneSpec s = sample_scene(12, quick_protocol());
    const RenderedScene a = render_scene(s);
    const RenderedScene b = render_scene(s);
    CHECK(a.mix.mixture == b.mix.mixture);
    CHECK(a.mix.mixture.length() == s.mixture_length());
    CHECK(a.mix.mixture.channels() == 6);
    CHECK(a.dry.size() == 2);
    const double ps = 0.5 * (power(a.mix.sources[0]) + power(a.mix.sources[1]));
    CHECK(std::abs(10.0 * std::log10(ps / power(a.mix.noise)) - s.target_snr_db) < 0.01);
  }
}
