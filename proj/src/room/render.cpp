#include "ps2/room/render.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include "ps2/common/error.hpp"
#include "ps2/signal/fft.hpp"

namespace ps2::room {

using signal::Waveform;

namespace {

// Rising weight of waypoint k on [t_{k-1}, t_k], falling on [t_k, t_{k+1}].
double crossfade_weight(const std::vector<std::size_t>& times, std::size_t k, std::size_t n) {
  if (n == times[k]) return 1.0;
  if (n < times[k]) {
    return static_cast<double>(n - times[k - 1]) / static_cast<double>(times[k] - times[k - 1]);
  }
  return 1.0 - static_cast<double>(n - times[k]) / static_cast<double>(times[k + 1] - times[k]);
}

Waveform render_crossfade(std::span<const double> x, const RirSet& rirs) {
  const std::size_t n_out = x.size(), mics = rirs.mics(), taps = rirs.length();
  const std::size_t K = rirs.waypoints();
  Waveform out(mics, n_out, rirs.sample_rate);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t a = k > 0 ? rirs.times[k - 1] : rirs.times[k];
    const std::size_t b = k + 1 < K ? rirs.times[k + 1] : rirs.times[k];
    // Input segment x[a - taps + 1 .. b] (zeros before 0) convolved with h
    // yields y[a..b] at offsets taps - 1 .. taps - 1 + b - a.
    const std::size_t seg = b - a + taps;
    const std::size_t fft_n = std::bit_ceil(seg + taps - 1);
    const signal::RealFft fft(fft_n);
    std::vector<double> buf(fft_n, 0.0);
    for (std::size_t i = 0; i < seg; ++i) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(a + i) - static_cast<std::ptrdiff_t>(taps - 1);
      if (src >= 0) buf[i] = x[static_cast<std::size_t>(src)];
    }
    std::vector<std::complex<double>> xf(fft.bins());
    fft.forward(buf.data(), xf.data());
    const auto m_count = static_cast<std::ptrdiff_t>(mics);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t m = 0; m < m_count; ++m) {
      std::vector<double> hb(fft_n, 0.0), y(fft_n);
      const auto& h = rirs.taps[k][static_cast<std::size_t>(m)];
      std::copy(h.begin(), h.end(), hb.begin());
      std::vector<std::complex<double>> hf(fft.bins());
      fft.forward(hb.data(), hf.data());
      for (std::size_t f = 0; f < hf.size(); ++f) hf[f] *= xf[f];
      fft.inverse(hf.data(), y.data());
      auto dst = out.channel(static_cast<std::size_t>(m));
      for (std::size_t n = a; n <= b; ++n) {
        dst[n] += crossfade_weight(rirs.times, k, n) * y[taps - 1 + n - a];
      }
    }
  }
  return out;
}

Waveform render_exact(std::span<const double> x, const RirSet& rirs) {
  const std::size_t n_out = x.size(), mics = rirs.mics(), taps = rirs.length();
  Waveform out(mics, n_out, rirs.sample_rate);
  std::size_t k = 0;
  for (std::size_t n = 0; n < n_out; ++n) {
    while (k + 1 < rirs.waypoints() && rirs.times[k + 1] <= n) ++k;
    const bool last = k + 1 == rirs.waypoints();
    const double w = last ? 0.0
                          : static_cast<double>(n - rirs.times[k]) /
                                static_cast<double>(rirs.times[k + 1] - rirs.times[k]);
    for (std::size_t m = 0; m < mics; ++m) {
      const auto& h0 = rirs.taps[k][m];
      const auto& h1 = last ? h0 : rirs.taps[k + 1][m];
      double acc = 0.0;
      for (std::size_t l = 0; l < taps && l <= n; ++l) {
        acc += ((1.0 - w) * h0[l] + w * h1[l]) * x[n - l];
      }
      out.channel(m)[n] = acc;
    }
  }
  return out;
}

}  // namespace

Waveform render_moving(const Waveform& source, const RirSet& rirs, RenderMode mode) {
  require(source.channels() == 1, ErrorKind::kData, "render: source must be single-channel");
  rirs.validate();
  require(rirs.times.front() == 0 && rirs.times.back() + 1 == source.length(), ErrorKind::kData,
          "render: waypoint/source length mismatch (waypoints end at " +
              std::to_string(rirs.times.back()) + ", source has " +
              std::to_string(source.length()) + " samples)");
  require(rirs.sample_rate == source.sample_rate(), ErrorKind::kData,
          "render: sample rate mismatch");
  return mode == RenderMode::kExact ? render_exact(source.channel(0), rirs)
                                    : render_crossfade(source.channel(0), rirs);
}

std::vector<double> convolve_truncated(std::span<const double> x, std::span<const double> h) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    double acc = 0.0;
    for (std::size_t l = 0; l < h.size() && l <= n; ++l) acc += h[l] * x[n - l];
    y[n] = acc;
  }
  return y;
}

double power(const Waveform& w, std::size_t c) {
  double e = 0.0;
  for (const double v : w.channel(c)) e += v * v;
  return e / static_cast<double>(w.length());
}

Mixture mix_to_snr(const std::vector<Waveform>& rendered, const Waveform& noise,
                   const SceneSpec& scene) {
  require(!rendered.empty() && rendered.size() == scene.source_gain_db.size(), ErrorKind::kData,
          "mix: one rendered signal and one gain per source required");
  const std::size_t mics = rendered.front().channels();
  std::size_t n = rendered.front().length();
  for (const Waveform& r : rendered) {
    require(r.channels() == mics, ErrorKind::kData, "mix: channel count mismatch between sources");
    n = std::min(n, r.length());
  }
  require(noise.channels() == mics, ErrorKind::kData, "mix: noise channel count mismatch");

  Mixture out;
  double source_power = 0.0;
  for (std::size_t c = 0; c < rendered.size(); ++c) {
    Waveform s = rendered[c].truncated(n);
    const double g = std::pow(10.0, scene.source_gain_db[c] / 20.0);
    for (double& v : s.samples()) v *= g;
    source_power += power(s, 0) / static_cast<double>(rendered.size());
    out.sources.push_back(std::move(s));
  }
  require(source_power > 0.0, ErrorKind::kData, "mix: silent sources");

  Waveform looped(mics, n, noise.sample_rate());
  for (std::size_t m = 0; m < mics; ++m) {
    const auto src = noise.channel(m);
    auto dst = looped.channel(m);
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[i % src.size()];
  }
  const double snr = scene.target_snr_db;
  require(!std::isnan(snr) && snr != -std::numeric_limits<double>::infinity(), ErrorKind::kData,
          "mix: target SNR must be a number above -inf");
  if (std::isinf(snr)) {
    out.noise_gain = 0.0;
  } else {
    const double noise_power = power(looped, 0);
    require(noise_power > 0.0, ErrorKind::kData, "degenerate noise");
    out.noise_gain = std::sqrt(source_power / (noise_power * std::pow(10.0, snr / 10.0)));
  }
  for (double& v : looped.samples()) v *= out.noise_gain;
  out.noise = std::move(looped);

  out.mixture = Waveform(mics, n, out.noise.sample_rate());
  for (std::size_t m = 0; m < mics; ++m) {
    auto dst = out.mixture.channel(m);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (const Waveform& s : out.sources) acc += s.channel(m)[i];
      dst[i] = acc + out.noise.channel(m)[i];
    }
  }
  return out;
}

Waveform synth_speech(std::size_t length, int fs, Rng& rng) {
  Waveform out(1, length, fs);
  auto y = out.channel(0);
  double y1 = 0.0, y2 = 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    const double v = rng.normal() + 1.3 * y1 - 0.4 * y2;
    y2 = y1;
    y1 = v;
    y[i] = v;
  }
  std::size_t pos = 0;
  std::vector<double> env(length, 0.02);
  while (pos < length) {
    const auto burst = static_cast<std::size_t>(rng.uniform(0.1, 0.3) * fs);
    const double level = rng.uniform(0.3, 1.0);
    for (std::size_t i = 0; i < burst && pos + i < length; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / burst);
      env[pos + i] += level * w;
    }
    pos += burst + static_cast<std::size_t>(rng.uniform(0.0, 0.1) * fs);
  }
  for (std::size_t i = 0; i < length; ++i) y[i] *= env[i];
  const double p = power(out);
  for (double& v : y) v /= std::sqrt(p);
  return out;
}

Waveform white_noise(std::size_t channels, std::size_t length, int fs, Rng& rng) {
  Waveform out(channels, length, fs);
  for (double& v : out.samples()) v = rng.normal();
  for (std::size_t c = 0; c < channels; ++c) {
    const double p = power(out, c);
    for (double& v : out.channel(c)) v /= std::sqrt(p);
  }
  return out;
}

RenderedScene render_scene(const SceneSpec& scene, std::size_t hop, RenderMode mode) {
  Rng rng(scene.seed ^ 0x736f75726365ULL);
  std::vector<Waveform> dry;
  for (const Trajectory& t : scene.trajectories) {
    dry.push_back(synth_speech(t.samples(scene.sample_rate), scene.sample_rate, rng));
  }
  const Waveform noise =
      white_noise(scene.mics.size(), scene.mixture_length(), scene.sample_rate, rng);
  return render_scene(scene, std::move(dry), noise, hop, mode);
}

RenderedScene render_scene(const SceneSpec& scene, std::vector<Waveform> dry, const Waveform& noise,
                           std::size_t hop, RenderMode mode) {
  require(dry.size() == scene.sources(), ErrorKind::kData, "render: one dry signal per source");
  std::vector<Waveform> rendered;
  for (std::size_t c = 0; c < dry.size(); ++c) {
    require(dry[c].length() == scene.trajectories[c].samples(scene.sample_rate), ErrorKind::kData,
            "render: source " + std::to_string(c) + " length does not match its trajectory");
    rendered.push_back(render_moving(dry[c], compute_rir_set(scene, c, hop), mode));
  }
  RenderedScene out;
  out.mix = mix_to_snr(rendered, noise, scene);
  out.dry = std::move(dry);
  return out;
}

}  // namespace ps2::room
