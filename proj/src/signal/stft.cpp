#include "ps2/signal/stft.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ps2/common/error.hpp"
#include "ps2/signal/fft.hpp"

namespace ps2::signal {

namespace {

constexpr double kEnvelopeFloor = 1e-11;

std::size_t padding(const StftConfig& cfg) { return cfg.fft_size / 2; }

void check_geometry(const ComplexSpectrogram& spec, const StftConfig& cfg) {
  require(spec.fft_size() == cfg.fft_size && spec.hop() == cfg.hop &&
              spec.bins() == cfg.bins(),
          ErrorKind::kData,
          "spectrogram geometry (fft " + std::to_string(spec.fft_size()) +
              ", hop " + std::to_string(spec.hop()) +
              ") does not match stft config (fft " +
              std::to_string(cfg.fft_size) + ", hop " +
              std::to_string(cfg.hop) + ")");
}

}  // namespace

void StftConfig::validate() const {
  require(fft_size >= 2, ErrorKind::kUsage, "fft_size must be >= 2");
  require(hop >= 1 && hop <= fft_size, ErrorKind::kUsage,
          "hop must be in [1, fft_size]");
}

std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.fft_size, 1.0);
  if (cfg.window == WindowKind::kHannPeriodic) {
    const double n = static_cast<double>(cfg.fft_size);
    for (std::size_t i = 0; i < cfg.fft_size; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
    }
  }
  return w;
}

ComplexSpectrogram::ComplexSpectrogram(std::size_t channels, std::size_t frames,
                                       std::size_t fft_size, std::size_t hop,
                                       int sample_rate)
    : channels_(channels),
      frames_(frames),
      bins_(fft_size / 2 + 1),
      fft_size_(fft_size),
      hop_(hop),
      sample_rate_(sample_rate),
      data_(channels * frames * bins_) {}

ComplexSpectrogram stft(const Waveform& wave, const StftConfig& cfg) {
  cfg.validate();
  require(wave.length() >= cfg.fft_size, ErrorKind::kData,
          "input too short: " + std::to_string(wave.length()) +
              " samples < fft_size " + std::to_string(cfg.fft_size));
  const std::size_t frames = cfg.frames(wave.length());
  const std::size_t n = cfg.fft_size;
  const std::size_t pad = padding(cfg);
  const auto window = make_window(cfg);
  const RealFft fft(n);
  ComplexSpectrogram spec(wave.channels(), frames, n, cfg.hop,
                          wave.sample_rate());
  std::vector<double> buf(n);
  for (std::size_t c = 0; c < wave.channels(); ++c) {
    const auto x = wave.channel(c);
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t start = t * cfg.hop;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = start + i;
        const bool inside = p >= pad && p - pad < x.size();
        buf[i] = inside ? window[i] * x[p - pad] : 0.0;
      }
      fft.forward(buf.data(), &spec.at(c, t, 0));
    }
  }
  return spec;
}

std::vector<double> window_envelope(const StftConfig& cfg,
                                    std::size_t num_frames) {
  const auto window = make_window(cfg);
  std::vector<double> env((num_frames - 1) * cfg.hop + cfg.fft_size, 0.0);
  for (std::size_t t = 0; t < num_frames; ++t) {
    for (std::size_t i = 0; i < cfg.fft_size; ++i) {
      env[t * cfg.hop + i] += window[i] * window[i];
    }
  }
  return env;
}

void istft_frames(std::span<const std::complex<double>> frames,
                  std::size_t num_frames, const StftConfig& cfg,
                  std::span<double> out) {
  const std::size_t n = cfg.fft_size;
  const std::size_t bins = cfg.bins();
  require(frames.size() == num_frames * bins, ErrorKind::kData,
          "frame buffer does not match num_frames x bins");
  const auto window = make_window(cfg);
  const auto env = window_envelope(cfg, num_frames);
  const RealFft fft(n);
  std::vector<double> ola(env.size(), 0.0);
  std::vector<double> buf(n);
  for (std::size_t t = 0; t < num_frames; ++t) {
    fft.inverse(frames.data() + t * bins, buf.data());
    for (std::size_t i = 0; i < n; ++i) ola[t * cfg.hop + i] += window[i] * buf[i];
  }
  const std::size_t pad = padding(cfg);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t p = i + pad;
    out[i] = (p < ola.size() && env[p] > kEnvelopeFloor) ? ola[p] / env[p] : 0.0;
  }
}

void istft_frames_adjoint(std::span<const double> grad_out,
                          std::size_t num_frames, const StftConfig& cfg,
                          std::span<std::complex<double>> grad_frames) {
  const std::size_t n = cfg.fft_size;
  const std::size_t bins = cfg.bins();
  require(grad_frames.size() == num_frames * bins, ErrorKind::kData,
          "frame buffer does not match num_frames x bins");
  const auto window = make_window(cfg);
  const auto env = window_envelope(cfg, num_frames);
  const std::size_t pad = padding(cfg);
  std::vector<double> g_ola(env.size(), 0.0);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const std::size_t p = i + pad;
    if (p < g_ola.size() && env[p] > kEnvelopeFloor) g_ola[p] = grad_out[i] / env[p];
  }
  const RealFft fft(n);
  std::vector<double> seg(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  const bool has_nyquist = n % 2 == 0;
  for (std::size_t t = 0; t < num_frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) seg[i] = g_ola[t * cfg.hop + i] * window[i];
    std::complex<double>* g = grad_frames.data() + t * bins;
    fft.forward(seg.data(), g);
    // Adjoint of the 1/n-normalized Hermitian inverse: interior bins count
    // twice, DC (and Nyquist) once with no imaginary contribution.
    for (std::size_t k = 0; k < bins; ++k) {
      const bool edge = k == 0 || (has_nyquist && k == bins - 1);
      g[k] = edge ? std::complex<double>(g[k].real() * inv_n, 0.0)
                  : g[k] * (2.0 * inv_n);
    }
  }
}

Waveform istft(const ComplexSpectrogram& spec, const StftConfig& cfg,
               std::size_t out_length) {
  cfg.validate();
  check_geometry(spec, cfg);
  require(spec.frames() >= 1, ErrorKind::kData, "spectrogram has no frames");
  Waveform out(spec.channels(), out_length, spec.sample_rate());
  for (std::size_t c = 0; c < spec.channels(); ++c) {
    istft_frames(spec.channel(c), spec.frames(), cfg, out.channel(c));
  }
  return out;
}

FeatureGrid to_ri(const ComplexSpectrogram& spec) {
  FeatureGrid g{2 * spec.channels(), spec.frames(), spec.bins(), {}};
  g.data.resize(g.channels * g.frames * g.bins);
  for (std::size_t m = 0; m < spec.channels(); ++m) {
    for (std::size_t t = 0; t < spec.frames(); ++t) {
      for (std::size_t f = 0; f < spec.bins(); ++f) {
        const auto z = spec.at(m, t, f);
        g.at(2 * m, t, f) = z.real();
        g.at(2 * m + 1, t, f) = z.imag();
      }
    }
  }
  return g;
}

ComplexSpectrogram from_ri(const FeatureGrid& grid, std::size_t fft_size,
                           std::size_t hop, int sample_rate) {
  require(grid.channels % 2 == 0 && grid.bins == fft_size / 2 + 1,
          ErrorKind::kData, "RI grid geometry mismatch");
  ComplexSpectrogram spec(grid.channels / 2, grid.frames, fft_size, hop,
                          sample_rate);
  for (std::size_t m = 0; m < spec.channels(); ++m)
    for (std::size_t t = 0; t < spec.frames(); ++t)
      for (std::size_t f = 0; f < spec.bins(); ++f)
        spec.at(m, t, f) = {grid.at(2 * m, t, f), grid.at(2 * m + 1, t, f)};
  return spec;
}

double wrap_phase(double x) {
  double r = std::remainder(x, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

namespace {

double phase_of(std::complex<double> z) {
  if (z.real() == 0.0 && z.imag() == 0.0) return 0.0;
  // Normalizing -0.0 keeps the negative real axis at +pi.
  const double phi = std::atan2(z.imag() + 0.0, z.real());
  return phi == -std::numbers::pi ? std::numbers::pi : phi;
}

}  // namespace

FeatureGrid to_mp(const ComplexSpectrogram& spec) {
  FeatureGrid g{2 * spec.channels(), spec.frames(), spec.bins(), {}};
  g.data.resize(g.channels * g.frames * g.bins);
  for (std::size_t m = 0; m < spec.channels(); ++m) {
    for (std::size_t t = 0; t < spec.frames(); ++t) {
      for (std::size_t f = 0; f < spec.bins(); ++f) {
        const auto z = spec.at(m, t, f);
        g.at(2 * m, t, f) = std::abs(z);
        g.at(2 * m + 1, t, f) = phase_of(z);
      }
    }
  }
  return g;
}

ComplexSpectrogram from_mp(const FeatureGrid& grid, std::size_t fft_size,
                           std::size_t hop, int sample_rate) {
  require(grid.channels % 2 == 0 && grid.bins == fft_size / 2 + 1,
          ErrorKind::kData, "MP grid geometry mismatch");
  ComplexSpectrogram spec(grid.channels / 2, grid.frames, fft_size, hop,
                          sample_rate);
  for (std::size_t m = 0; m < spec.channels(); ++m)
    for (std::size_t t = 0; t < spec.frames(); ++t)
      for (std::size_t f = 0; f < spec.bins(); ++f)
        spec.at(m, t, f) = std::polar(grid.at(2 * m, t, f), grid.at(2 * m + 1, t, f));
  return spec;
}

FeatureGrid itd_map(const ComplexSpectrogram& spec,
                    std::pair<std::size_t, std::size_t> mics) {
  const auto [a, b] = mics;
  require(a != b, ErrorKind::kUsage, "itd_map needs two distinct microphones");
  require(a < spec.channels() && b < spec.channels(), ErrorKind::kUsage,
          "itd_map microphone index out of range");
  require(spec.bins() >= 2, ErrorKind::kData, "itd_map needs at least 2 bins");
  FeatureGrid g{1, spec.frames(), spec.bins(), {}};
  g.data.assign(g.frames * g.bins, 0.0);
  const double bin_hz =
      static_cast<double>(spec.sample_rate()) / static_cast<double>(spec.fft_size());
  for (std::size_t t = 0; t < spec.frames(); ++t) {
    for (std::size_t f = 1; f < spec.bins(); ++f) {
      const double dphi = wrap_phase(phase_of(spec.at(a, t, f)) - phase_of(spec.at(b, t, f)));
      g.at(0, t, f) = dphi / (2.0 * std::numbers::pi * bin_hz * static_cast<double>(f));
    }
  }
  return g;
}

}  // namespace ps2::signal
