#include "ps2/eval/bss.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>

#include "ps2/common/error.hpp"
#include "ps2/signal/fft.hpp"

namespace ps2::eval {

namespace {

using Spectrum = std::vector<std::complex<double>>;

Spectrum spectrum(const signal::RealFft& fft, std::span<const double> x) {
  std::vector<double> buf(fft.size(), 0.0);
  std::copy(x.begin(), x.end(), buf.begin());
  Spectrum out(fft.bins());
  fft.forward(buf.data(), out.data());
  return out;
}

// c[k] = sum_m a[m] b[m + k], returned as a circular buffer (k < 0 at n + k).
std::vector<double> correlate(const signal::RealFft& fft, const Spectrum& a, const Spectrum& b) {
  Spectrum prod(a.size());
  for (std::size_t f = 0; f < a.size(); ++f) prod[f] = std::conj(a[f]) * b[f];
  std::vector<double> out(fft.size());
  fft.inverse(prod.data(), out.data());
  return out;
}

double lag(const std::vector<double>& circ, std::ptrdiff_t k) {
  const auto n = static_cast<std::ptrdiff_t>(circ.size());
  return circ[static_cast<std::size_t>((k % n + n) % n)];
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (const double v : x) e += v * v;
  return e;
}

// Least-squares projection of the padded estimate onto the delays of the
// chosen references.
std::vector<double> project(const signal::RealFft& fft, const std::vector<Spectrum>& ref_f,
                            const std::vector<std::vector<std::vector<double>>>& xcorr,
                            const std::vector<std::vector<double>>& est_corr,
                            const std::vector<std::size_t>& which, std::size_t L, double ridge,
                            std::size_t out_len) {
  const std::size_t n = which.size() * L;
  Eigen::MatrixXd G(n, n);
  Eigen::VectorXd D(n);
  for (std::size_t p = 0; p < which.size(); ++p) {
    const std::size_t i = which[p];
    for (std::size_t a = 0; a < L; ++a) {
      D(p * L + a) = est_corr[i][a];
      for (std::size_t q = 0; q < which.size(); ++q) {
        const std::size_t j = which[q];
        for (std::size_t b = 0; b < L; ++b) {
          G(p * L + a, q * L + b) =
              lag(xcorr[i][j], static_cast<std::ptrdiff_t>(a) - static_cast<std::ptrdiff_t>(b));
        }
      }
    }
  }
  const double mean_diag = G.diagonal().mean();
  G.diagonal().array() += ridge * mean_diag;
  const Eigen::LLT<Eigen::MatrixXd> llt(G);
  require(llt.info() == Eigen::Success, ErrorKind::kNumerical, "bss_eval: Gram matrix not positive definite");
  const Eigen::VectorXd c = llt.solve(D);

  Spectrum acc(fft.bins(), {0.0, 0.0});
  for (std::size_t p = 0; p < which.size(); ++p) {
    std::vector<double> coef(c.data() + p * L, c.data() + (p + 1) * L);
    const Spectrum cf = spectrum(fft, coef);
    const Spectrum& rf = ref_f[which[p]];
    for (std::size_t f = 0; f < acc.size(); ++f) acc[f] += cf[f] * rf[f];
  }
  std::vector<double> out(fft.size());
  fft.inverse(acc.data(), out.data());
  out.resize(out_len);
  return out;
}

}  // namespace

double capped_db(double num, double den) {
  if (den <= 0.0) return num > 0.0 ? kMetricCapDb : -kMetricCapDb;
  if (num <= 0.0) return -kMetricCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kMetricCapDb, kMetricCapDb);
}

BssDecomposition bss_decompose(std::span<const double> est,
                               const std::vector<std::span<const double>>& refs,
                               std::size_t target, const BssOptions& options) {
  const std::size_t N = est.size(), L = options.filter_len;
  require(L >= 1, ErrorKind::kUsage, "bss_eval: filter length must be >= 1");
  require(N >= 1 && !refs.empty(), ErrorKind::kData, "bss_eval: empty input");
  require(target < refs.size(), ErrorKind::kUsage, "bss_eval: target index out of range");
  for (const auto& r : refs) {
    require(r.size() == N, ErrorKind::kData, "bss_eval: estimate and references differ in length");
    require(std::any_of(r.begin(), r.end(), [](double v) { return v != 0.0; }), ErrorKind::kData,
            "bss_eval: all-zero reference");
  }
  const std::size_t out_len = N + L - 1;
  const signal::RealFft fft(std::bit_ceil(out_len + L));
  std::vector<Spectrum> ref_f;
  for (const auto& r : refs) ref_f.push_back(spectrum(fft, r));
  const Spectrum est_f = spectrum(fft, est);
  std::vector<std::vector<std::vector<double>>> xcorr(refs.size());
  std::vector<std::vector<double>> est_corr;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    for (std::size_t j = 0; j < refs.size(); ++j) xcorr[i].push_back(correlate(fft, ref_f[i], ref_f[j]));
    est_corr.push_back(correlate(fft, ref_f[i], est_f));
  }

  std::vector<std::size_t> all(refs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  BssDecomposition d;
  d.target = project(fft, ref_f, xcorr, est_corr, {target}, L, options.ridge, out_len);
  const std::vector<double> p_all = project(fft, ref_f, xcorr, est_corr, all, L, options.ridge, out_len);
  d.interf.resize(out_len);
  d.artif.resize(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    d.interf[n] = p_all[n] - d.target[n];
    d.artif[n] = (n < N ? est[n] : 0.0) - p_all[n];
  }
  std::vector<double> distortion(out_len), target_interf(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    distortion[n] = d.interf[n] + d.artif[n];
    target_interf[n] = d.target[n] + d.interf[n];
  }
  const double et = energy(d.target);
  d.metrics.sdr = capped_db(et, energy(distortion));
  d.metrics.sir = capped_db(et, energy(d.interf));
  d.metrics.sar = capped_db(energy(target_interf), energy(d.artif));
  return d;
}

BssMetrics bss_eval(std::span<const double> est, const std::vector<std::span<const double>>& refs,
                    std::size_t target, const BssOptions& options) {
  return bss_decompose(est, refs, target, options).metrics;
}

}  // namespace ps2::eval
