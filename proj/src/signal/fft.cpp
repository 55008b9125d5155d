#include "ps2/signal/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <vector>

#include "ps2/common/error.hpp"

namespace ps2::signal {

struct RealFft::Plans {
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
  ~Plans() {
    if (r2c) fftw_destroy_plan(r2c);
    if (c2r) fftw_destroy_plan(c2r);
  }
};

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::shared_ptr<const RealFft::Plans> plans_for(std::size_t n);

}  // namespace

RealFft::RealFft(std::size_t n) : n_(n) {
  require(n >= 2, ErrorKind::kUsage, "fft size must be >= 2");
  plans_ = plans_for(n);
}

void RealFft::forward(const double* in, std::complex<double>* out) const {
  // The new-array execute interface never writes to the input for r2c.
  fftw_execute_dft_r2c(plans_->r2c, const_cast<double*>(in),
                       reinterpret_cast<fftw_complex*>(out));
}

void RealFft::inverse(const std::complex<double>* in, double* out) const {
  // c2r destroys its input, so work on a copy.
  std::vector<std::complex<double>> tmp(in, in + bins());
  fftw_execute_dft_c2r(plans_->c2r, reinterpret_cast<fftw_complex*>(tmp.data()),
                       out);
  const double scale = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] *= scale;
}

namespace {

std::shared_ptr<const RealFft::Plans> plans_for(std::size_t n) {
  static std::map<std::size_t, std::shared_ptr<const RealFft::Plans>> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(n);
  std::vector<std::complex<double>> spec(n / 2 + 1);
  auto plans = std::make_shared<RealFft::Plans>();
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  plans->r2c = fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(),
                                    reinterpret_cast<fftw_complex*>(spec.data()),
                                    flags);
  plans->c2r = fftw_plan_dft_c2r_1d(static_cast<int>(n),
                                    reinterpret_cast<fftw_complex*>(spec.data()),
                                    real.data(), flags);
  require(plans->r2c && plans->c2r, ErrorKind::kNumerical,
          "failed to create FFT plan");
  cache.emplace(n, plans);
  return plans;
}

}  // namespace

}  // namespace ps2::signal
