#pragma once

#include <complex>
#include <cstddef>
#include <memory>

namespace ps2::signal {

// Real-input FFT of fixed size n. Thread-safe to use concurrently; plans are
// shared across instances of the same size.
class RealFft {
 public:
  explicit RealFft(std::size_t n);

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  // out: n/2+1 bins, unnormalized.
  void forward(const double* in, std::complex<double>* out) const;
  // in: n/2+1 bins; out: n samples scaled by 1/n (exact inverse of forward).
  void inverse(const std::complex<double>* in, double* out) const;

  struct Plans;

 private:
  std::size_t n_;
  std::shared_ptr<const Plans> plans_;
};

}  // namespace ps2::signal
