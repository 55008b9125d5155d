#pragma once

// BSS-eval projections. References and their delays 0..L-1 are taken as
// full convolutions (length N + L - 1) and the estimate is zero padded to
// match, so every Gram matrix is block Toeplitz in the cross-correlations.

#include <cstddef>
#include <span>
#include <vector>

namespace ps2::eval {

inline constexpr double kMetricCapDb = 300.0;

struct BssOptions {
  std::size_t filter_len = 512;
  // Added to the Gram diagonal, relative to its mean diagonal entry.
  double ridge = 1e-10;
};

struct BssMetrics {
  double sdr = 0.0, sir = 0.0, sar = 0.0;
};

struct BssDecomposition {
  std::vector<double> target, interf, artif;  // length N + L - 1
  BssMetrics metrics;
};

BssDecomposition bss_decompose(std::span<const double> est,
                               const std::vector<std::span<const double>>& refs,
                               std::size_t target, const BssOptions& options = {});

BssMetrics bss_eval(std::span<const double> est, const std::vector<std::span<const double>>& refs,
                    std::size_t target, const BssOptions& options = {});

// 10 log10(num / den) clamped to +-kMetricCapDb.
double capped_db(double num, double den);

}  // namespace ps2::eval
