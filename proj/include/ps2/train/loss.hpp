#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ps2/ad/tensor.hpp"
#include "ps2/signal/waveform.hpp"

namespace ps2::train {

// Scale-invariant SDR in dB after mean removal. Returns +inf when the residual
// energy is below 1e-12 of the target energy and -inf when the target energy
// is below 1e-12 of the estimate energy.
double si_sdr(std::span<const double> est, std::span<const double> ref);
double si_sdr(const signal::Waveform& est, const signal::Waveform& ref);

inline constexpr double kLossClampDb = 60.0;

// Differentiable SI-SDR of two equal-length vectors (any shape, flattened).
// Values beyond +-kLossClampDb are returned as detached constants.
template <typename T>
ad::Tensor<T> si_sdr_loss_term(const ad::Tensor<T>& est, const ad::Tensor<T>& ref);

// Permutation whose assignment est[perm[c]] -> ref[c] maximizes the summed score.
std::vector<std::size_t> best_permutation(const std::vector<std::vector<double>>& score);

template <typename T>
struct PitResult {
  ad::Tensor<T> loss;             // scalar: mean over speakers of -SI-SDR (dB)
  std::vector<std::size_t> perm;  // est index assigned to each reference
  double loss_db = 0.0;
};

// Utterance-level permutation-invariant loss; ests and refs are [C, L], C <= 4.
template <typename T>
PitResult<T> pit_loss(const ad::Tensor<T>& ests, const ad::Tensor<T>& refs);

}  // namespace ps2::train
