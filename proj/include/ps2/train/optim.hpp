#pragma once

#include <cstddef>
#include <vector>

#include "ps2/nn/parameter_store.hpp"

namespace ps2::train {

struct ClipResult {
  double norm = 0.0;   // global L2 norm before clipping
  double scale = 1.0;  // factor applied to every gradient
};

// Rescales all gradients so their global L2 norm is at most max_norm.
template <typename T>
ClipResult clip_grad_norm(nn::ParameterStore<T>& store, double max_norm = 5.0);

template <typename T>
double grad_norm(const nn::ParameterStore<T>& store);

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;  // per parameter, store order
};

// Bias-corrected Adam update. Parameters without a gradient count as zero.
template <typename T>
void adam_step(nn::ParameterStore<T>& store, OptimState& state);

}  // namespace ps2::train
