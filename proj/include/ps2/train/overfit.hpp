#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ps2/model/config.hpp"
#include "ps2/nn/parameter_store.hpp"
#include "ps2/signal/waveform.hpp"
#include "ps2/train/optim.hpp"

namespace ps2::train {

struct StepLog {
  std::size_t step = 0;
  double loss_db = 0.0;
  double si_sdri_db = 0.0;  // mean over speakers, training-mode output
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

struct OverfitOptions {
  std::size_t steps = 500;
  AdamConfig adam{};
  double clip = 5.0;
  std::uint64_t seed = 1;
  std::string log_csv;  // empty: no file
  std::function<void(const StepLog&)> on_step;
};

struct OverfitResult {
  std::vector<StepLog> log;
  std::vector<double> mixture_si_sdr;  // unprocessed mic-0 mixture vs each reference
  double initial_si_sdri = 0.0;        // eval-mode output of the initialized network
  double final_si_sdri = 0.0;          // eval-mode output after training
  std::vector<std::size_t> final_perm;
  nn::ParameterStore<float> params;
};

// Mean SI-SDR improvement of `ests` (C channels) over the mic-0 mixture,
// using the best speaker assignment. `perm` receives the assignment.
double si_sdr_improvement(const signal::Waveform& ests, const signal::Waveform& refs,
                          const signal::Waveform& mixture, std::vector<std::size_t>* perm = nullptr);

// Trains a freshly initialized model on one mixture. `refs` holds one channel
// per speaker (the reverberant image at mic 0). Throws a numerical error naming
// the step if the loss or gradient norm stops being finite.
OverfitResult overfit(const signal::Waveform& mixture, const signal::Waveform& refs,
                      const model::Ps2Config& cfg, const OverfitOptions& options);

}  // namespace ps2::train
