#pragma once

// The PS2 separation network: a spectral branch on real/imaginary features
// (encoder, then B blocks of frequency, temporal and self-attention modules),
// a spatial branch on magnitude/phase features, cross-attention fusion and a
// deconvolution decoder followed by the inverse STFT.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ps2/ad/tensor.hpp"
#include "ps2/common/rng.hpp"
#include "ps2/model/config.hpp"
#include "ps2/nn/layers.hpp"
#include "ps2/nn/parameter_store.hpp"
#include "ps2/signal/waveform.hpp"

namespace ps2::model {

struct RunMode {
  bool training = false;
  Rng* rng = nullptr;  // dropout masks; required when training

  static RunMode eval() { return {}; }
  static RunMode train(Rng& rng) { return {true, &rng}; }
};

template <typename T>
struct Ps2Output {
  ad::Tensor<T> spectra;    // [2C, T, F]; channel 2c = Re, 2c+1 = Im of speaker c
  ad::Tensor<T> waveforms;  // [C, length]
};

// Network inputs for one mixture.
template <typename T>
struct Ps2Features {
  ad::Tensor<T> ri;  // [2M, T, F]
  ad::Tensor<T> mp;  // [2M, T, F]
  std::size_t length = 0;
};

template <typename T>
Ps2Features<T> make_features(const signal::Waveform& mixture, const Ps2Config& cfg);

// Parameter-group names used as functional blocks, in display order.
std::vector<std::string> functional_blocks(const Ps2Config& cfg);

template <typename T>
class Ps2Model {
 public:
  // Registers freshly initialized parameters in `store`.
  Ps2Model(const Ps2Config& cfg, nn::ParameterStore<T>& store, Rng& rng);
  // Binds to the parameters already in `store`; shapes must match `cfg`.
  Ps2Model(const Ps2Config& cfg, nn::ParameterStore<T>& store);

  const Ps2Config& config() const { return cfg_; }

  Ps2Output<T> forward(const signal::Waveform& mixture, const RunMode& mode) const;
  Ps2Output<T> forward(const Ps2Features<T>& features, const RunMode& mode) const;

  // Sub-modules, exposed for testing. Grids are [T, F, D] unless noted.
  ad::Tensor<T> spectral_encoder(const ad::Tensor<T>& ri) const;  // [2M, T, F] in
  ad::Tensor<T> frequency_module(std::size_t block, const ad::Tensor<T>& x) const;
  ad::Tensor<T> temporal_module(std::size_t block, const ad::Tensor<T>& x) const;
  ad::Tensor<T> self_attention_module(std::size_t block, const ad::Tensor<T>& x) const;
  ad::Tensor<T> spectral_branch(const ad::Tensor<T>& ri) const;
  ad::Tensor<T> spatial_branch(const ad::Tensor<T>& mp, const RunMode& mode) const;
  ad::Tensor<T> fuse(const ad::Tensor<T>& spec, const ad::Tensor<T>& spat, const RunMode& mode) const;
  ad::Tensor<T> decode(const ad::Tensor<T>& fused) const;  // -> [2C, T, F]

 private:
  struct Encoder {
    nn::Conv2d<T> conv;
    nn::LayerNorm<T> norm;
  };
  struct Block {
    nn::BLstm<T> freq_rnn;
    nn::Fold<T> freq_fold;
    nn::Mamba<T> mamba;
    nn::Fold<T> time_fold;
    nn::Linear<T> q, k, v, out;
  };
  struct Fusion {
    nn::Linear<T> reduce_spec, reduce_spat, q, k, v, out;
  };

  void build(nn::Builder<T>& b);
  ad::Tensor<T> encode(const Encoder& enc, const ad::Tensor<T>& x) const;

  Ps2Config cfg_;
  Encoder spec_enc_, spat_enc_;
  std::vector<Block> blocks_;
  nn::BGru<T> gru_;
  nn::Linear<T> remap_;
  nn::PRelu<T> prelu_;
  Fusion fusion_;
  nn::Deconv2d<T> decoder_;
};

template <typename T>
nn::ParameterStore<T> init_params(const Ps2Config& cfg, std::uint64_t seed);

// Closed-form parameter count for `cfg`, computed from the layer geometry
// without constructing the model.
std::size_t analytic_param_count(const Ps2Config& cfg);

}  // namespace ps2::model
