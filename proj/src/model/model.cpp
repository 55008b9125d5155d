#include "ps2/model/model.hpp"

#include <cmath>

#include "ps2/ad/fused.hpp"
#include "ps2/ad/ops.hpp"
#include "ps2/common/error.hpp"
#include "ps2/signal/stft.hpp"

namespace ps2::model {

using ad::Tensor;

template <typename T>
Ps2Features<T> make_features(const signal::Waveform& mixture, const Ps2Config& cfg) {
  require(mixture.channels() == cfg.mics, ErrorKind::kData,
          "mixture has " + std::to_string(mixture.channels()) + " channels, model expects " +
              std::to_string(cfg.mics));
  require(mixture.length() >= cfg.stft.fft_size, ErrorKind::kData,
          "mixture of " + std::to_string(mixture.length()) + " samples is shorter than fft size " +
              std::to_string(cfg.stft.fft_size));
  const auto spec = signal::stft(mixture, cfg.stft);
  auto to_tensor = [](const signal::FeatureGrid& g) {
    std::vector<T> v(g.data.begin(), g.data.end());
    return Tensor<T>({g.channels, g.frames, g.bins}, std::move(v));
  };
  return {to_tensor(signal::to_ri(spec)), to_tensor(signal::to_mp(spec)), mixture.length()};
}

std::vector<std::string> functional_blocks(const Ps2Config& cfg) {
  std::vector<std::string> names{"spectral.encoder"};
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "spectral.block" + std::to_string(b);
    names.push_back(p + ".freq");
    names.push_back(p + ".temporal");
    names.push_back(p + ".attention");
  }
  names.push_back("decoder");
  if (cfg.spatial_branch) {
    if (cfg.fusion == FusionMode::kCrossAttention) names.push_back("fusion");
    names.push_back("spatial.encoder");
    names.push_back("spatial.gru");
  }
  return names;
}

template <typename T>
Ps2Model<T>::Ps2Model(const Ps2Config& cfg, nn::ParameterStore<T>& store, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  nn::Builder<T> b(store, rng);
  build(b);
}

template <typename T>
Ps2Model<T>::Ps2Model(const Ps2Config& cfg, nn::ParameterStore<T>& store) : cfg_(cfg) {
  cfg_.validate();
  nn::Builder<T> b(store);
  build(b);
}

template <typename T>
void Ps2Model<T>::build(nn::Builder<T>& b) {
  const auto& c = cfg_;
  const std::size_t D = c.embed;
  spec_enc_ = {nn::Conv2d<T>(b, "spectral.encoder.conv", 2 * c.mics, D),
               nn::LayerNorm<T>(b, "spectral.encoder.norm", D)};
  for (std::size_t i = 0; i < c.blocks; ++i) {
    const std::string p = "spectral.block" + std::to_string(i);
    Block blk;
    blk.freq_rnn = nn::BLstm<T>(b, p + ".freq.blstm", D * c.freq_block, c.freq_hidden);
    blk.freq_fold = nn::Fold<T>(b, p + ".freq.fold", 2 * c.freq_hidden, D, c.freq_block, c.freq_stride);
    const std::size_t dm = D * c.time_block;
    blk.mamba = nn::Mamba<T>(b, p + ".temporal.mamba",
                             nn::MambaDims{dm, c.mamba_state, c.mamba_conv, c.mamba_expand});
    blk.time_fold = nn::Fold<T>(b, p + ".temporal.fold", dm, D, c.time_block, c.time_stride);
    const std::size_t ge = c.sa_heads * c.sa_dim;
    blk.q = nn::Linear<T>(b, p + ".attention.q", D, ge);
    blk.k = nn::Linear<T>(b, p + ".attention.k", D, ge, false);
    blk.v = nn::Linear<T>(b, p + ".attention.v", D, ge);
    blk.out = nn::Linear<T>(b, p + ".attention.out", ge, D);
    blocks_.push_back(std::move(blk));
  }
  // No bias: a constant added to every bin of a Re or Im map is cancelled
  // exactly by the inverse STFT, so it could never be learned.
  decoder_ = nn::Deconv2d<T>(b, "decoder.deconv", D, 2 * c.sources, false);
  if (!c.spatial_branch) return;
  if (c.fusion == FusionMode::kCrossAttention) {
    fusion_.reduce_spec = nn::Linear<T>(b, "fusion.reduce_spec", D, c.ca_dim);
    fusion_.reduce_spat = nn::Linear<T>(b, "fusion.reduce_spat", D, c.ca_dim);
    fusion_.q = nn::Linear<T>(b, "fusion.q", c.ca_dim, c.ca_dim);
    fusion_.k = nn::Linear<T>(b, "fusion.k", c.ca_dim, c.ca_dim, false);
    fusion_.v = nn::Linear<T>(b, "fusion.v", c.ca_dim, c.ca_dim);
    fusion_.out = nn::Linear<T>(b, "fusion.out", c.ca_dim, D);
  }
  spat_enc_ = {nn::Conv2d<T>(b, "spatial.encoder.conv", 2 * c.mics, D),
               nn::LayerNorm<T>(b, "spatial.encoder.norm", D)};
  gru_ = nn::BGru<T>(b, "spatial.gru.bgru", c.bins() * D, c.gru_hidden, c.gru_layers, c.gru_dropout);
  remap_ = nn::Linear<T>(b, "spatial.gru.remap", 2 * c.gru_hidden, c.bins() * D);
  prelu_ = nn::PRelu<T>(b, "spatial.gru.prelu", D);
}

template <typename T>
Tensor<T> Ps2Model<T>::encode(const Encoder& enc, const Tensor<T>& x) const {
  require(x.rank() == 3 && x.dim(0) == 2 * cfg_.mics, ErrorKind::kData,
          "encoder expects [" + std::to_string(2 * cfg_.mics) + ", T, F] input, got " +
              ad::to_string(x.shape()));
  return enc.norm(ad::permute(enc.conv(x), {1, 2, 0}));
}

template <typename T>
Tensor<T> Ps2Model<T>::spectral_encoder(const Tensor<T>& ri) const {
  return encode(spec_enc_, ri);
}

template <typename T>
Tensor<T> Ps2Model<T>::frequency_module(std::size_t block, const Tensor<T>& x) const {
  const Block& blk = blocks_.at(block);
  const auto g = ad::BlockGeometry::make(x.dim(1), cfg_.freq_block, cfg_.freq_stride);
  const Tensor<T> h = blk.freq_rnn(ad::unfold_blocks(x, g));
  return ad::add(x, blk.freq_fold(h, g));
}

template <typename T>
Tensor<T> Ps2Model<T>::temporal_module(std::size_t block, const Tensor<T>& x) const {
  const Block& blk = blocks_.at(block);
  const Tensor<T> xt = ad::permute(x, {1, 0, 2});  // [F, T, D]
  const auto g = ad::BlockGeometry::make(xt.dim(1), cfg_.time_block, cfg_.time_stride);
  const Tensor<T> h = blk.mamba(ad::unfold_blocks(xt, g));
  return ad::add(x, ad::permute(blk.time_fold(h, g), {1, 0, 2}));
}

template <typename T>
Tensor<T> Ps2Model<T>::self_attention_module(std::size_t block, const Tensor<T>& x) const {
  const Block& blk = blocks_.at(block);
  const Tensor<T> a = nn::frame_attention(blk.q(x), blk.k(x), blk.v(x), cfg_.sa_heads,
                                          std::sqrt(static_cast<double>(cfg_.sa_dim)));
  return ad::add(x, blk.out(a));
}

template <typename T>
Tensor<T> Ps2Model<T>::spectral_branch(const Tensor<T>& ri) const {
  Tensor<T> h = spectral_encoder(ri);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    h = frequency_module(b, h);
    h = temporal_module(b, h);
    h = self_attention_module(b, h);
  }
  return h;
}

template <typename T>
Tensor<T> Ps2Model<T>::spatial_branch(const Tensor<T>& mp, const RunMode& mode) const {
  require(cfg_.spatial_branch, ErrorKind::kUsage, "spatial branch is disabled in this config");
  const Tensor<T> e = encode(spat_enc_, mp);
  const std::size_t T_ = e.dim(0), F = e.dim(1), D = e.dim(2);
  require(F == cfg_.bins(), ErrorKind::kData,
          "spatial branch built for " + std::to_string(cfg_.bins()) + " bins, got " +
              std::to_string(F));
  const Tensor<T> seq = gru_(ad::reshape(e, {1, T_, F * D}), mode.training, mode.rng);
  const Tensor<T> mapped = ad::reshape(remap_(seq), {T_, F, D});
  return ad::add(e, prelu_(mapped));
}

template <typename T>
Tensor<T> Ps2Model<T>::fuse(const Tensor<T>& spec, const Tensor<T>& spat, const RunMode& mode) const {
  if (cfg_.fusion == FusionMode::kSum) return ad::add(spec, spat);
  const Tensor<T> s = fusion_.reduce_spec(spec);
  const Tensor<T> p = fusion_.reduce_spat(spat);
  const Tensor<T> a = nn::frame_attention(fusion_.q(s), fusion_.k(p), fusion_.v(p), cfg_.ca_heads,
                                          std::sqrt(static_cast<double>(cfg_.ca_dim)),
                                          cfg_.ca_dropout, mode.rng, mode.training);
  return fusion_.out(a);
}

template <typename T>
Tensor<T> Ps2Model<T>::decode(const Tensor<T>& fused) const {
  return decoder_(ad::permute(fused, {2, 0, 1}));
}

template <typename T>
Ps2Output<T> Ps2Model<T>::forward(const Ps2Features<T>& in, const RunMode& mode) const {
  require(!mode.training || mode.rng != nullptr, ErrorKind::kUsage,
          "training-mode forward needs an Rng for dropout");
  Tensor<T> fused = spectral_branch(in.ri);
  if (cfg_.spatial_branch) fused = fuse(fused, spatial_branch(in.mp, mode), mode);
  Ps2Output<T> out;
  out.spectra = decode(fused);
  out.waveforms = ad::istft(out.spectra, cfg_.stft, in.length);
  return out;
}

template <typename T>
Ps2Output<T> Ps2Model<T>::forward(const signal::Waveform& mixture, const RunMode& mode) const {
  return forward(make_features<T>(mixture, cfg_), mode);
}

template <typename T>
nn::ParameterStore<T> init_params(const Ps2Config& cfg, std::uint64_t seed) {
  nn::ParameterStore<T> store;
  Rng rng(seed);
  Ps2Model<T> model(cfg, store, rng);
  return store;
}

std::size_t analytic_param_count(const Ps2Config& c) {
  const std::size_t D = c.embed, M = c.mics, F = c.bins();
  auto linear = [](std::size_t in, std::size_t out, bool bias) { return in * out + (bias ? out : 0); };
  const std::size_t encoder = 2 * M * D * 9 + D + 2 * D;  // conv + layer norm

  const std::size_t hf = c.freq_hidden;
  const std::size_t blstm = 2 * (D * c.freq_block * 4 * hf + hf * 4 * hf + 4 * hf);
  const std::size_t freq_fold = 2 * hf * c.freq_block * D + D;

  const std::size_t dm = D * c.time_block, ei = c.mamba_expand * dm, n = c.mamba_state;
  const std::size_t rank = (dm + 15) / 16;
  const std::size_t mamba = dm * 2 * ei + ei * c.mamba_conv + ei + ei * (rank + 2 * n) +
                            rank * ei + ei + ei * n + ei + ei * dm;
  const std::size_t time_fold = dm * c.time_block * D + D;

  const std::size_t ge = c.sa_heads * c.sa_dim;
  const std::size_t attention = linear(D, ge, true) + linear(D, ge, false) + linear(D, ge, true) +
                                linear(ge, D, true);

  const std::size_t block = blstm + freq_fold + mamba + time_fold + attention;
  const std::size_t decoder = D * 2 * c.sources * 9;
  std::size_t total = encoder + c.blocks * block + decoder;
  if (!c.spatial_branch) return total;

  const std::size_t h = c.gru_hidden;
  std::size_t gru = 0;
  for (std::size_t l = 0; l < c.gru_layers; ++l) {
    const std::size_t in = l == 0 ? F * D : 2 * h;
    gru += 2 * (in * 3 * h + h * 3 * h + 2 * 3 * h);
  }
  total += encoder + gru + linear(2 * h, F * D, true) + D;
  if (c.fusion == FusionMode::kCrossAttention) {
    const std::size_t ca = c.ca_dim;
    total += 2 * linear(D, ca, true) + linear(ca, ca, true) + linear(ca, ca, false) +
             linear(ca, ca, true) + linear(ca, D, true);
  }
  return total;
}

#define PS2_INSTANTIATE_MODEL(T)                                                         \
  template Ps2Features<T> make_features<T>(const signal::Waveform&, const Ps2Config&);  \
  template class Ps2Model<T>;                                                           \
  template nn::ParameterStore<T> init_params<T>(const Ps2Config&, std::uint64_t);

PS2_INSTANTIATE_MODEL(float)
PS2_INSTANTIATE_MODEL(double)

}  // namespace ps2::model
