#include "ps2/nn/layers.hpp"

#include <cmath>

#include "ps2/common/error.hpp"

namespace ps2::nn {

using ad::Tensor;

Init Init::fan_in(std::size_t n) {
  require(n > 0, ErrorKind::kUsage, "fan-in must be positive");
  return uniform(1.0 / std::sqrt(static_cast<double>(n)));
}

template <typename T>
Tensor<T> Builder<T>::param(const std::string& name, const ad::Shape& shape, const Init& init) {
  if (!creating()) {
    Tensor<T>& t = store_.get(name);
    require(t.shape() == shape, ErrorKind::kData,
            "parameter " + name + " has shape " + ad::to_string(t.shape()) + ", expected " +
                ad::to_string(shape));
    return t;
  }
  Tensor<T> t = store_.add(name, shape);
  auto v = t.mutable_values();
  switch (init.kind) {
    case Init::Kind::kConstant:
      for (auto& x : v) x = static_cast<T>(init.value);
      break;
    case Init::Kind::kUniform:
      for (auto& x : v) x = static_cast<T>(rng_->uniform(-init.value, init.value));
      break;
    case Init::Kind::kALog: {
      require(shape.size() == 2, ErrorKind::kUsage, "a_log init needs a [channels, state] shape");
      for (std::size_t e = 0; e < shape[0]; ++e)
        for (std::size_t n = 0; n < shape[1]; ++n)
          v[e * shape[1] + n] = static_cast<T>(std::log(static_cast<double>(n + 1)));
      break;
    }
    case Init::Kind::kDtBias:
      for (auto& x : v) {
        const double lo = std::log(1e-3), hi = std::log(1e-1);
        const double dt = std::max(std::exp(rng_->uniform(lo, hi)), 1e-4);
        x = static_cast<T>(dt + std::log(-std::expm1(-dt)));
      }
      break;
  }
  return t;
}

template <typename T>
Linear<T>::Linear(Builder<T>& B, const std::string& name, std::size_t in, std::size_t out,
                  bool bias) {
  w = B.param(name + ".w", {in, out}, Init::fan_in(in));
  if (bias) b = B.param(name + ".b", {out}, Init::fan_in(in));
}

template <typename T>
Conv2d<T>::Conv2d(Builder<T>& B, const std::string& name, std::size_t cin, std::size_t cout) {
  w = B.param(name + ".w", {cout, cin, 3, 3}, Init::fan_in(cin * 9));
  b = B.param(name + ".b", {cout}, Init::fan_in(cin * 9));
}

template <typename T>
Deconv2d<T>::Deconv2d(Builder<T>& B, const std::string& name, std::size_t cin, std::size_t cout,
                      bool bias) {
  // Each output pixel sums cin * 9 weighted inputs.
  w = B.param(name + ".w", {cin, cout, 3, 3}, Init::fan_in(cin * 9));
  b = bias ? B.param(name + ".b", {cout}, Init::fan_in(cin * 9)) : Tensor<T>::zeros({cout});
}

template <typename T>
LayerNorm<T>::LayerNorm(Builder<T>& B, const std::string& name, std::size_t dim) {
  gain = B.param(name + ".gain", {dim}, Init::constant(1.0));
  bias = B.param(name + ".bias", {dim}, Init::zeros());
}

template <typename T>
PRelu<T>::PRelu(Builder<T>& B, const std::string& name, std::size_t channels) {
  slope = B.param(name + ".slope", {channels}, Init::constant(0.25));
}

namespace {

// LSTM bias: gates i, f, g, o; the forget-gate quarter starts at zero.
template <typename T>
Tensor<T> lstm_bias(Builder<T>& B, const std::string& name, std::size_t hidden) {
  Tensor<T> b = B.param(name, {4 * hidden}, Init::fan_in(hidden));
  if (B.creating()) {
    auto v = b.mutable_values();
    for (std::size_t j = hidden; j < 2 * hidden; ++j) v[j] = T(0);
  }
  return b;
}

// GRU bias: gates r, z, n; the update gate (the GRU's forget gate) starts at zero.
template <typename T>
Tensor<T> gru_bias(Builder<T>& B, const std::string& name, std::size_t hidden) {
  Tensor<T> b = B.param(name, {3 * hidden}, Init::fan_in(hidden));
  if (B.creating()) {
    auto v = b.mutable_values();
    for (std::size_t j = hidden; j < 2 * hidden; ++j) v[j] = T(0);
  }
  return b;
}

}  // namespace

template <typename T>
BLstm<T>::BLstm(Builder<T>& B, const std::string& name, std::size_t din, std::size_t hidden) {
  for (auto [dir, suffix] : {std::pair{&fwd, "fwd"}, std::pair{&bwd, "bwd"}}) {
    const std::string s(suffix);
    dir->w_ih = B.param(name + ".w_ih_" + s, {din, 4 * hidden}, Init::fan_in(din));
    dir->w_hh = B.param(name + ".w_hh_" + s, {hidden, 4 * hidden}, Init::fan_in(hidden));
    dir->bias = lstm_bias(B, name + ".b_" + s, hidden);
  }
}

template <typename T>
Tensor<T> BLstm<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> f = ad::lstm(x, fwd.w_ih, fwd.w_hh, fwd.bias, false);
  const Tensor<T> r = ad::lstm(x, bwd.w_ih, bwd.w_hh, bwd.bias, true);
  return ad::concat<T>({f, r}, 2);
}

template <typename T>
BGru<T>::BGru(Builder<T>& B, const std::string& name, std::size_t din, std::size_t hidden,
              std::size_t num_layers, double dropout_p)
    : dropout(dropout_p) {
  require(num_layers >= 1, ErrorKind::kUsage, "BGRU needs at least one layer");
  for (std::size_t l = 0; l < num_layers; ++l) {
    Layer layer;
    const std::size_t in = l == 0 ? din : 2 * hidden;
    const std::string p = name + ".l" + std::to_string(l);
    for (auto [dir, suffix] : {std::pair{&layer.fwd, "fwd"}, std::pair{&layer.bwd, "bwd"}}) {
      const std::string s(suffix);
      dir->w_ih = B.param(p + ".w_ih_" + s, {in, 3 * hidden}, Init::fan_in(in));
      dir->w_hh = B.param(p + ".w_hh_" + s, {hidden, 3 * hidden}, Init::fan_in(hidden));
      dir->b_ih = gru_bias(B, p + ".b_ih_" + s, hidden);
      dir->b_hh = gru_bias(B, p + ".b_hh_" + s, hidden);
    }
    layers.push_back(layer);
  }
}

template <typename T>
Tensor<T> BGru<T>::operator()(const Tensor<T>& x, bool training, Rng* rng) const {
  Tensor<T> h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0 && training && dropout > 0.0) {
      require(rng != nullptr, ErrorKind::kUsage, "BGRU dropout in training mode needs an Rng");
      h = ad::dropout(h, dropout, *rng, true);
    }
    const auto& L = layers[l];
    const Tensor<T> f = ad::gru(h, L.fwd.w_ih, L.fwd.w_hh, L.fwd.b_ih, L.fwd.b_hh, false);
    const Tensor<T> r = ad::gru(h, L.bwd.w_ih, L.bwd.w_hh, L.bwd.b_ih, L.bwd.b_hh, true);
    h = ad::concat<T>({f, r}, 2);
  }
  return h;
}

template <typename T>
Fold<T>::Fold(Builder<T>& B, const std::string& name, std::size_t cin, std::size_t cout,
              std::size_t size_, std::size_t stride_)
    : size(size_), stride(stride_) {
  // Each output position collects ceil(size / stride) blocks of cin inputs.
  const std::size_t fan = cin * ((size + stride - 1) / stride);
  w = B.param(name + ".w", {cin, size * cout}, Init::fan_in(fan));
  b = B.param(name + ".b", {cout}, Init::fan_in(fan));
}

template <typename T>
Mamba<T>::Mamba(Builder<T>& B, const std::string& name, const MambaDims& d) : dims(d) {
  const std::size_t dm = d.model, ei = d.inner(), r = d.dt_rank(), n = d.state;
  in_proj = B.param(name + ".in_proj.w", {dm, 2 * ei}, Init::fan_in(dm));
  conv_w = B.param(name + ".conv.w", {ei, d.conv}, Init::fan_in(d.conv));
  conv_b = B.param(name + ".conv.b", {ei}, Init::fan_in(d.conv));
  x_proj = B.param(name + ".x_proj.w", {ei, r + 2 * n}, Init::fan_in(ei));
  dt_w = B.param(name + ".dt_proj.w", {r, ei}, Init::fan_in(r));
  dt_b = B.param(name + ".dt_proj.b", {ei}, Init::dt_bias());
  a_log = B.param(name + ".a_log", {ei, n}, Init::a_log());
  d_skip = B.param(name + ".d", {ei}, Init::constant(1.0));
  out_proj = B.param(name + ".out_proj.w", {ei, dm}, Init::fan_in(ei));
}

template <typename T>
Tensor<T> Mamba<T>::operator()(const Tensor<T>& x) const {
  const std::size_t ei = dims.inner(), r = dims.dt_rank(), n = dims.state;
  const Tensor<T> xz = ad::matmul(x, in_proj);
  const Tensor<T> stream = ad::slice(xz, 2, 0, ei);
  const Tensor<T> gate = ad::slice(xz, 2, ei, 2 * ei);
  const Tensor<T> u = ad::silu(ad::causal_dwconv1d(stream, conv_w, conv_b));
  const Tensor<T> dbc = ad::matmul(u, x_proj);
  const Tensor<T> delta = ad::softplus(ad::linear(ad::slice(dbc, 2, 0, r), dt_w, dt_b));
  const Tensor<T> bm = ad::slice(dbc, 2, r, r + n);
  const Tensor<T> cm = ad::slice(dbc, 2, r + n, r + 2 * n);
  const Tensor<T> y = ad::selective_scan(u, delta, a_log, bm, cm, d_skip);
  return ad::matmul(ad::mul(y, ad::silu(gate)), out_proj);
}

template <typename T>
Tensor<T> frame_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::size_t heads, double scale, double dropout_p, Rng* rng,
                          bool training) {
  require(q.rank() == 3 && k.shape() == q.shape() && v.rank() == 3 &&
              v.dim(0) == q.dim(0) && v.dim(1) == q.dim(1),
          ErrorKind::kUsage,
          "attention: incompatible q/k/v shapes " + ad::to_string(q.shape()) + ", " +
              ad::to_string(k.shape()) + ", " + ad::to_string(v.shape()));
  require(heads >= 1 && q.dim(2) % heads == 0 && v.dim(2) % heads == 0, ErrorKind::kUsage,
          "attention: embedding " + std::to_string(q.dim(2)) + " is not divisible into " +
              std::to_string(heads) + " heads");
  const std::size_t frames = q.dim(0), bins = q.dim(1);
  const std::size_t e = q.dim(2) / heads, ev = v.dim(2) / heads;
  auto to_heads = [&](const Tensor<T>& t, std::size_t width) {
    const Tensor<T> split = ad::reshape(t, {frames, bins, heads, width});
    return ad::reshape(ad::permute(split, {2, 0, 1, 3}), {heads, frames, bins * width});
  };
  const Tensor<T> qh = to_heads(q, e), kh = to_heads(k, e), vh = to_heads(v, ev);
  Tensor<T> weights = ad::softmax_rows(ad::scale(ad::bmm(qh, kh, false, true), static_cast<T>(1.0 / scale)));
  if (training && dropout_p > 0.0) {
    require(rng != nullptr, ErrorKind::kUsage, "attention dropout in training mode needs an Rng");
    weights = ad::dropout(weights, dropout_p, *rng, true);
  }
  const Tensor<T> out = ad::bmm(weights, vh);  // [G, T, F*Ev]
  const Tensor<T> split = ad::reshape(out, {heads, frames, bins, ev});
  return ad::reshape(ad::permute(split, {1, 2, 0, 3}), {frames, bins, heads * ev});
}

#define PS2_INSTANTIATE_LAYERS(T)                                                              \
  template class Builder<T>;                                                                  \
  template struct Linear<T>;                                                                  \
  template struct Conv2d<T>;                                                                  \
  template struct Deconv2d<T>;                                                                \
  template struct LayerNorm<T>;                                                               \
  template struct PRelu<T>;                                                                   \
  template struct BLstm<T>;                                                                   \
  template struct BGru<T>;                                                                    \
  template struct Fold<T>;                                                                    \
  template struct Mamba<T>;                                                                   \
  template Tensor<T> frame_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                     std::size_t, double, double, Rng*, bool);

PS2_INSTANTIATE_LAYERS(float)
PS2_INSTANTIATE_LAYERS(double)

}  // namespace ps2::nn
