#pragma once

// Composite differentiable operations with hand-written backward passes.
// Recurrent layers and the selective scan record a single tape entry for the
// whole sequence instead of one per step.

#include <cstddef>

#include "ps2/ad/tensor.hpp"
#include "ps2/signal/stft.hpp"

namespace ps2::ad {

// x [Cin, R, Q], w [Cout, Cin, 3, 3], bias [Cout] -> [Cout, R, Q].
// Stride 1, zero padding 1 on both axes.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Transposed 3x3 convolution, the adjoint of conv2d in x.
// x [Cin, R, Q], w [Cin, Cout, 3, 3], bias [Cout] -> [Cout, R, Q].
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Normalizes over the last axis with population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps = 1e-5);

// Overlapping blocks of `size` positions taken every `stride` positions along
// an axis of `length`, after ceil((size-1)/2) zeros at each end plus enough
// tail zeros that the last block ends exactly on the padded length.
struct BlockGeometry {
  std::size_t length = 0;
  std::size_t size = 0;
  std::size_t stride = 0;
  std::size_t pad_front = 0;
  std::size_t padded = 0;
  std::size_t blocks = 0;

  static BlockGeometry make(std::size_t length, std::size_t size, std::size_t stride);
};

// x [N, S, D] -> [N, S_b, I*D]; feature index i*D + d.
template <typename T>
Tensor<T> unfold_blocks(const Tensor<T>& x, const BlockGeometry& g);

// Adjoint of unfold_blocks: [N, S_b, I*D] -> [N, S, D], overlap-added and
// cropped to the unpadded positions.
template <typename T>
Tensor<T> overlap_add(const Tensor<T>& x, const BlockGeometry& g);

// Transposed 1-D convolution folding blocks back onto the axis.
// x [N, S_b, Cin], w [Cin, I*Cout], bias [Cout] -> [N, S, Cout].
template <typename T>
Tensor<T> deconv1d_fold(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                        const BlockGeometry& g);

// Unidirectional LSTM over axis 1 of x [N, L, Din], zero initial state.
// w_ih [Din, 4H], w_hh [H, 4H], bias [4H]; gate order i, f, g, o.
// `reverse` runs from the last step to the first.
template <typename T>
Tensor<T> lstm(const Tensor<T>& x, const Tensor<T>& w_ih, const Tensor<T>& w_hh,
               const Tensor<T>& bias, bool reverse);

// Unidirectional GRU, gate order r, z, n:
//   n = tanh(x W_n + b_in + r * (h U_n + b_hn)),  h' = (1 - z) n + z h.
template <typename T>
Tensor<T> gru(const Tensor<T>& x, const Tensor<T>& w_ih, const Tensor<T>& w_hh,
              const Tensor<T>& b_ih, const Tensor<T>& b_hh, bool reverse);

// Depthwise causal convolution over axis 1 of x [N, L, E]; w [E, K], bias [E].
//   y[n, t, e] = bias[e] + sum_k w[e, k] x[n, t - K + 1 + k, e]
template <typename T>
Tensor<T> causal_dwconv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Selective scan with A = -exp(a_log).
// u, delta [N, L, E]; a_log [E, S]; b, c [N, L, S]; d [E] -> [N, L, E].
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d);

// Inverse STFT of stacked (Re, Im) channel pairs: x [2C, T, F] -> [C, out_length].
template <typename T>
Tensor<T> istft(const Tensor<T>& x, const signal::StftConfig& cfg, std::size_t out_length);

}  // namespace ps2::ad
