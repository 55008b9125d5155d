#pragma once

// Differentiable primitives. Each records a backward closure on the active
// Tape when any input requires a gradient. Binary elementwise ops broadcast
// with trailing-dimension alignment (extent 1 stretches).

#include <cstdint>
#include <vector>

#include "ps2/ad/tensor.hpp"
#include "ps2/common/rng.hpp"

namespace ps2::ad {

Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& a);

template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> square(const Tensor<T>& a);
// Gradient passes only where lo < a < hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);
// max(0,x) + slope[c] * min(0,x), slope indexed by the last axis.
template <typename T> Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> pad(const Tensor<T>& a, std::size_t axis, std::size_t before, std::size_t after);
template <typename T> Tensor<T> flip(const Tensor<T>& a, std::size_t axis);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, std::size_t axis);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a, std::size_t axis);
template <typename T> Tensor<T> max(const Tensor<T>& a);
template <typename T> Tensor<T> max(const Tensor<T>& a, std::size_t axis);

// Softmax over the last axis, computed with max subtraction.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);

// a [..., K] x b [K, N] -> [..., N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x [..., K] x w [K, N] + bias [N]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);
// Batched: a [B, M, K] (or [B, K, M] if trans_a), b [B, K, N] (or [B, N, K]).
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

// Inverted dropout; identity when !training or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng, bool training);

}  // namespace ps2::ad
