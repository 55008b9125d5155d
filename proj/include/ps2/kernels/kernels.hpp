#pragma once

// Dense numeric kernels used by the autodiff engine. Every kernel has a
// parallel implementation (OpenMP, Eigen for matrix products) and a plain
// serial reference under `reference::` that the tests compare against.
//
// All matrices are contiguous row-major.

#include <cstddef>

namespace ps2::kernels {

enum class Trans { kNo, kYes };

// C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C[m,n]
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, const T* b, T beta, T* c);

// col[(ch*9 + kr*3 + kc), (r*cols + q)] = x[ch, r+kr-1, q+kc-1] (zero outside)
template <typename T>
void im2col3x3(const T* x, std::size_t channels, std::size_t rows,
               std::size_t cols, T* col);

// Adjoint of im2col3x3; accumulates into x.
template <typename T>
void col2im3x3(const T* col, std::size_t channels, std::size_t rows,
               std::size_t cols, T* x);

struct ScanDims {
  std::size_t batch = 0;   // independent sequences
  std::size_t length = 0;  // steps
  std::size_t channels = 0;
  std::size_t state = 0;
};

// Selective state-space scan with zero-order-hold discretization.
//   u, delta, y: [batch, length, channels]
//   a: [channels, state]; b, c: [batch, length, state]; d: [channels]
//   h_t = exp(delta_t * a) * h_{t-1} + delta_t * b_t * u_t
//   y_t = <c_t, h_t> + d * u_t
template <typename T>
void selective_scan_forward(const ScanDims& dims, const T* u, const T* delta,
                            const T* a, const T* b, const T* c, const T* d,
                            T* y);

// Accumulates (+=) into du, ddelta, da, db, dc, dd. States are recomputed
// per (sequence, channel) so nothing from the forward pass is retained.
template <typename T>
void selective_scan_backward(const ScanDims& dims, const T* u, const T* delta,
                             const T* a, const T* b, const T* c, const T* d,
                             const T* dy, T* du, T* ddelta, T* da, T* db,
                             T* dc, T* dd);

namespace reference {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, const T* b, T beta, T* c);

// Direct 3x3 "same" convolution: x [cin, rows, cols], w [cout, cin, 3, 3].
template <typename T>
void conv3x3(const T* x, const T* w, const T* bias, std::size_t cin,
             std::size_t cout, std::size_t rows, std::size_t cols, T* y);

template <typename T>
void selective_scan_forward(const ScanDims& dims, const T* u, const T* delta,
                            const T* a, const T* b, const T* c, const T* d,
                            T* y);

template <typename T>
void selective_scan_backward(const ScanDims& dims, const T* u, const T* delta,
                             const T* a, const T* b, const T* c, const T* d,
                             const T* dy, T* du, T* ddelta, T* da, T* db,
                             T* dc, T* dd);

}  // namespace reference

}  // namespace ps2::kernels
