#include "ps2/kernels/kernels.hpp"

#include <algorithm>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

namespace ps2::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = std::int64_t;

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, const T* b, T beta, T* c) {
  Eigen::Map<RowMat<T>> cm(c, m, n);
  if (k == 0) {
    if (beta == T(0)) cm.setZero(); else cm *= beta;
    return;
  }
  const Eigen::Map<const RowMat<T>> am(a, ta == Trans::kNo ? m : k,
                                       ta == Trans::kNo ? k : m);
  const Eigen::Map<const RowMat<T>> bm(b, tb == Trans::kNo ? k : n,
                                       tb == Trans::kNo ? n : k);
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (ta == Trans::kNo && tb == Trans::kNo) {
    cm.noalias() += alpha * am * bm;
  } else if (ta == Trans::kNo) {
    cm.noalias() += alpha * am * bm.transpose();
  } else if (tb == Trans::kNo) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  }
}

template <typename T>
void im2col3x3(const T* x, std::size_t channels, std::size_t rows,
               std::size_t cols, T* col) {
  const Index plane = static_cast<Index>(rows * cols);
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < static_cast<Index>(channels); ++ch) {
    const T* xc = x + ch * plane;
    for (int kr = 0; kr < 3; ++kr) {
      for (int kc = 0; kc < 3; ++kc) {
        T* out = col + (ch * 9 + kr * 3 + kc) * plane;
        for (std::size_t r = 0; r < rows; ++r) {
          const Index rr = static_cast<Index>(r) + kr - 1;
          T* orow = out + r * cols;
          if (rr < 0 || rr >= static_cast<Index>(rows)) {
            for (std::size_t q = 0; q < cols; ++q) orow[q] = T(0);
            continue;
          }
          const T* xrow = xc + rr * static_cast<Index>(cols);
          for (std::size_t q = 0; q < cols; ++q) {
            const Index qq = static_cast<Index>(q) + kc - 1;
            orow[q] = (qq < 0 || qq >= static_cast<Index>(cols)) ? T(0) : xrow[qq];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3x3(const T* col, std::size_t channels, std::size_t rows,
               std::size_t cols, T* x) {
  const Index plane = static_cast<Index>(rows * cols);
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < static_cast<Index>(channels); ++ch) {
    T* xc = x + ch * plane;
    for (int kr = 0; kr < 3; ++kr) {
      for (int kc = 0; kc < 3; ++kc) {
        const T* in = col + (ch * 9 + kr * 3 + kc) * plane;
        for (std::size_t r = 0; r < rows; ++r) {
          const Index rr = static_cast<Index>(r) + kr - 1;
          if (rr < 0 || rr >= static_cast<Index>(rows)) continue;
          const T* irow = in + r * cols;
          T* xrow = xc + rr * static_cast<Index>(cols);
          for (std::size_t q = 0; q < cols; ++q) {
            const Index qq = static_cast<Index>(q) + kc - 1;
            if (qq >= 0 && qq < static_cast<Index>(cols)) xrow[qq] += irow[q];
          }
        }
      }
    }
  }
}

template <typename T>
void selective_scan_forward(const ScanDims& dims, const T* u, const T* delta,
                            const T* a, const T* b, const T* c, const T* d,
                            T* y) {
  const std::size_t L = dims.length, E = dims.channels, S = dims.state;
#pragma omp parallel for schedule(static)
  for (Index n = 0; n < static_cast<Index>(dims.batch); ++n) {
    std::vector<T> h(E * S, T(0));
    std::vector<T> decay(S);
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t row = (n * L + t);
      const T* bt = b + row * S;
      const T* ct = c + row * S;
      for (std::size_t e = 0; e < E; ++e) {
        const T dl = delta[row * E + e];
        const T ue = u[row * E + e];
        const T* ae = a + e * S;
        T* he = h.data() + e * S;
        for (std::size_t s = 0; s < S; ++s) decay[s] = std::exp(dl * ae[s]);
        const T du = dl * ue;
        T acc = T(0);
        for (std::size_t s = 0; s < S; ++s) {
          he[s] = decay[s] * he[s] + du * bt[s];
          acc += ct[s] * he[s];
        }
        y[row * E + e] = acc + d[e] * ue;
      }
    }
  }
}

template <typename T>
void selective_scan_backward(const ScanDims& dims, const T* u, const T* delta,
                             const T* a, const T* b, const T* c, const T* d,
                             const T* dy, T* du, T* ddelta, T* da, T* db,
                             T* dc, T* dd) {
  const std::size_t N = dims.batch, L = dims.length, E = dims.channels,
                    S = dims.state;
  // Per-sequence partials keep the reduction order independent of threads.
  std::vector<T> da_part(N * E * S, T(0));
  std::vector<T> dd_part(N * E, T(0));
#pragma omp parallel for schedule(static)
  for (Index n = 0; n < static_cast<Index>(N); ++n) {
    std::vector<T> hist(L * S);
    std::vector<T> carry(S);
    T* da_n = da_part.data() + n * E * S;
    T* dd_n = dd_part.data() + n * E;
    for (std::size_t e = 0; e < E; ++e) {
      const T* ae = a + e * S;
      std::fill(carry.begin(), carry.end(), T(0));
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t row = n * L + t;
        const T dl = delta[row * E + e];
        const T dlu = dl * u[row * E + e];
        const T* bt = b + row * S;
        T* ht = hist.data() + t * S;
        const T* hp = t > 0 ? hist.data() + (t - 1) * S : nullptr;
        for (std::size_t s = 0; s < S; ++s) {
          const T prev = hp ? hp[s] : T(0);
          ht[s] = std::exp(dl * ae[s]) * prev + dlu * bt[s];
        }
      }
      for (std::size_t tt = L; tt-- > 0;) {
        const std::size_t row = n * L + tt;
        const T g_y = dy[row * E + e];
        const T dl = delta[row * E + e];
        const T ue = u[row * E + e];
        const T* bt = b + row * S;
        const T* ct = c + row * S;
        T* dbt = db + row * S;
        T* dct = dc + row * S;
        const T* ht = hist.data() + tt * S;
        const T* hp = tt > 0 ? hist.data() + (tt - 1) * S : nullptr;
        T du_acc = g_y * d[e];
        T ddl = T(0);
        dd_n[e] += g_y * ue;
        for (std::size_t s = 0; s < S; ++s) {
          const T decay = std::exp(dl * ae[s]);
          const T gs = g_y * ct[s] + carry[s];
          dct[s] += g_y * ht[s];
          const T prev = hp ? hp[s] : T(0);
          const T g_decay = gs * prev * decay;
          ddl += g_decay * ae[s] + gs * bt[s] * ue;
          da_n[e * S + s] += g_decay * dl;
          dbt[s] += gs * dl * ue;
          du_acc += gs * dl * bt[s];
          carry[s] = decay * gs;
        }
        du[row * E + e] += du_acc;
        ddelta[row * E + e] += ddl;
      }
    }
  }
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < E * S; ++i) da[i] += da_part[n * E * S + i];
    for (std::size_t e = 0; e < E; ++e) dd[e] += dd_part[n * E + e];
  }
}

namespace reference {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, const T* b, T beta, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const T bv = tb == Trans::kNo ? b[p * n + j] : b[j * k + p];
        acc += av * bv;
      }
      c[i * n + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * n + j]);
    }
  }
}

template <typename T>
void conv3x3(const T* x, const T* w, const T* bias, std::size_t cin,
             std::size_t cout, std::size_t rows, std::size_t cols, T* y) {
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t q = 0; q < cols; ++q) {
        T acc = bias ? bias[o] : T(0);
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (int kr = 0; kr < 3; ++kr) {
            for (int kc = 0; kc < 3; ++kc) {
              const Index rr = static_cast<Index>(r) + kr - 1;
              const Index qq = static_cast<Index>(q) + kc - 1;
              if (rr < 0 || qq < 0 || rr >= static_cast<Index>(rows) ||
                  qq >= static_cast<Index>(cols))
                continue;
              acc += w[((o * cin + ci) * 3 + kr) * 3 + kc] *
                     x[(ci * rows + rr) * cols + qq];
            }
          }
        }
        y[(o * rows + r) * cols + q] = acc;
      }
    }
  }
}

template <typename T>
void selective_scan_forward(const ScanDims& dims, const T* u, const T* delta,
                            const T* a, const T* b, const T* c, const T* d,
                            T* y) {
  const std::size_t L = dims.length, E = dims.channels, S = dims.state;
  for (std::size_t n = 0; n < dims.batch; ++n) {
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<T> h(S, T(0));
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t row = n * L + t;
        T acc = T(0);
        for (std::size_t s = 0; s < S; ++s) {
          const T abar = std::exp(delta[row * E + e] * a[e * S + s]);
          const T bbar = delta[row * E + e] * b[row * S + s];
          h[s] = abar * h[s] + bbar * u[row * E + e];
          acc += c[row * S + s] * h[s];
        }
        y[row * E + e] = acc + d[e] * u[row * E + e];
      }
    }
  }
}

// Stores every state, then runs the textbook reverse recurrence.
template <typename T>
void selective_scan_backward(const ScanDims& dims, const T* u, const T* delta,
                             const T* a, const T* b, const T* c, const T* d,
                             const T* dy, T* du, T* ddelta, T* da, T* db,
                             T* dc, T* dd) {
  const std::size_t L = dims.length, E = dims.channels, S = dims.state;
  for (std::size_t n = 0; n < dims.batch; ++n) {
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<T> h((L + 1) * S, T(0));  // h[0] is the zero initial state
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t row = n * L + t;
        for (std::size_t s = 0; s < S; ++s) {
          const T abar = std::exp(delta[row * E + e] * a[e * S + s]);
          h[(t + 1) * S + s] = abar * h[t * S + s] +
                               delta[row * E + e] * b[row * S + s] * u[row * E + e];
        }
      }
      std::vector<T> gh(S, T(0));  // dLoss/dh_t accumulated from the future
      for (std::size_t t = L; t-- > 0;) {
        const std::size_t row = n * L + t;
        const T dl = delta[row * E + e];
        const T ue = u[row * E + e];
        const T gy = dy[row * E + e];
        dd[e] += gy * ue;
        du[row * E + e] += gy * d[e];
        for (std::size_t s = 0; s < S; ++s) {
          const T g = gh[s] + gy * c[row * S + s];
          dc[row * S + s] += gy * h[(t + 1) * S + s];
          const T abar = std::exp(dl * a[e * S + s]);
          da[e * S + s] += g * h[t * S + s] * abar * dl;
          ddelta[row * E + e] += g * (h[t * S + s] * abar * a[e * S + s] +
                                      b[row * S + s] * ue);
          db[row * S + s] += g * dl * ue;
          du[row * E + e] += g * dl * b[row * S + s];
          gh[s] = g * abar;
        }
      }
    }
  }
}

}  // namespace reference

#define PS2_INSTANTIATE_KERNELS(T)                                            \
  template void gemm<T>(Trans, Trans, std::size_t, std::size_t, std::size_t,  \
                        T, const T*, const T*, T, T*);                         \
  template void im2col3x3<T>(const T*, std::size_t, std::size_t, std::size_t, \
                             T*);                                              \
  template void col2im3x3<T>(const T*, std::size_t, std::size_t, std::size_t, \
                             T*);                                              \
  template void selective_scan_forward<T>(const ScanDims&, const T*,          \
                                          const T*, const T*, const T*,       \
                                          const T*, const T*, T*);            \
  template void selective_scan_backward<T>(                                   \
      const ScanDims&, const T*, const T*, const T*, const T*, const T*,      \
      const T*, const T*, T*, T*, T*, T*, T*, T*);                            \
  template void reference::gemm<T>(Trans, Trans, std::size_t, std::size_t,    \
                                   std::size_t, T, const T*, const T*, T,     \
                                   T*);                                        \
  template void reference::conv3x3<T>(const T*, const T*, const T*,           \
                                      std::size_t, std::size_t, std::size_t,  \
                                      std::size_t, T*);                        \
  template void reference::selective_scan_forward<T>(                         \
      const ScanDims&, const T*, const T*, const T*, const T*, const T*,      \
      const T*, T*);                                                          \
  template void reference::selective_scan_backward<T>(                        \
      const ScanDims&, const T*, const T*, const T*, const T*, const T*,      \
      const T*, const T*, T*, T*, T*, T*, T*, T*);

PS2_INSTANTIATE_KERNELS(float)
PS2_INSTANTIATE_KERNELS(double)

}  // namespace ps2::kernels
