#include "ps2/ad/fused.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>

#include "ps2/common/error.hpp"
#include "ps2/ad/ops.hpp"
#include "ps2/kernels/kernels.hpp"

namespace ps2::ad {

using kernels::Trans;

namespace {

template <typename T>
Tape<T>* tape_for(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return nullptr;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
void attach(Tape<T>* tape, Tensor<T>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  tape->record(out.node_ptr(), std::move(fn));
}

template <typename T>
T* grad_ptr(const Tensor<T>& t) {
  return t.defined() && t.requires_grad() ? t.node()->ensure_grad().data() : nullptr;
}

template <typename T>
T sigm(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

void expect_shape(const Shape& got, const Shape& want, const char* what) {
  require(got == want, ErrorKind::kUsage,
          std::string(what) + ": expected shape " + to_string(want) + ", got " + to_string(got));
}

// Gradient of bias: column sums of g [rows, cols].
template <typename T>
void add_col_sums(const T* g, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += g[r * cols + c];
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(x.rank() == 3 && w.rank() == 4 && w.dim(2) == 3 && w.dim(3) == 3, ErrorKind::kUsage,
          "conv2d: expected x [Cin,R,Q] and w [Cout,Cin,3,3], got " + to_string(x.shape()) +
              " and " + to_string(w.shape()));
  require(w.dim(1) == x.dim(0), ErrorKind::kUsage,
          "conv2d: channel mismatch between input " + to_string(x.shape()) + " and kernel " +
              to_string(w.shape()));
  const std::size_t cin = x.dim(0), rows = x.dim(1), cols = x.dim(2), cout = w.dim(0);
  expect_shape(bias.shape(), {cout}, "conv2d bias");
  const std::size_t n = rows * cols, k = cin * 9;
  std::vector<T> col(k * n);
  kernels::im2col3x3(x.values().data(), cin, rows, cols, col.data());
  Tensor<T> out = Tensor<T>::zeros({cout, rows, cols});
  T* y = out.mutable_values().data();
  kernels::gemm<T>(Trans::kNo, Trans::kNo, cout, n, k, T(1), w.values().data(), col.data(), T(0), y);
  const auto bv = bias.values();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < n; ++i) y[o * n + i] += bv[o];
  if (auto* tape = tape_for({&x, &w, &bias})) {
    attach(tape, out, [x, w, bias, out, cin, rows, cols, cout, n, k]() {
      const T* g = out.grad().data();
      if (T* gw = grad_ptr(w)) {
        std::vector<T> col(k * n);
        kernels::im2col3x3(x.values().data(), cin, rows, cols, col.data());
        kernels::gemm<T>(Trans::kNo, Trans::kYes, cout, k, n, T(1), g, col.data(), T(1), gw);
      }
      if (T* gx = grad_ptr(x)) {
        std::vector<T> gcol(k * n);
        kernels::gemm<T>(Trans::kYes, Trans::kNo, k, n, cout, T(1), w.values().data(), g, T(0),
                         gcol.data());
        kernels::col2im3x3(gcol.data(), cin, rows, cols, gx);
      }
      if (T* gb = grad_ptr(bias)) {
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < n; ++i) gb[o] += g[o * n + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(x.rank() == 3 && w.rank() == 4 && w.dim(2) == 3 && w.dim(3) == 3, ErrorKind::kUsage,
          "deconv2d: expected x [Cin,R,Q] and w [Cin,Cout,3,3], got " + to_string(x.shape()) +
              " and " + to_string(w.shape()));
  require(w.dim(0) == x.dim(0), ErrorKind::kUsage,
          "deconv2d: channel mismatch between input " + to_string(x.shape()) + " and kernel " +
              to_string(w.shape()));
  const std::size_t cin = x.dim(0), rows = x.dim(1), cols = x.dim(2), cout = w.dim(1);
  expect_shape(bias.shape(), {cout}, "deconv2d bias");
  const std::size_t n = rows * cols, k = cout * 9;
  std::vector<T> col(k * n);
  kernels::gemm<T>(Trans::kYes, Trans::kNo, k, n, cin, T(1), w.values().data(), x.values().data(),
                   T(0), col.data());
  Tensor<T> out = Tensor<T>::zeros({cout, rows, cols});
  T* y = out.mutable_values().data();
  kernels::col2im3x3(col.data(), cout, rows, cols, y);
  const auto bv = bias.values();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < n; ++i) y[o * n + i] += bv[o];
  if (auto* tape = tape_for({&x, &w, &bias})) {
    attach(tape, out, [x, w, bias, out, cin, rows, cols, cout, n, k]() {
      const T* g = out.grad().data();
      T* gx = grad_ptr(x);
      T* gw = grad_ptr(w);
      if (gx || gw) {
        std::vector<T> gcol(k * n);
        kernels::im2col3x3(g, cout, rows, cols, gcol.data());
        if (gx) {
          kernels::gemm<T>(Trans::kNo, Trans::kNo, cin, n, k, T(1), w.values().data(),
                           gcol.data(), T(1), gx);
        }
        if (gw) {
          kernels::gemm<T>(Trans::kNo, Trans::kYes, cin, k, n, T(1), x.values().data(),
                           gcol.data(), T(1), gw);
        }
      }
      if (T* gb = grad_ptr(bias)) {
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < n; ++i) gb[o] += g[o * n + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     double eps) {
  require(x.rank() >= 1, ErrorKind::kUsage, "layer_norm needs rank >= 1");
  const std::size_t d = x.shape().back();
  expect_shape(gain.shape(), {d}, "layer_norm gain");
  expect_shape(bias.shape(), {d}, "layer_norm bias");
  const std::size_t rows = x.numel() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  const T* xv = x.values().data();
  const T* gv = gain.values().data();
  const T* bv = bias.values().data();
  T* y = out.mutable_values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T mu = T(0);
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (xr[i] - mu) * is;
      (*xhat)[r * d + i] = h;
      y[r * d + i] = h * gv[i] + bv[i];
    }
  }
  if (auto* tape = tape_for({&x, &gain, &bias})) {
    attach(tape, out, [x, gain, bias, out, xhat, inv_std, rows, d]() {
      const T* g = out.grad().data();
      const T* gv = gain.values().data();
      if (T* gg = grad_ptr(gain)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * (*xhat)[r * d + i];
      }
      if (T* gb = grad_ptr(bias)) add_col_sums(g, rows, d, gb);
      if (T* gx = grad_ptr(x)) {
        for (std::size_t r = 0; r < rows; ++r) {
          T m1 = T(0), m2 = T(0);
          for (std::size_t i = 0; i < d; ++i) {
            const T gh = g[r * d + i] * gv[i];
            m1 += gh;
            m2 += gh * (*xhat)[r * d + i];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          for (std::size_t i = 0; i < d; ++i) {
            const T gh = g[r * d + i] * gv[i];
            gx[r * d + i] += (*inv_std)[r] * (gh - m1 - (*xhat)[r * d + i] * m2);
          }
        }
      }
    });
  }
  return out;
}

BlockGeometry BlockGeometry::make(std::size_t length, std::size_t size, std::size_t stride) {
  require(length >= 1 && stride >= 1 && size >= stride, ErrorKind::kUsage,
          "block geometry needs length >= 1 and size >= stride >= 1");
  BlockGeometry g;
  g.length = length;
  g.size = size;
  g.stride = stride;
  g.pad_front = size / 2;
  g.padded = length + 2 * g.pad_front;
  while ((g.padded - size) % stride != 0) ++g.padded;
  g.blocks = (g.padded - size) / stride + 1;
  return g;
}

template <typename T>
Tensor<T> unfold_blocks(const Tensor<T>& x, const BlockGeometry& g) {
  require(x.rank() == 3 && x.dim(1) == g.length, ErrorKind::kUsage,
          "unfold_blocks: expected [N, " + std::to_string(g.length) + ", D], got " +
              to_string(x.shape()));
  const std::size_t nseq = x.dim(0), d = x.dim(2), w = g.size * d;
  Tensor<T> out = Tensor<T>::zeros({nseq, g.blocks, w});
  const T* xv = x.values().data();
  T* y = out.mutable_values().data();
  // Source position of block b, slot i, or -1 for padding.
  auto src = [g](std::size_t b, std::size_t i) -> std::ptrdiff_t {
    const auto p = static_cast<std::ptrdiff_t>(b * g.stride + i) -
                   static_cast<std::ptrdiff_t>(g.pad_front);
    return (p >= 0 && p < static_cast<std::ptrdiff_t>(g.length)) ? p : -1;
  };
  for (std::size_t s = 0; s < nseq; ++s)
    for (std::size_t b = 0; b < g.blocks; ++b)
      for (std::size_t i = 0; i < g.size; ++i) {
        const auto p = src(b, i);
        if (p < 0) continue;
        std::copy_n(xv + (s * g.length + static_cast<std::size_t>(p)) * d, d,
                    y + (s * g.blocks + b) * w + i * d);
      }
  if (auto* tape = tape_for({&x})) {
    attach(tape, out, [x, out, g, nseq, d, w, src]() {
      const T* gy = out.grad().data();
      T* gx = x.node()->ensure_grad().data();
      for (std::size_t s = 0; s < nseq; ++s)
        for (std::size_t b = 0; b < g.blocks; ++b)
          for (std::size_t i = 0; i < g.size; ++i) {
            const auto p = src(b, i);
            if (p < 0) continue;
            T* dst = gx + (s * g.length + static_cast<std::size_t>(p)) * d;
            const T* from = gy + (s * g.blocks + b) * w + i * d;
            for (std::size_t e = 0; e < d; ++e) dst[e] += from[e];
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> overlap_add(const Tensor<T>& x, const BlockGeometry& g) {
  require(x.rank() == 3 && x.dim(1) == g.blocks && x.dim(2) % g.size == 0, ErrorKind::kUsage,
          "overlap_add: geometry mismatch for " + to_string(x.shape()) + " with " +
              std::to_string(g.blocks) + " blocks of size " + std::to_string(g.size));
  const std::size_t nseq = x.dim(0), w = x.dim(2), d = w / g.size;
  Tensor<T> out = Tensor<T>::zeros({nseq, g.length, d});
  const T* xv = x.values().data();
  T* y = out.mutable_values().data();
  auto dst = [g](std::size_t b, std::size_t i) -> std::ptrdiff_t {
    const auto p = static_cast<std::ptrdiff_t>(b * g.stride + i) -
                   static_cast<std::ptrdiff_t>(g.pad_front);
    return (p >= 0 && p < static_cast<std::ptrdiff_t>(g.length)) ? p : -1;
  };
  for (std::size_t s = 0; s < nseq; ++s)
    for (std::size_t b = 0; b < g.blocks; ++b)
      for (std::size_t i = 0; i < g.size; ++i) {
        const auto p = dst(b, i);
        if (p < 0) continue;
        T* to = y + (s * g.length + static_cast<std::size_t>(p)) * d;
        const T* from = xv + (s * g.blocks + b) * w + i * d;
        for (std::size_t e = 0; e < d; ++e) to[e] += from[e];
      }
  if (auto* tape = tape_for({&x})) {
    attach(tape, out, [x, out, g, nseq, d, w, dst]() {
      const T* gy = out.grad().data();
      T* gx = x.node()->ensure_grad().data();
      for (std::size_t s = 0; s < nseq; ++s)
        for (std::size_t b = 0; b < g.blocks; ++b)
          for (std::size_t i = 0; i < g.size; ++i) {
            const auto p = dst(b, i);
            if (p < 0) continue;
            const T* from = gy + (s * g.length + static_cast<std::size_t>(p)) * d;
            T* to = gx + (s * g.blocks + b) * w + i * d;
            for (std::size_t e = 0; e < d; ++e) to[e] += from[e];
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> deconv1d_fold(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                        const BlockGeometry& g) {
  require(w.rank() == 2 && w.dim(1) % g.size == 0, ErrorKind::kUsage,
          "deconv1d_fold: kernel " + to_string(w.shape()) + " does not match block size " +
              std::to_string(g.size));
  require(x.rank() == 3 && x.dim(1) == g.blocks, ErrorKind::kUsage,
          "deconv1d_fold: input " + to_string(x.shape()) + " does not have " +
              std::to_string(g.blocks) + " blocks");
  const Tensor<T> expanded = matmul(x, w);
  const Tensor<T> folded = overlap_add(expanded, g);
  return add(folded, bias);
}

template <typename T>
Tensor<T> lstm(const Tensor<T>& x, const Tensor<T>& w_ih, const Tensor<T>& w_hh,
               const Tensor<T>& bias, bool reverse) {
  require(x.rank() == 3 && w_ih.rank() == 2 && w_ih.dim(0) == x.dim(2) && w_ih.dim(1) % 4 == 0,
          ErrorKind::kUsage,
          "lstm: input " + to_string(x.shape()) + " incompatible with w_ih " +
              to_string(w_ih.shape()));
  const std::size_t nseq = x.dim(0), steps = x.dim(1), din = x.dim(2), h4 = w_ih.dim(1),
                    hid = h4 / 4;
  expect_shape(w_hh.shape(), {hid, h4}, "lstm w_hh");
  expect_shape(bias.shape(), {h4}, "lstm bias");
  const bool recording = tape_for({&x, &w_ih, &w_hh, &bias}) != nullptr;

  // Gate pre-activations from the input, then activations in place.
  auto gates = std::make_shared<std::vector<T>>(nseq * steps * h4);
  kernels::gemm<T>(Trans::kNo, Trans::kNo, nseq * steps, h4, din, T(1), x.values().data(),
                   w_ih.values().data(), T(0), gates->data());
  auto cells = std::make_shared<std::vector<T>>(nseq * steps * hid);
  Tensor<T> out = Tensor<T>::zeros({nseq, steps, hid});
  T* hv = out.mutable_values().data();
  const T* bv = bias.values().data();
  std::vector<T> hprev(nseq * hid, T(0)), cprev(nseq * hid, T(0)), rec(nseq * h4);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    kernels::gemm<T>(Trans::kNo, Trans::kNo, nseq, h4, hid, T(1), hprev.data(),
                     w_hh.values().data(), T(0), rec.data());
    for (std::size_t s = 0; s < nseq; ++s) {
      T* a = gates->data() + (s * steps + t) * h4;
      const T* r = rec.data() + s * h4;
      T* c = cells->data() + (s * steps + t) * hid;
      T* h = hv + (s * steps + t) * hid;
      for (std::size_t j = 0; j < hid; ++j) {
        const T ig = sigm(a[j] + r[j] + bv[j]);
        const T fg = sigm(a[hid + j] + r[hid + j] + bv[hid + j]);
        const T gg = std::tanh(a[2 * hid + j] + r[2 * hid + j] + bv[2 * hid + j]);
        const T og = sigm(a[3 * hid + j] + r[3 * hid + j] + bv[3 * hid + j]);
        a[j] = ig;
        a[hid + j] = fg;
        a[2 * hid + j] = gg;
        a[3 * hid + j] = og;
        c[j] = fg * cprev[s * hid + j] + ig * gg;
        h[j] = og * std::tanh(c[j]);
        cprev[s * hid + j] = c[j];
        hprev[s * hid + j] = h[j];
      }
    }
  }
  if (recording) {
    attach(Tape<T>::active(), out, [x, w_ih, w_hh, bias, out, gates, cells, nseq, steps, din, h4,
                                    hid, reverse]() {
      const T* gy = out.grad().data();
      const T* hv = out.values().data();
      std::vector<T> dpre(nseq * steps * h4, T(0));
      std::vector<T> dh(nseq * hid, T(0)), dc(nseq * hid, T(0)), dhrec(nseq * hid);
      std::vector<T> hprev(nseq * hid);
      T* gwhh = grad_ptr(w_hh);
      for (std::size_t k = steps; k-- > 0;) {
        const std::size_t t = reverse ? steps - 1 - k : k;
        const bool first = k == 0;
        const std::size_t tp = reverse ? t + 1 : t - 1;  // previous step in processing order
        for (std::size_t s = 0; s < nseq; ++s) {
          const T* a = gates->data() + (s * steps + t) * h4;
          const T* c = cells->data() + (s * steps + t) * hid;
          const T* cp = first ? nullptr : cells->data() + (s * steps + tp) * hid;
          T* da = dpre.data() + (s * steps + t) * h4;
          for (std::size_t j = 0; j < hid; ++j) {
            const T ig = a[j], fg = a[hid + j], gg = a[2 * hid + j], og = a[3 * hid + j];
            const T dht = dh[s * hid + j] + gy[(s * steps + t) * hid + j];
            const T tc = std::tanh(c[j]);
            const T dct = dc[s * hid + j] + dht * og * (T(1) - tc * tc);
            const T cprev = first ? T(0) : cp[j];
            da[j] = dct * gg * ig * (T(1) - ig);
            da[hid + j] = dct * cprev * fg * (T(1) - fg);
            da[2 * hid + j] = dct * ig * (T(1) - gg * gg);
            da[3 * hid + j] = dht * tc * og * (T(1) - og);
            dc[s * hid + j] = dct * fg;
            hprev[s * hid + j] = first ? T(0) : hv[(s * steps + tp) * hid + j];
          }
        }
        // da for this step is strided inside dpre; gather it.
        std::vector<T> dat(nseq * h4);
        for (std::size_t s = 0; s < nseq; ++s)
          std::copy_n(dpre.data() + (s * steps + t) * h4, h4, dat.data() + s * h4);
        kernels::gemm<T>(Trans::kNo, Trans::kYes, nseq, hid, h4, T(1), dat.data(),
                         w_hh.values().data(), T(0), dh.data());
        if (gwhh && !first) {
          kernels::gemm<T>(Trans::kYes, Trans::kNo, hid, h4, nseq, T(1), hprev.data(), dat.data(),
                           T(1), gwhh);
        }
      }
      if (T* gx = grad_ptr(x)) {
        kernels::gemm<T>(Trans::kNo, Trans::kYes, nseq * steps, din, h4, T(1), dpre.data(),
                         w_ih.values().data(), T(1), gx);
      }
      if (T* gw = grad_ptr(w_ih)) {
        kernels::gemm<T>(Trans::kYes, Trans::kNo, din, h4, nseq * steps, T(1), x.values().data(),
                         dpre.data(), T(1), gw);
      }
      if (T* gb = grad_ptr(bias)) add_col_sums(dpre.data(), nseq * steps, h4, gb);
    });
  }
  return out;
}

template <typename T>
Tensor<T> gru(const Tensor<T>& x, const Tensor<T>& w_ih, const Tensor<T>& w_hh,
              const Tensor<T>& b_ih, const Tensor<T>& b_hh, bool reverse) {
  require(x.rank() == 3 && w_ih.rank() == 2 && w_ih.dim(0) == x.dim(2) && w_ih.dim(1) % 3 == 0,
          ErrorKind::kUsage,
          "gru: input " + to_string(x.shape()) + " incompatible with w_ih " +
              to_string(w_ih.shape()));
  const std::size_t nseq = x.dim(0), steps = x.dim(1), din = x.dim(2), h3 = w_ih.dim(1),
                    hid = h3 / 3;
  expect_shape(w_hh.shape(), {hid, h3}, "gru w_hh");
  expect_shape(b_ih.shape(), {h3}, "gru b_ih");
  expect_shape(b_hh.shape(), {h3}, "gru b_hh");
  const bool recording = tape_for({&x, &w_ih, &w_hh, &b_ih, &b_hh}) != nullptr;

  // Per step: r, z, n activations and the recurrent candidate term h U_n + b_hn.
  auto gates = std::make_shared<std::vector<T>>(nseq * steps * h3);
  auto rec_n = std::make_shared<std::vector<T>>(nseq * steps * hid);
  kernels::gemm<T>(Trans::kNo, Trans::kNo, nseq * steps, h3, din, T(1), x.values().data(),
                   w_ih.values().data(), T(0), gates->data());
  Tensor<T> out = Tensor<T>::zeros({nseq, steps, hid});
  T* hv = out.mutable_values().data();
  const T* bi = b_ih.values().data();
  const T* bh = b_hh.values().data();
  std::vector<T> hprev(nseq * hid, T(0)), rec(nseq * h3);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    kernels::gemm<T>(Trans::kNo, Trans::kNo, nseq, h3, hid, T(1), hprev.data(),
                     w_hh.values().data(), T(0), rec.data());
    for (std::size_t s = 0; s < nseq; ++s) {
      T* a = gates->data() + (s * steps + t) * h3;
      const T* r = rec.data() + s * h3;
      T* rn = rec_n->data() + (s * steps + t) * hid;
      T* h = hv + (s * steps + t) * hid;
      for (std::size_t j = 0; j < hid; ++j) {
        const T rg = sigm(a[j] + bi[j] + r[j] + bh[j]);
        const T zg = sigm(a[hid + j] + bi[hid + j] + r[hid + j] + bh[hid + j]);
        rn[j] = r[2 * hid + j] + bh[2 * hid + j];
        const T ng = std::tanh(a[2 * hid + j] + bi[2 * hid + j] + rg * rn[j]);
        a[j] = rg;
        a[hid + j] = zg;
        a[2 * hid + j] = ng;
        h[j] = (T(1) - zg) * ng + zg * hprev[s * hid + j];
        hprev[s * hid + j] = h[j];
      }
    }
  }
  if (recording) {
    attach(Tape<T>::active(), out, [x, w_ih, w_hh, b_ih, b_hh, out, gates, rec_n, nseq, steps,
                                    din, h3, hid, reverse]() {
      const T* gy = out.grad().data();
      const T* hv = out.values().data();
      std::vector<T> dxw(nseq * steps * h3, T(0));
      std::vector<T> dh(nseq * hid, T(0)), dhw(nseq * h3), hprev(nseq * hid), dh_next(nseq * hid);
      T* gwhh = grad_ptr(w_hh);
      T* gbhh = grad_ptr(b_hh);
      for (std::size_t k = steps; k-- > 0;) {
        const std::size_t t = reverse ? steps - 1 - k : k;
        const bool first = k == 0;
        const std::size_t tp = reverse ? t + 1 : t - 1;
        for (std::size_t s = 0; s < nseq; ++s) {
          const T* a = gates->data() + (s * steps + t) * h3;
          const T* rn = rec_n->data() + (s * steps + t) * hid;
          T* dx = dxw.data() + (s * steps + t) * h3;
          T* dr = dhw.data() + s * h3;
          for (std::size_t j = 0; j < hid; ++j) {
            const T rg = a[j], zg = a[hid + j], ng = a[2 * hid + j];
            const T hp = first ? T(0) : hv[(s * steps + tp) * hid + j];
            hprev[s * hid + j] = hp;
            const T dht = dh[s * hid + j] + gy[(s * steps + t) * hid + j];
            const T dn = dht * (T(1) - zg) * (T(1) - ng * ng);
            const T dz = dht * (hp - ng) * zg * (T(1) - zg);
            const T drg = dn * rn[j] * rg * (T(1) - rg);
            dx[j] = drg;
            dx[hid + j] = dz;
            dx[2 * hid + j] = dn;
            dr[j] = drg;
            dr[hid + j] = dz;
            dr[2 * hid + j] = dn * rg;
            dh_next[s * hid + j] = dht * zg;
          }
        }
        kernels::gemm<T>(Trans::kNo, Trans::kYes, nseq, hid, h3, T(1), dhw.data(),
                         w_hh.values().data(), T(1), dh_next.data());
        if (gwhh && !first) {
          kernels::gemm<T>(Trans::kYes, Trans::kNo, hid, h3, nseq, T(1), hprev.data(), dhw.data(),
                           T(1), gwhh);
        }
        if (gbhh) add_col_sums(dhw.data(), nseq, h3, gbhh);
        dh.swap(dh_next);
      }
      if (T* gx = grad_ptr(x)) {
        kernels::gemm<T>(Trans::kNo, Trans::kYes, nseq * steps, din, h3, T(1), dxw.data(),
                         w_ih.values().data(), T(1), gx);
      }
      if (T* gw = grad_ptr(w_ih)) {
        kernels::gemm<T>(Trans::kYes, Trans::kNo, din, h3, nseq * steps, T(1), x.values().data(),
                         dxw.data(), T(1), gw);
      }
      if (T* gb = grad_ptr(b_ih)) add_col_sums(dxw.data(), nseq * steps, h3, gb);
    });
  }
  return out;
}

template <typename T>
Tensor<T> causal_dwconv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(x.rank() == 3 && w.rank() == 2 && w.dim(0) == x.dim(2), ErrorKind::kUsage,
          "causal_dwconv1d: input " + to_string(x.shape()) + " incompatible with kernel " +
              to_string(w.shape()));
  const std::size_t nseq = x.dim(0), steps = x.dim(1), ch = x.dim(2), width = w.dim(1);
  expect_shape(bias.shape(), {ch}, "causal_dwconv1d bias");
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  const T* bv = bias.values().data();
  T* y = out.mutable_values().data();
  for (std::size_t s = 0; s < nseq; ++s)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t e = 0; e < ch; ++e) {
        T acc = bv[e];
        for (std::size_t k = 0; k < width; ++k) {
          if (t + k + 1 < width) continue;
          acc += wv[e * width + k] * xv[(s * steps + t + k + 1 - width) * ch + e];
        }
        y[(s * steps + t) * ch + e] = acc;
      }
  if (auto* tape = tape_for({&x, &w, &bias})) {
    attach(tape, out, [x, w, bias, out, nseq, steps, ch, width]() {
      const T* g = out.grad().data();
      const T* xv = x.values().data();
      const T* wv = w.values().data();
      T* gx = grad_ptr(x);
      T* gw = grad_ptr(w);
      T* gb = grad_ptr(bias);
      for (std::size_t s = 0; s < nseq; ++s)
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t e = 0; e < ch; ++e) {
            const T gv = g[(s * steps + t) * ch + e];
            if (gb) gb[e] += gv;
            for (std::size_t k = 0; k < width; ++k) {
              if (t + k + 1 < width) continue;
              const std::size_t src = (s * steps + t + k + 1 - width) * ch + e;
              if (gx) gx[src] += gv * wv[e * width + k];
              if (gw) gw[e * width + k] += gv * xv[src];
            }
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d) {
  require(u.rank() == 3 && a_log.rank() == 2 && a_log.dim(0) == u.dim(2), ErrorKind::kUsage,
          "selective_scan: input " + to_string(u.shape()) + " incompatible with a_log " +
              to_string(a_log.shape()));
  kernels::ScanDims dims{u.dim(0), u.dim(1), u.dim(2), a_log.dim(1)};
  expect_shape(delta.shape(), u.shape(), "selective_scan delta");
  expect_shape(b.shape(), {dims.batch, dims.length, dims.state}, "selective_scan b");
  expect_shape(c.shape(), {dims.batch, dims.length, dims.state}, "selective_scan c");
  expect_shape(d.shape(), {dims.channels}, "selective_scan d");
  auto a = std::make_shared<std::vector<T>>(a_log.numel());
  for (std::size_t i = 0; i < a->size(); ++i) (*a)[i] = -std::exp(a_log.values()[i]);
  Tensor<T> out = Tensor<T>::zeros(u.shape());
  kernels::selective_scan_forward<T>(dims, u.values().data(), delta.values().data(), a->data(),
                                     b.values().data(), c.values().data(), d.values().data(),
                                     out.mutable_values().data());
  if (auto* tape = tape_for({&u, &delta, &a_log, &b, &c, &d})) {
    attach(tape, out, [u, delta, a_log, b, c, d, out, a, dims]() {
      // The kernel accumulates into every buffer, so route absent grads to scratch.
      auto slot = [](const Tensor<T>& t, std::vector<T>& scratch) {
        if (T* p = grad_ptr(t)) return p;
        scratch.assign(t.numel(), T(0));
        return scratch.data();
      };
      std::vector<T> s_u, s_dt, s_b, s_c, s_d;
      std::vector<T> ga(a->size(), T(0));
      kernels::selective_scan_backward<T>(
          dims, u.values().data(), delta.values().data(), a->data(), b.values().data(),
          c.values().data(), d.values().data(), out.grad().data(), slot(u, s_u),
          slot(delta, s_dt), ga.data(), slot(b, s_b), slot(c, s_c), slot(d, s_d));
      if (T* gl = grad_ptr(a_log)) {
        for (std::size_t i = 0; i < ga.size(); ++i) gl[i] += ga[i] * (*a)[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> istft(const Tensor<T>& x, const signal::StftConfig& cfg, std::size_t out_length) {
  cfg.validate();
  require(x.rank() == 3 && x.dim(0) % 2 == 0 && x.dim(2) == cfg.bins(), ErrorKind::kUsage,
          "istft: expected [2C, T, " + std::to_string(cfg.bins()) + "], got " +
              to_string(x.shape()));
  const std::size_t speakers = x.dim(0) / 2, frames = x.dim(1), bins = x.dim(2);
  const std::size_t plane = frames * bins;
  Tensor<T> out = Tensor<T>::zeros({speakers, out_length});
  std::vector<std::complex<double>> buf(plane);
  std::vector<double> wave(out_length);
  const T* xv = x.values().data();
  T* y = out.mutable_values().data();
  for (std::size_t c = 0; c < speakers; ++c) {
    const T* re = xv + 2 * c * plane;
    const T* im = re + plane;
    for (std::size_t i = 0; i < plane; ++i) buf[i] = {double(re[i]), double(im[i])};
    signal::istft_frames(buf, frames, cfg, wave);
    for (std::size_t i = 0; i < out_length; ++i) y[c * out_length + i] = static_cast<T>(wave[i]);
  }
  if (auto* tape = tape_for({&x})) {
    attach(tape, out, [x, out, cfg, speakers, frames, plane, out_length]() {
      const T* g = out.grad().data();
      T* gx = x.node()->ensure_grad().data();
      std::vector<double> gw(out_length);
      std::vector<std::complex<double>> gf(plane);
      for (std::size_t c = 0; c < speakers; ++c) {
        for (std::size_t i = 0; i < out_length; ++i) gw[i] = double(g[c * out_length + i]);
        signal::istft_frames_adjoint(gw, frames, cfg, gf);
        T* gre = gx + 2 * c * plane;
        T* gim = gre + plane;
        for (std::size_t i = 0; i < plane; ++i) {
          gre[i] += static_cast<T>(gf[i].real());
          gim[i] += static_cast<T>(gf[i].imag());
        }
      }
    });
  }
  return out;
}

#define PS2_INSTANTIATE_FUSED(T)                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> deconv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> unfold_blocks(const Tensor<T>&, const BlockGeometry&);                  \
  template Tensor<T> overlap_add(const Tensor<T>&, const BlockGeometry&);                    \
  template Tensor<T> deconv1d_fold(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   const BlockGeometry&);                                    \
  template Tensor<T> lstm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                          const Tensor<T>&, bool);                                           \
  template Tensor<T> gru(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                         const Tensor<T>&, const Tensor<T>&, bool);                          \
  template Tensor<T> causal_dwconv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                    const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> istft(const Tensor<T>&, const signal::StftConfig&, std::size_t);

PS2_INSTANTIATE_FUSED(float)
PS2_INSTANTIATE_FUSED(double)

}  // namespace ps2::ad
