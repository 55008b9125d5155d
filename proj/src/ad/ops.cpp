#include "ps2/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ps2/common/error.hpp"
#include "ps2/kernels/kernels.hpp"

namespace ps2::ad {

using kernels::Trans;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

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

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
  return st;
}

// Per-output-dimension strides into an input broadcast to `out`.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  const auto in_st = strides_of(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t d = 0; d < in.size(); ++d) {
    st[off + d] = in[d] == 1 ? 0 : in_st[d];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& as,
                        const std::vector<std::size_t>& bs, F&& f) {
  const std::size_t n = numel(out);
  const std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += as[d];
      ib += bs[d];
      if (idx[d] < out[d]) break;
      ia -= as[d] * out[d];
      ib -= bs[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.mutable_values();
  const bool same = a.shape() == b.shape();
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      case BinaryKind::kMul: return x * y;
      case BinaryKind::kDiv: return x / y;
    }
    return T(0);
  };
  const auto as = broadcast_strides(a.shape(), out_shape);
  const auto bs = broadcast_strides(b.shape(), out_shape);
  if (same) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, as, bs, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      ov[i] = apply(av[ia], bv[ib]);
    });
  }
  if (auto* tape = tape_for({&a, &b})) {
    attach(tape, out, [a, b, out, kind, same, as, bs]() {
      const auto g = out.grad();
      const auto av = a.values();
      const auto bv = b.values();
      T* ga = a.requires_grad() ? a.node()->ensure_grad().data() : nullptr;
      T* gb = b.requires_grad() ? b.node()->ensure_grad().data() : nullptr;
      auto step = [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (kind) {
          case BinaryKind::kAdd:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] += g[i];
            break;
          case BinaryKind::kSub:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] -= g[i];
            break;
          case BinaryKind::kMul:
            if (ga) ga[ia] += g[i] * bv[ib];
            if (gb) gb[ib] += g[i] * av[ia];
            break;
          case BinaryKind::kDiv:
            if (ga) ga[ia] += g[i] / bv[ib];
            if (gb) gb[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
            break;
        }
      };
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
      } else {
        for_each_broadcast(out.shape(), as, bs, step);
      }
    });
  }
  return out;
}

// y = f(x); backward multiplies by df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto av = a.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, df]() {
      const auto g = out.grad();
      const auto x = a.values();
      const auto y = out.values();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  }
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
  require(axis < s.size(), ErrorKind::kUsage,
          std::string(op) + ": axis " + std::to_string(axis) +
              " out of range for shape " + to_string(s));
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    require(da == db || da == 1 || db == 1, ErrorKind::kUsage,
            "incompatible shapes " + to_string(a) + " and " + to_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinaryKind::kAdd); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinaryKind::kSub); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinaryKind::kMul); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinaryKind::kDiv); }

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(a, [](T x) { return stable_sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x * stable_sigmoid(x); },
      [](T x, T) {
        const T s = stable_sigmoid(x);
        return s + x * s * (T(1) - s);
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
      [](T x, T) { return stable_sigmoid(x); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); },
               [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary(a, [slope](T x) { return x > T(0) ? x : slope * x; },
               [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
               [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  require(x.rank() >= 1 && slope.numel() == x.shape().back(), ErrorKind::kUsage,
          "prelu: slope " + to_string(slope.shape()) + " does not match last axis of " +
              to_string(x.shape()));
  const std::size_t c = slope.numel();
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto xv = x.values();
  const auto sv = slope.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    ov[i] = xv[i] > T(0) ? xv[i] : sv[i % c] * xv[i];
  }
  if (auto* tape = tape_for({&x, &slope})) {
    attach(tape, out, [x, slope, out, c]() {
      const auto g = out.grad();
      const auto xv = x.values();
      const auto sv = slope.values();
      if (x.requires_grad()) {
        auto& gx = x.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (xv[i] > T(0) ? T(1) : sv[i % c]);
      }
      if (slope.requires_grad()) {
        auto& gs = slope.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] <= T(0)) gs[i % c] += g[i] * xv[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel(shape) == a.numel(), ErrorKind::kUsage,
          "reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()));
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const Shape& in = a.shape();
  require(axes.size() == in.size(), ErrorKind::kUsage,
          "permute: axis list does not match rank of " + to_string(in));
  Shape out_shape(in.size());
  const auto in_st = strides_of(in);
  std::vector<std::size_t> src_st(in.size());
  std::vector<bool> seen(in.size(), false);
  for (std::size_t d = 0; d < axes.size(); ++d) {
    require(axes[d] < in.size() && !seen[axes[d]], ErrorKind::kUsage, "permute: invalid axes");
    seen[axes[d]] = true;
    out_shape[d] = in[axes[d]];
    src_st[d] = in_st[axes[d]];
  }
  // Gather index for every output element.
  const std::size_t n = a.numel();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  const std::vector<std::size_t> zero(in.size(), 0);
  for_each_broadcast(out_shape, src_st, zero,
                     [&](std::size_t i, std::size_t src, std::size_t) { (*index)[i] = src; });
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto av = a.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[(*index)[i]];
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, index]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[(*index)[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() >= 2, ErrorKind::kUsage, "transpose needs rank >= 2");
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis(a.shape(), axis, "slice");
  require(begin <= end && end <= a.dim(axis), ErrorKind::kUsage,
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
              ") out of bounds for " + to_string(a.shape()));
  const AxisSplit sp = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const std::size_t w = (end - begin) * sp.inner;
  const auto av = a.values();
  auto ov = out.mutable_values();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(av.begin() + (o * sp.len + begin) * sp.inner, w, ov.begin() + o * w);
  }
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, sp, begin, w]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        T* dst = ga.data() + (o * sp.len + begin) * sp.inner;
        const T* src = g.data() + o * w;
        for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::kUsage, "concat of nothing");
  check_axis(parts[0].shape(), axis, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(s.size() == out_shape.size(), ErrorKind::kUsage,
            "concat: incompatible shapes " + to_string(parts[0].shape()) + " and " + to_string(s));
    s[axis] = 0;
    Shape ref = out_shape;
    ref[axis] = 0;
    require(s == ref, ErrorKind::kUsage,
            "concat: incompatible shapes " + to_string(parts[0].shape()) + " and " +
                to_string(p.shape()));
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit sp = split_at(out_shape, axis);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto ov = out.mutable_values();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t w = p.dim(axis) * sp.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.begin() + o * w, w, ov.begin() + (o * sp.len + offset) * sp.inner);
    }
    offset += p.dim(axis);
  }
  std::vector<const Tensor<T>*> ptrs;
  Tape<T>* tape = Tape<T>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    attach(tape, out, [parts, out, sp, offsets, axis]() {
      const auto g = out.grad();
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!parts[k].requires_grad()) continue;
        auto& gp = parts[k].node()->ensure_grad();
        const std::size_t w = parts[k].dim(axis) * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* src = g.data() + (o * sp.len + offsets[k]) * sp.inner;
          T* dst = gp.data() + o * w;
          for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> pad(const Tensor<T>& a, std::size_t axis, std::size_t before, std::size_t after) {
  check_axis(a.shape(), axis, "pad");
  const AxisSplit sp = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] += before + after;
  const std::size_t out_len = out_shape[axis];
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto av = a.values();
  auto ov = out.mutable_values();
  const std::size_t w = sp.len * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(av.begin() + o * w, w, ov.begin() + (o * out_len + before) * sp.inner);
  }
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, sp, before, out_len, w]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const T* src = g.data() + (o * out_len + before) * sp.inner;
        T* dst = ga.data() + o * w;
        for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> flip(const Tensor<T>& a, std::size_t axis) {
  check_axis(a.shape(), axis, "flip");
  const AxisSplit sp = split_at(a.shape(), axis);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto av = a.values();
  auto ov = out.mutable_values();
  auto src_of = [sp](std::size_t o, std::size_t l) { return (o * sp.len + (sp.len - 1 - l)) * sp.inner; };
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      std::copy_n(av.begin() + src_of(o, l), sp.inner, ov.begin() + (o * sp.len + l) * sp.inner);
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, sp, src_of]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
          for (std::size_t i = 0; i < sp.inner; ++i)
            ga[src_of(o, l) + i] += g[(o * sp.len + l) * sp.inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape) {
  require(broadcast_shape(a.shape(), shape) == shape, ErrorKind::kUsage,
          "cannot broadcast " + to_string(a.shape()) + " to " + to_string(shape));
  return add(a, Tensor<T>::zeros(shape));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto av = a.values();
  T acc = T(0);
  for (T v : av) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out]() {
      const T g = out.grad()[0];
      auto& ga = a.node()->ensure_grad();
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
  check_axis(a.shape(), axis, "sum");
  const AxisSplit sp = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto av = a.values();
  auto ov = out.mutable_values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        ov[o * sp.inner + i] += av[(o * sp.len + l) * sp.inner + i];
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, sp]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
          for (std::size_t i = 0; i < sp.inner; ++i)
            ga[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  check_axis(a.shape(), axis, "mean");
  return scale(sum(a, axis), T(1) / static_cast<T>(a.dim(axis)));
}

template <typename T>
Tensor<T> max(const Tensor<T>& a) {
  require(a.numel() > 0, ErrorKind::kUsage, "max of empty tensor");
  const auto av = a.values();
  const std::size_t arg = static_cast<std::size_t>(std::max_element(av.begin(), av.end()) - av.begin());
  Tensor<T> out = Tensor<T>::scalar(av[arg]);
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, arg]() { a.node()->ensure_grad()[arg] += out.grad()[0]; });
  }
  return out;
}

template <typename T>
Tensor<T> max(const Tensor<T>& a, std::size_t axis) {
  check_axis(a.shape(), axis, "max");
  const AxisSplit sp = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const auto av = a.values();
  auto ov = out.mutable_values();
  auto arg = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = (o * sp.len) * sp.inner + i;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const std::size_t k = (o * sp.len + l) * sp.inner + i;
        if (av[k] > av[best]) best = k;
      }
      (*arg)[o * sp.inner + i] = best;
      ov[o * sp.inner + i] = av[best];
    }
  }
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, arg]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t j = 0; j < g.size(); ++j) ga[(*arg)[j]] += g[j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  require(a.rank() >= 1, ErrorKind::kUsage, "softmax_rows needs rank >= 1");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.numel() / cols;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto av = a.values();
  auto ov = out.mutable_values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * cols;
    T* y = ov.data() + r * cols;
    const T m = *std::max_element(x, x + cols);
    T s = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - m);
      s += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
  }
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, rows, cols]() {
      const auto g = out.grad();
      const auto y = out.values();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(x.rank() >= 1 && w.rank() == 2 && x.shape().back() == w.dim(0), ErrorKind::kUsage,
          "matmul: incompatible shapes " + to_string(x.shape()) + " and " + to_string(w.shape()));
  const std::size_t k = w.dim(0), n = w.dim(1);
  const std::size_t m = x.numel() / k;
  require(!bias.defined() || bias.numel() == n, ErrorKind::kUsage,
          "linear: bias " + (bias.defined() ? to_string(bias.shape()) : std::string("-")) +
              " does not match output width " + std::to_string(n));
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto ov = out.mutable_values();
  kernels::gemm<T>(Trans::kNo, Trans::kNo, m, n, k, T(1), x.values().data(), w.values().data(),
                   T(0), ov.data());
  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ov[r * n + c] += bv[c];
  }
  if (auto* tape = tape_for({&x, &w, &bias})) {
    attach(tape, out, [x, w, bias, out, m, n, k]() {
      const T* g = out.grad().data();
      if (x.requires_grad()) {
        kernels::gemm<T>(Trans::kNo, Trans::kYes, m, k, n, T(1), g, w.values().data(), T(1),
                         x.node()->ensure_grad().data());
      }
      if (w.requires_grad()) {
        kernels::gemm<T>(Trans::kYes, Trans::kNo, k, n, m, T(1), x.values().data(), g, T(1),
                         w.node()->ensure_grad().data());
      }
      if (bias.defined() && bias.requires_grad()) {
        auto& gb = bias.node()->ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return linear(a, b, Tensor<T>());
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), ErrorKind::kUsage,
          "bmm: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t batch = a.dim(0);
  const std::size_t m = trans_a ? a.dim(2) : a.dim(1);
  const std::size_t k = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  require(k == kb, ErrorKind::kUsage,
          "bmm: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  Tensor<T> out = Tensor<T>::zeros({batch, m, n});
  const Trans ta = trans_a ? Trans::kYes : Trans::kNo;
  const Trans tb = trans_b ? Trans::kYes : Trans::kNo;
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm<T>(ta, tb, m, n, k, T(1), a.values().data() + i * m * k,
                     b.values().data() + i * k * n, T(0), out.mutable_values().data() + i * m * n);
  }
  if (auto* tape = tape_for({&a, &b})) {
    attach(tape, out, [a, b, out, batch, m, n, k, trans_a, trans_b]() {
      const T* g = out.grad().data();
      T* ga = a.requires_grad() ? a.node()->ensure_grad().data() : nullptr;
      T* gb = b.requires_grad() ? b.node()->ensure_grad().data() : nullptr;
      const T* av = a.values().data();
      const T* bv = b.values().data();
      for (std::size_t i = 0; i < batch; ++i) {
        const T* gi = g + i * m * n;
        const T* ai = av + i * m * k;
        const T* bi = bv + i * k * n;
        if (ga) {
          T* gai = ga + i * m * k;
          if (!trans_a) {  // dA [m,k] = g op(B)^T
            kernels::gemm<T>(Trans::kNo, trans_b ? Trans::kNo : Trans::kYes, m, k, n, T(1), gi,
                             bi, T(1), gai);
          } else {  // stored [k,m] = op(B) g^T
            kernels::gemm<T>(trans_b ? Trans::kYes : Trans::kNo, Trans::kYes, k, m, n, T(1), bi,
                             gi, T(1), gai);
          }
        }
        if (gb) {
          T* gbi = gb + i * k * n;
          if (!trans_b) {  // dB [k,n] = op(A)^T g
            kernels::gemm<T>(trans_a ? Trans::kNo : Trans::kYes, Trans::kNo, k, n, m, T(1), ai,
                             gi, T(1), gbi);
          } else {  // stored [n,k] = g^T op(A)
            kernels::gemm<T>(Trans::kYes, trans_a ? Trans::kYes : Trans::kNo, n, k, m, T(1), gi,
                             ai, T(1), gbi);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng, bool training) {
  require(p >= 0.0 && p < 1.0, ErrorKind::kUsage, "dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return a;
  auto mask = std::make_shared<std::vector<T>>(a.numel());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& v : *mask) v = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto av = a.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * (*mask)[i];
  if (auto* tape = tape_for({&a})) {
    attach(tape, out, [a, out, mask]() {
      const auto g = out.grad();
      auto& ga = a.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

#define PS2_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
  template Tensor<T> neg(const Tensor<T>&);                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                \
  template Tensor<T> log(const Tensor<T>&);                                                \
  template Tensor<T> tanh(const Tensor<T>&);                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                            \
  template Tensor<T> silu(const Tensor<T>&);                                               \
  template Tensor<T> softplus(const Tensor<T>&);                                           \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                      \
  template Tensor<T> square(const Tensor<T>&);                                             \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                        \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);           \
  template Tensor<T> transpose(const Tensor<T>&);                                          \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                   \
  template Tensor<T> pad(const Tensor<T>&, std::size_t, std::size_t, std::size_t);         \
  template Tensor<T> flip(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                         \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> sum(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> mean(const Tensor<T>&);                                               \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> max(const Tensor<T>&);                                                \
  template Tensor<T> max(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                  \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);

PS2_INSTANTIATE_OPS(float)
PS2_INSTANTIATE_OPS(double)

}  // namespace ps2::ad
