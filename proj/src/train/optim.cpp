#include "ps2/train/optim.hpp"

#include <cmath>

#include "ps2/common/error.hpp"

namespace ps2::train {

template <typename T>
double grad_norm(const nn::ParameterStore<T>& store) {
  double sq = 0;
  for (const auto& e : store.entries())
    for (T g : e.tensor.grad()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

template <typename T>
ClipResult clip_grad_norm(nn::ParameterStore<T>& store, double max_norm) {
  require(max_norm > 0.0, ErrorKind::kUsage, "clip_grad_norm: max_norm must be positive");
  ClipResult r;
  r.norm = grad_norm(store);
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto& e : store.entries()) {
      if (!e.tensor.has_grad()) continue;
      for (T& g : e.tensor.mutable_grad()) g = static_cast<T>(g * r.scale);
    }
  }
  return r;
}

template <typename T>
void adam_step(nn::ParameterStore<T>& store, OptimState& s) {
  if (s.m.empty()) {
    for (const auto& e : store.entries()) {
      s.m.emplace_back(e.tensor.numel(), 0.0);
      s.v.emplace_back(e.tensor.numel(), 0.0);
    }
  }
  require(s.m.size() == store.size(), ErrorKind::kUsage,
          "optimizer state was built for a different parameter store");
  ++s.step;
  const auto& c = s.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  auto& entries = store.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& t = entries[k].tensor;
    require(s.m[k].size() == t.numel(), ErrorKind::kUsage,
            "optimizer state shape mismatch for " + entries[k].name);
    const auto grad = t.grad();
    const bool has = t.has_grad();
    auto values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has ? static_cast<double>(grad[i]) : 0.0;
      s.m[k][i] = c.beta1 * s.m[k][i] + (1 - c.beta1) * g;
      s.v[k][i] = c.beta2 * s.v[k][i] + (1 - c.beta2) * g * g;
      const double mhat = s.m[k][i] / bc1, vhat = s.v[k][i] / bc2;
      values[i] = static_cast<T>(values[i] - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

#define PS2_INSTANTIATE_OPTIM(T)                                            \
  template double grad_norm(const nn::ParameterStore<T>&);                  \
  template ClipResult clip_grad_norm(nn::ParameterStore<T>&, double);       \
  template void adam_step(nn::ParameterStore<T>&, OptimState&);

PS2_INSTANTIATE_OPTIM(float)
PS2_INSTANTIATE_OPTIM(double)

}  // namespace ps2::train
