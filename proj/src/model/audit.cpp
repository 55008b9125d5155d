#include "ps2/model/audit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "ps2/ad/ops.hpp"
#include "ps2/common/error.hpp"
#include "ps2/common/rng.hpp"
#include "ps2/model/model.hpp"
#include "ps2/nn/layers.hpp"
#include "ps2/train/loss.hpp"

namespace ps2::model {

using ad::Tensor;
using Td = Tensor<double>;

namespace {

Td random_tensor(ad::Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Td(std::move(shape), std::move(v), requires_grad);
}

void randomize(const std::vector<const nn::ParameterStore<double>::Entry*>& entries, Rng& rng) {
  for (const auto* e : entries) {
    Td t = e->tensor;
    for (auto& v : t.mutable_values()) v = rng.uniform(-0.5, 0.5);
  }
}

AuditEntry check_layer(const std::string& name, nn::ParameterStore<double>& store, const Td& x,
                       const std::function<Td()>& f) {
  Rng rng(5);
  const Td probe = [&] {
    ad::NoGradScope ng;
    return f();
  }();
  const Td weights = random_tensor(probe.shape(), rng, false);
  std::vector<ad::NamedInput> named{{"x", x}};
  for (const auto& e : store.entries()) named.push_back({e.name, e.tensor});
  ad::GradCheckOptions opts;
  opts.eps = 1e-3;
  opts.stencil = ad::Stencil::kFivePoint;
  return {name, ad::grad_check([&] { return ad::sum(ad::mul(f(), weights)); }, named, opts)};
}

}  // namespace

GradientAudit audit_layers(std::uint64_t seed) {
  using namespace nn;
  GradientAudit audit;
  Rng rng(seed);
  {
    ParameterStore<double> store;
    Builder<double> B(store, rng);
    Conv2d<double> conv(B, "conv", 2, 3);
    LayerNorm<double> ln(B, "ln", 3);
    PRelu<double> act(B, "act", 3);
    Linear<double> lin(B, "lin", 3, 3);
    Deconv2d<double> dec(B, "dec", 3, 2);
    const Td x = random_tensor({2, 3, 4}, rng);
    audit.checks.push_back(check_layer("conv+layer_norm+prelu+linear+deconv", store, x, [&] {
      const Td h = ln(ad::permute(conv(x), {1, 2, 0}));
      return dec(ad::permute(lin(act(h)), {2, 0, 1}));
    }));
  }
  {
    ParameterStore<double> store;
    Builder<double> B(store, rng);
    BLstm<double> l(B, "blstm", 6, 3);
    Fold<double> fold(B, "fold", 6, 2, 3, 1);
    const Td x = random_tensor({2, 4, 2}, rng);
    const auto g = ad::BlockGeometry::make(4, 3, 1);
    audit.checks.push_back(
        check_layer("unfold+blstm+fold", store, x, [&] { return fold(l(ad::unfold_blocks(x, g)), g); }));
  }
  {
    ParameterStore<double> store;
    Builder<double> B(store, rng);
    BGru<double> gru(B, "bgru", 3, 3, 2, 0.05);
    const Td x = random_tensor({1, 4, 3}, rng);
    audit.checks.push_back(check_layer("bgru", store, x, [&] { return gru(x, false, nullptr); }));
  }
  {
    ParameterStore<double> store;
    Builder<double> B(store, rng);
    Mamba<double> m(B, "mamba", MambaDims{4, 3, 4, 2});
    randomize(store.with_prefix("mamba"), rng);
    const Td x = random_tensor({2, 5, 4}, rng);
    audit.checks.push_back(check_layer("mamba", store, x, [&] { return m(x); }));
  }
  {
    ParameterStore<double> store;
    Builder<double> B(store, rng);
    Linear<double> q(B, "q", 3, 4), k(B, "k", 3, 4, false), v(B, "v", 3, 4);
    const Td x = random_tensor({3, 2, 3}, rng);
    audit.checks.push_back(check_layer(
        "attention", store, x, [&] { return frame_attention(q(x), k(x), v(x), 2, std::sqrt(2.0)); }));
  }
  for (const auto& c : audit.checks) audit.max_rel_error = std::max(audit.max_rel_error, c.report.max_rel_error);
  return audit;
}

AuditEntry audit_model(const Ps2Config& cfg, std::size_t length, std::uint64_t seed) {
  auto store = init_params<double>(cfg, seed);
  const Ps2Model<double> m(cfg, store);
  if (cfg.spatial_branch) {
    for (const auto* e : store.with_prefix("spatial.gru.prelu.slope")) {
      Td t = e->tensor;
      for (auto& v : t.mutable_values()) v = 1.0;
    }
  }
  Rng shift(seed + 2);
  for (std::size_t b = 0; b < cfg.blocks; ++b)
    randomize(store.with_prefix("spectral.block" + std::to_string(b) + ".temporal.mamba"), shift);

  Rng rng(seed + 1);
  signal::Waveform mix(cfg.mics, length, cfg.sample_rate);
  for (auto& v : mix.samples()) v = rng.uniform(-1, 1);
  const auto features = make_features<double>(mix, cfg);
  const auto forward_loss = [&](const Td& refs) {
    Rng drop(7);
    return train::pit_loss(m.forward(features, RunMode::train(drop)).waveforms, refs);
  };
  const Td base = [&] {
    ad::NoGradScope ng;
    Rng drop(7);
    return m.forward(features, RunMode::train(drop)).waveforms;
  }();
  // References near the network output make one speaker assignment clearly
  // best, so the permutation cannot flip inside a stencil.
  const std::size_t C = cfg.sources;
  std::vector<double> rv(C * length);
  for (std::size_t c = 0; c < C; ++c) {
    double energy = 0;
    for (std::size_t i = 0; i < length; ++i) energy += base[c * length + i] * base[c * length + i];
    const double sd = std::sqrt(energy / static_cast<double>(length));
    for (std::size_t i = 0; i < length; ++i) rv[c * length + i] = base[c * length + i] + 0.5 * sd * rng.normal();
  }
  const Td refs({C, length}, rv);

  std::vector<ad::NamedInput> named;
  for (const auto& e : store.entries()) named.push_back({e.name, e.tensor});
  ad::GradCheckOptions opts;
  opts.eps = 1e-2;
  opts.stencil = ad::Stencil::kRidders;
  return {"model", ad::grad_check([&] { return forward_loss(refs).loss; }, named, opts)};
}

nlohmann::ordered_json to_json(const GradientAudit& audit) {
  nlohmann::ordered_json j;
  j["passed"] = audit.passed();
  j["tol"] = audit.tol;
  j["max_rel_error"] = audit.max_rel_error;
  auto checks = nlohmann::ordered_json::array();
  for (const auto& c : audit.checks) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["max_rel_error"] = c.report.max_rel_error;
    cj["coords_checked"] = c.report.coords_checked;
    auto inputs = nlohmann::ordered_json::array();
    for (const auto& e : c.report.inputs) {
      inputs.push_back({{"name", e.name},
                        {"max_rel_error", e.max_rel_error},
                        {"coords_checked", e.coords_checked},
                        {"worst_index", e.worst_index},
                        {"worst_analytic", e.worst_analytic},
                        {"worst_numeric", e.worst_numeric}});
    }
    cj["inputs"] = std::move(inputs);
    checks.push_back(std::move(cj));
  }
  j["checks"] = std::move(checks);
  return j;
}

}  // namespace ps2::model
