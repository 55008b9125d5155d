#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "criteria.hpp"
#include "ps2/common/rng.hpp"
#include "ps2/model/audit.hpp"
#include "ps2/model/config.hpp"
#include "ps2/model/model.hpp"
#include "ps2/nn/parameter_store.hpp"
#include "ps2/room/render.hpp"
#include "ps2/room/scene.hpp"
#include "ps2/train/overfit.hpp"

namespace ps2::acceptance {

namespace {

std::string fmt(const char* f, double a) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Mean-removed scale-invariant SDR, written out independently of the library.
double si_sdr(std::span<const double> est, std::span<const double> ref) {
  const auto n = static_cast<double>(ref.size());
  const double me = std::accumulate(est.begin(), est.end(), 0.0) / n;
  const double mr = std::accumulate(ref.begin(), ref.end(), 0.0) / n;
  double er = 0, rr = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    er += (est[i] - me) * (ref[i] - mr);
    rr += (ref[i] - mr) * (ref[i] - mr);
  }
  const double a = er / rr;
  double t = 0, e = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double ti = a * (ref[i] - mr);
    const double ei = (est[i] - me) - ti;
    t += ti * ti;
    e += ei * ei;
  }
  return 10.0 * std::log10(t / e);
}

using Shapes = std::map<std::string, ad::Shape>;

Shapes shapes_of(const model::Ps2Config& cfg) {
  Shapes s;
  const auto store = model::init_params<float>(cfg, 1);
  for (const auto& e : store.entries()) s[e.name] = e.tensor.shape();
  return s;
}

}  // namespace

Outcome gradient_integrity() {
  auto audit = model::audit_layers();
  audit.checks.push_back(model::audit_model(model::Ps2Config::gradcheck()));
  double worst = 0;
  std::size_t coords = 0;
  std::string worst_name;
  for (const auto& c : audit.checks) {
    coords += c.report.coords_checked;
    if (c.report.max_rel_error >= worst) {
      worst = c.report.max_rel_error;
      worst_name = c.name;
    }
  }
  return {worst < 1e-5, std::to_string(audit.checks.size()) + " checks, " + std::to_string(coords) +
                            " coordinates, max relative error " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

Outcome toy_overfit() {
  const auto cfg = model::Ps2Config::toy();
  room::ProtocolRanges p;
  p.mic_azimuths_deg = {0.0, 180.0};
  p.duration = {1.0, 1.0};
  const auto scene = room::sample_scene(1, p);
  const auto rendered = room::render_scene(scene);
  const auto& mix = rendered.mix.mixture;
  signal::Waveform refs(cfg.sources, mix.length(), mix.sample_rate());
  for (std::size_t c = 0; c < cfg.sources; ++c) {
    const auto img = rendered.mix.sources[c].channel(0);
    std::copy(img.begin(), img.end(), refs.channel(c).begin());
  }

  train::OverfitOptions opt;
  opt.steps = 500;
  opt.adam.lr = 5e-4;
  opt.clip = 5.0;
  opt.on_step = [](const train::StepLog& s) {
    if (s.step % 100 == 0) std::printf("  overfit step %zu: si-sdri %.2f dB\n", s.step, s.si_sdri_db), std::fflush(stdout);
  };
  auto res = train::overfit(mix, refs, cfg, opt);

  // Re-run the trained weights and score them here.
  const model::Ps2Model<float> net(cfg, res.params);
  ad::NoGradScope ng;
  const auto out = net.forward(mix, model::RunMode::eval()).waveforms;
  const std::size_t n = mix.length();
  std::vector<std::vector<double>> est(cfg.sources, std::vector<double>(n));
  for (std::size_t c = 0; c < cfg.sources; ++c)
    for (std::size_t i = 0; i < n; ++i) est[c][i] = out[c * n + i];
  double best = -1e300;
  std::vector<std::size_t> perm(cfg.sources);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    double s = 0;
    for (std::size_t c = 0; c < cfg.sources; ++c) s += si_sdr(est[perm[c]], refs.channel(c));
    best = std::max(best, s / static_cast<double>(cfg.sources));
  } while (std::next_permutation(perm.begin(), perm.end()));
  double base = 0;
  for (std::size_t c = 0; c < cfg.sources; ++c) base += si_sdr(mix.channel(0), refs.channel(c));
  base /= static_cast<double>(cfg.sources);
  const double improvement = best - base;

  return {improvement >= 10.0, fmt("SI-SDRi %.2f dB after 500 steps", improvement) +
                                   fmt(" (unprocessed %.2f dB", base) + fmt(", speeds %.2f", scene.trajectories[0].speed()) +
                                   fmt("/%.2f m/s)", scene.trajectories[1].speed())};
}

Outcome ablation_manifests() {
  const auto full_cfg = model::Ps2Config::paper();
  const Shapes full = shapes_of(full_cfg);
  std::string detail;
  bool ok = true;

  struct Variant {
    const char* name;
    model::Ps2Config cfg;
    std::vector<std::string> removable;
  };
  auto sum_cfg = full_cfg;
  sum_cfg.fusion = model::FusionMode::kSum;
  auto ri_cfg = full_cfg;
  ri_cfg.spatial_branch = false;
  const std::vector<Variant> variants{{"sum fusion", sum_cfg, {"fusion"}}, {"RI-only", ri_cfg, {"fusion", "spatial"}}};

  for (const auto& v : variants) {
    const Shapes got = shapes_of(v.cfg);
    std::size_t removed = 0, removed_params = 0;
    for (const auto& [name, shape] : full) {
      const auto it = got.find(name);
      if (it == got.end()) {
        ++removed;
        removed_params += ad::numel(shape);
        bool allowed = false;
        for (const auto& p : v.removable) allowed = allowed || nn::has_prefix(name, p);
        ok = ok && allowed;
      } else {
        ok = ok && it->second == shape;
      }
    }
    for (const auto& [name, shape] : got) ok = ok && full.count(name) == 1;
    // Every tensor of the removed groups must be gone.
    for (const auto& [name, shape] : full)
      for (const auto& p : v.removable)
        if (nn::has_prefix(name, p)) ok = ok && got.count(name) == 0;
    std::size_t count = 0;
    for (const auto& [name, shape] : got) count += ad::numel(shape);
    ok = ok && removed > 0 && count == model::analytic_param_count(v.cfg);
    detail += std::string(detail.empty() ? "" : ", ") + v.name + " drops " + std::to_string(removed) +
              " tensors / " + std::to_string(removed_params) + " parameters";
  }

  bool runs = true;
  for (const auto& v : variants) {
    auto cfg = model::Ps2Config::toy();
    cfg.fusion = v.cfg.fusion;
    cfg.spatial_branch = v.cfg.spatial_branch;
    auto store = model::init_params<float>(cfg, 2);
    const model::Ps2Model<float> net(cfg, store);
    signal::Waveform mix(cfg.mics, 4000, cfg.sample_rate);
    Rng rng(9);
    for (double& x : mix.samples()) x = rng.normal();
    ad::NoGradScope ng;
    const auto out = net.forward(mix, model::RunMode::eval()).waveforms;
    runs = runs && out.shape() == ad::Shape{cfg.sources, 4000};
    for (float x : out.values()) runs = runs && std::isfinite(x);
  }
  return {ok && runs, detail + (runs ? "; both variants run forward" : "; variant forward FAILED")};
}

Outcome paper_shape() {
  const auto cfg = model::Ps2Config::paper();
  auto store = model::init_params<float>(cfg, 7);
  const model::Ps2Model<float> net(cfg, store);
  const std::size_t n = 4 * 16000;
  signal::Waveform mix(cfg.mics, n, cfg.sample_rate);
  Rng rng(8);
  for (double& x : mix.samples()) x = 0.1 * rng.normal();

  ad::NoGradScope ng;
  const auto a = net.forward(mix, model::RunMode::eval());
  const auto b = net.forward(mix, model::RunMode::eval());
  const std::size_t frames = cfg.stft.frames(n);
  bool finite = true;
  for (float x : a.waveforms.values()) finite = finite && std::isfinite(x);
  for (float x : a.spectra.values()) finite = finite && std::isfinite(x);
  const bool shapes = a.waveforms.shape() == ad::Shape{cfg.sources, n} &&
                      a.spectra.shape() == ad::Shape{2 * cfg.sources, frames, cfg.bins()};
  const bool same = std::equal(a.waveforms.values().begin(), a.waveforms.values().end(), b.waveforms.values().begin());
  const std::size_t count = store.total_count(), analytic = model::analytic_param_count(cfg);

  std::string detail = "spectra " + std::to_string(2 * cfg.sources) + "x" + std::to_string(frames) + "x" +
                       std::to_string(cfg.bins()) + ", " + std::to_string(count) + " parameters (analytic " +
                       std::to_string(analytic) + ")";
  if (!finite) detail += ", non-finite output";
  if (!same) detail += ", runs differ";
  if (!shapes) detail += ", wrong shapes";
  return {finite && shapes && same && count == analytic, detail};
}

}  // namespace ps2::acceptance
