#include "ps2/train/overfit.hpp"

#include <cmath>
#include <fstream>

#include "ps2/ad/ops.hpp"
#include "ps2/common/error.hpp"
#include "ps2/model/model.hpp"
#include "ps2/train/loss.hpp"

namespace ps2::train {

namespace {

signal::Waveform to_waveform(const ad::Tensor<float>& t, int rate) {
  signal::Waveform w(t.dim(0), t.dim(1), rate);
  for (std::size_t c = 0; c < t.dim(0); ++c)
    for (std::size_t i = 0; i < t.dim(1); ++i) w.channel(c)[i] = t[c * t.dim(1) + i];
  return w;
}

ad::Tensor<float> to_tensor(const signal::Waveform& w) {
  std::vector<float> v(w.channels() * w.length());
  for (std::size_t c = 0; c < w.channels(); ++c)
    for (std::size_t i = 0; i < w.length(); ++i) v[c * w.length() + i] = static_cast<float>(w.channel(c)[i]);
  return ad::Tensor<float>({w.channels(), w.length()}, std::move(v));
}

}  // namespace

double si_sdr_improvement(const signal::Waveform& ests, const signal::Waveform& refs,
                          const signal::Waveform& mixture, std::vector<std::size_t>* perm) {
  const std::size_t c = refs.channels();
  require(ests.channels() == c && ests.length() == refs.length() && mixture.length() == refs.length(),
          ErrorKind::kData, "si_sdr_improvement: shape mismatch");
  std::vector<std::vector<double>> score(c, std::vector<double>(c));
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t e = 0; e < c; ++e) score[r][e] = si_sdr(ests.channel(e), refs.channel(r));
  const auto best = best_permutation(score);
  double total = 0;
  for (std::size_t r = 0; r < c; ++r)
    total += score[r][best[r]] - si_sdr(mixture.channel(0), refs.channel(r));
  if (perm) *perm = best;
  return total / static_cast<double>(c);
}

OverfitResult overfit(const signal::Waveform& mixture, const signal::Waveform& refs,
                      const model::Ps2Config& cfg, const OverfitOptions& opt) {
  require(refs.channels() == cfg.sources && refs.length() == mixture.length(), ErrorKind::kData,
          "overfit: need one reference per source with the mixture length");
  OverfitResult res;
  res.params = model::init_params<float>(cfg, opt.seed);
  const model::Ps2Model<float> net(cfg, res.params);
  const auto features = model::make_features<float>(mixture, cfg);
  const ad::Tensor<float> targets = to_tensor(refs);
  for (std::size_t r = 0; r < refs.channels(); ++r)
    res.mixture_si_sdr.push_back(si_sdr(mixture.channel(0), refs.channel(r)));

  auto eval_improvement = [&](std::vector<std::size_t>* perm) {
    ad::NoGradScope ng;
    const auto out = net.forward(features, model::RunMode::eval());
    return si_sdr_improvement(to_waveform(out.waveforms, cfg.sample_rate), refs, mixture, perm);
  };
  res.initial_si_sdri = eval_improvement(nullptr);

  std::ofstream csv;
  if (!opt.log_csv.empty()) {
    csv.open(opt.log_csv, std::ios::trunc);
    require(static_cast<bool>(csv), ErrorKind::kData, "cannot write training log " + opt.log_csv);
    csv << "step,loss_db,si_sdri_db,grad_norm,clip_scale\n";
  }

  OptimState state;
  state.config = opt.adam;
  Rng dropout(opt.seed ^ 0x5eedULL);
  for (std::size_t step = 1; step <= opt.steps; ++step) {
    res.params.zero_grad();
    ad::Tape<float> tape;
    const auto out = net.forward(features, model::RunMode::train(dropout));
    const auto pit = pit_loss(out.waveforms, targets);
    require(std::isfinite(pit.loss_db), ErrorKind::kNumerical,
            "non-finite loss at step " + std::to_string(step));
    tape.backward(pit.loss);
    const ClipResult clip = clip_grad_norm(res.params, opt.clip);
    require(std::isfinite(clip.norm), ErrorKind::kNumerical,
            "non-finite gradient norm at step " + std::to_string(step));
    adam_step(res.params, state);

    StepLog entry{step, pit.loss_db, 0.0, clip.norm, clip.scale};
    entry.si_sdri_db = si_sdr_improvement(to_waveform(out.waveforms, cfg.sample_rate), refs, mixture);
    res.log.push_back(entry);
    if (csv.is_open()) {
      csv << entry.step << ',' << entry.loss_db << ',' << entry.si_sdri_db << ',' << entry.grad_norm << ','
          << entry.clip_scale << '\n';
    }
    if (opt.on_step) opt.on_step(entry);
  }
  res.final_si_sdri = eval_improvement(&res.final_perm);
  return res;
}

}  // namespace ps2::train
