#include "ps2/train/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ps2/ad/ops.hpp"
#include "ps2/common/error.hpp"

namespace ps2::train {

using ad::Tensor;

double si_sdr(std::span<const double> est, std::span<const double> ref) {
  require(est.size() == ref.size(), ErrorKind::kData,
          "si_sdr: length mismatch " + std::to_string(est.size()) + " vs " + std::to_string(ref.size()));
  require(est.size() >= 2, ErrorKind::kData, "si_sdr: need at least 2 samples");
  const double n = static_cast<double>(est.size());
  const double me = std::accumulate(est.begin(), est.end(), 0.0) / n;
  const double mr = std::accumulate(ref.begin(), ref.end(), 0.0) / n;
  double er = 0, rr = 0, ee = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = est[i] - me, r = ref[i] - mr;
    er += e * r;
    rr += r * r;
    ee += e * e;
  }
  require(rr > 0.0, ErrorKind::kData, "si_sdr: degenerate reference");
  const double alpha = er / rr;
  double target = 0, resid = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = alpha * (ref[i] - mr);
    const double d = est[i] - me - t;
    target += t * t;
    resid += d * d;
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (target < 1e-12 * ee || target == 0.0) return -inf;
  if (resid < 1e-12 * target) return inf;
  return 10.0 * std::log10(target / resid);
}

double si_sdr(const signal::Waveform& est, const signal::Waveform& ref) {
  require(est.channels() == 1 && ref.channels() == 1, ErrorKind::kData,
          "si_sdr expects single-channel waveforms");
  return si_sdr(est.channel(0), ref.channel(0));
}

template <typename T>
Tensor<T> si_sdr_loss_term(const Tensor<T>& est, const Tensor<T>& ref) {
  const std::vector<double> ev(est.values().begin(), est.values().end());
  const std::vector<double> rv(ref.values().begin(), ref.values().end());
  const double value = si_sdr(ev, rv);
  if (std::isnan(value)) return Tensor<T>::scalar(std::numeric_limits<T>::quiet_NaN());
  if (!(std::abs(value) < kLossClampDb)) {
    return Tensor<T>::scalar(static_cast<T>(value > 0 ? kLossClampDb : -kLossClampDb));
  }
  const Tensor<T> e = ad::sub(est, ad::mean(est));
  const Tensor<T> r = ad::sub(ref, ad::mean(ref));
  const Tensor<T> alpha = ad::div(ad::sum(ad::mul(e, r)), ad::sum(ad::square(r)));
  const Tensor<T> target = ad::mul(alpha, r);
  const Tensor<T> resid = ad::sub(e, target);
  const Tensor<T> ratio = ad::sub(ad::log(ad::sum(ad::square(target))), ad::log(ad::sum(ad::square(resid))));
  return ad::scale(ratio, static_cast<T>(10.0 / std::log(10.0)));
}

std::vector<std::size_t> best_permutation(const std::vector<std::vector<double>>& score) {
  const std::size_t c = score.size();
  std::vector<std::size_t> perm(c), best;
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best_total = -std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (std::size_t r = 0; r < c; ++r) total += score[r][perm[r]];
    if (best.empty() || total > best_total) {
      best_total = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

template <typename T>
PitResult<T> pit_loss(const Tensor<T>& ests, const Tensor<T>& refs) {
  require(ests.rank() == 2 && refs.rank() == 2 && ests.shape() == refs.shape(), ErrorKind::kData,
          "pit_loss: estimate shape " + ad::to_string(ests.shape()) + " does not match reference shape " +
              ad::to_string(refs.shape()));
  const std::size_t c = ests.dim(0), len = ests.dim(1);
  require(c >= 1 && c <= 4, ErrorKind::kUsage, "pit_loss supports 1 to 4 sources");
  auto row = [&](const Tensor<T>& t, std::size_t i) {
    return std::vector<double>(t.values().begin() + i * len, t.values().begin() + (i + 1) * len);
  };
  // score[r][e]: clamped SI-SDR of estimate e against reference r.
  std::vector<std::vector<double>> score(c, std::vector<double>(c));
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t e = 0; e < c; ++e)
      score[r][e] = std::clamp(si_sdr(row(ests, e), row(refs, r)), -kLossClampDb, kLossClampDb);
  PitResult<T> out;
  out.perm = best_permutation(score);
  std::vector<Tensor<T>> terms;
  for (std::size_t r = 0; r < c; ++r) {
    terms.push_back(si_sdr_loss_term(ad::slice(ests, 0, out.perm[r], out.perm[r] + 1),
                                     ad::slice(refs, 0, r, r + 1)));
  }
  Tensor<T> total = terms[0];
  for (std::size_t r = 1; r < c; ++r) total = ad::add(total, terms[r]);
  out.loss = ad::scale(total, static_cast<T>(-1.0 / static_cast<double>(c)));
  out.loss_db = static_cast<double>(out.loss.item());
  return out;
}

template Tensor<float> si_sdr_loss_term(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> si_sdr_loss_term(const Tensor<double>&, const Tensor<double>&);
template PitResult<float> pit_loss(const Tensor<float>&, const Tensor<float>&);
template PitResult<double> pit_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace ps2::train
