#include "ps2/ad/gradcheck.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>

#include "ps2/common/error.hpp"
#include "ps2/common/rng.hpp"

namespace ps2::ad {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  NoGradScope no_grad;
  const double v = f().item();
  require(std::isfinite(v), ErrorKind::kNumerical, "gradient check: function value is not finite");
  return v;
}

}  // namespace

namespace {

struct Estimate {
  double value;
  double error;
};

// Ridders' extrapolation: central differences at steps eps, eps/1.4, ...
// combined in a Richardson tableau; returns the entry with the smallest
// estimated error and stops once the error starts growing.
template <typename Central>
Estimate ridders_sweep(Central& central, double eps) {
  constexpr int kTable = 10;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
  double a[kTable][kTable];
  double h = eps;
  a[0][0] = central(h);
  double best = a[0][0], err = std::numeric_limits<double>::max();
  for (int i = 1; i < kTable; ++i) {
    h /= kShrink;
    a[0][i] = central(h);
    double fac = kShrink2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(a[j][i] - a[j - 1][i]), std::abs(a[j][i] - a[j - 1][i - 1]));
      if (e <= err) {
        err = e;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return {best, err};
}

// Sweeps from eps and from eps / 10 and keeps the better-resolved estimate:
// weakly coupled coordinates need long steps to rise above roundoff, strongly
// curved ones need short steps.
template <typename Central>
double ridders(Central& central, double eps) {
  const Estimate coarse = ridders_sweep(central, eps);
  const Estimate fine = ridders_sweep(central, eps / 10.0);
  return coarse.error <= fine.error ? coarse.value : fine.value;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<NamedInput>& inputs,
                           const GradCheckOptions& options) {
  require(options.eps > 0.0, ErrorKind::kUsage, "gradient check: eps must be positive");
  std::vector<std::vector<double>> analytic;
  {
    for (const auto& in : inputs) {
      Tensor<double> t = in.tensor;
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Tape<double> tape;
    const Tensor<double> loss = f();
    require(std::isfinite(loss.item()), ErrorKind::kNumerical,
            "gradient check: function value is not finite");
    tape.backward(loss);
    for (const auto& in : inputs) {
      const auto g = in.tensor.grad();
      analytic.emplace_back(g.begin(), g.end());
      analytic.back().resize(in.tensor.numel(), 0.0);
    }
  }

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> t = inputs[k].tensor;
    const std::size_t n = t.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.max_coords_per_input) {
      // Partial Fisher-Yates for a subset without repeats.
      for (std::size_t i = 0; i < options.max_coords_per_input; ++i) {
        std::swap(coords[i], coords[i + rng.below(n - i)]);
      }
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    GradCheckEntry entry;
    entry.name = inputs[k].name;
    auto values = t.mutable_values();
    for (const std::size_t i : coords) {
      const double saved = values[i];
      auto central = [&](double h) {
        values[i] = saved + h;
        const double fp = evaluate(f);
        values[i] = saved - h;
        const double fm = evaluate(f);
        values[i] = saved;
        return (fp - fm) / (2.0 * h);
      };
      double numeric = 0.0;
      switch (options.stencil) {
        case Stencil::kThreePoint:
          numeric = central(options.eps);
          break;
        case Stencil::kFivePoint:
          numeric = (4.0 * central(options.eps) - central(2.0 * options.eps)) / 3.0;
          break;
        case Stencil::kRidders:
          numeric = ridders(central, options.eps);
          break;
      }
      const double err = relative_error(analytic[k][i], numeric);
      if (err > entry.max_rel_error || entry.coords_checked == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.worst_analytic = analytic[k][i];
        entry.worst_numeric = numeric;
      }
      ++entry.coords_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.coords_checked += entry.coords_checked;
    report.inputs.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

}  // namespace ps2::ad
