#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ps2/ad/tensor.hpp"

namespace ps2::ad {

// kThreePoint is the plain central difference. kFivePoint extrapolates central
// differences at eps and 2 eps, cancelling the eps^2 error term; its larger
// usable step keeps roundoff well below the gradients of deep networks.
// kRidders extrapolates shrinking sequences of central differences starting
// at eps and at eps / 10 and keeps the estimate with the smallest error,
// adapting the step to each coordinate.
enum class Stencil { kThreePoint, kFivePoint, kRidders };

struct GradCheckOptions {
  double eps = 1e-6;
  Stencil stencil = Stencil::kThreePoint;
  double tol = 1e-5;
  // Inputs larger than this are checked on a random subset of this many coordinates.
  std::size_t max_coords_per_input = 200;
  std::uint64_t seed = 1;
};

struct GradCheckEntry {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> inputs;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
};

struct NamedInput {
  std::string name;
  Tensor<double> tensor;
};

double relative_error(double analytic, double numeric);

// Compares the tape gradient of `f` with central differences
// (f(x + eps e) - f(x - eps e)) / (2 eps). `f` must read the given input
// tensors each time it is called. Throws a numerical error if f is not finite.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<NamedInput>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace ps2::ad
