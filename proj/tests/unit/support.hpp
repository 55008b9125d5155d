#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ps2/ad/tensor.hpp"
#include "ps2/common/rng.hpp"

namespace ps2::test {

template <typename T = double>
ad::Tensor<T> random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0,
                            bool requires_grad = true) {
  const std::size_t n = ad::numel(shape);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-scale, scale));
  return ad::Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ps2_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ps2::test
