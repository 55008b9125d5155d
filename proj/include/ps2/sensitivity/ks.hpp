#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ps2/nn/parameter_store.hpp"

namespace ps2::sensitivity {

// sup_x |F_a(x) - F_b(x)| of the empirical CDFs, by a merged sweep over the
// sorted samples; tied values advance both CDFs before the gap is measured.
double ks_two_sample(std::span<const double> a, std::span<const double> b);

struct BlockKs {
  std::string prefix;
  std::size_t count_a = 0, count_b = 0;
  double ks = 0.0;
  double ks_normalized = 0.0;
};

struct SensitivityReport {
  std::vector<BlockKs> blocks;  // in the order the prefixes were given
  double ks_min = 0.0, ks_max = 0.0;
};

// Flattens every parameter under each prefix into one multiset per store,
// computes KS per block, then min-max normalizes across the blocks (all 0
// when every block has the same KS). Stores must share names and shapes.
template <typename T>
SensitivityReport block_sensitivity(const nn::ParameterStore<T>& a, const nn::ParameterStore<T>& b,
                                    const std::vector<std::string>& prefixes);

nlohmann::ordered_json to_json(const SensitivityReport& report);

// Rows are model variants, columns blocks; values are the normalized KS.
// All reports must list the same blocks in the same order.
std::string heatmap_csv(const std::vector<std::pair<std::string, SensitivityReport>>& variants);

}  // namespace ps2::sensitivity
