#include "ps2/sensitivity/ks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ps2/common/error.hpp"

namespace ps2::sensitivity {

namespace {

template <typename T>
std::vector<double> flatten(const nn::ParameterStore<T>& store, const std::string& prefix) {
  std::vector<double> out;
  for (const auto* e : store.with_prefix(prefix)) {
    for (const T v : e->tensor.values()) out.push_back(static_cast<double>(v));
  }
  return out;
}

}  // namespace

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorKind::kData, "ks: both samples must be non-empty");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  return d;
}

template <typename T>
SensitivityReport block_sensitivity(const nn::ParameterStore<T>& a, const nn::ParameterStore<T>& b,
                                    const std::vector<std::string>& prefixes) {
  require(a.size() == b.size(), ErrorKind::kData, "sensitivity: parameter manifests differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ea = a.entries()[i];
    const auto& eb = b.entries()[i];
    require(ea.name == eb.name && ea.tensor.shape() == eb.tensor.shape(), ErrorKind::kData,
            "sensitivity: parameter manifests differ at '" + ea.name + "' / '" + eb.name + "'");
  }
  require(!prefixes.empty(), ErrorKind::kUsage, "sensitivity: no blocks given");
  SensitivityReport report;
  report.blocks.resize(prefixes.size());
  for (std::size_t k = 0; k < prefixes.size(); ++k) {
    report.blocks[k].prefix = prefixes[k];
    require(!a.with_prefix(prefixes[k]).empty(), ErrorKind::kData,
            "sensitivity: block '" + prefixes[k] + "' matches no parameters");
  }
  const auto n = static_cast<std::ptrdiff_t>(prefixes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    BlockKs& blk = report.blocks[static_cast<std::size_t>(k)];
    const auto va = flatten(a, blk.prefix);
    const auto vb = flatten(b, blk.prefix);
    blk.count_a = va.size();
    blk.count_b = vb.size();
    blk.ks = ks_two_sample(va, vb);
  }
  auto [lo, hi] = std::minmax_element(report.blocks.begin(), report.blocks.end(),
                                      [](const BlockKs& x, const BlockKs& y) { return x.ks < y.ks; });
  report.ks_min = lo->ks;
  report.ks_max = hi->ks;
  const double range = report.ks_max - report.ks_min;
  for (BlockKs& blk : report.blocks) {
    blk.ks_normalized = range > 0.0 ? (blk.ks - report.ks_min) / range : 0.0;
  }
  return report;
}

template SensitivityReport block_sensitivity(const nn::ParameterStore<float>&,
                                             const nn::ParameterStore<float>&,
                                             const std::vector<std::string>&);
template SensitivityReport block_sensitivity(const nn::ParameterStore<double>&,
                                             const nn::ParameterStore<double>&,
                                             const std::vector<std::string>&);

nlohmann::ordered_json to_json(const SensitivityReport& report) {
  nlohmann::ordered_json j;
  auto blocks = nlohmann::ordered_json::array();
  for (const BlockKs& b : report.blocks) {
    nlohmann::ordered_json e;
    e["prefix"] = b.prefix;
    e["param_count_a"] = b.count_a;
    e["param_count_b"] = b.count_b;
    e["ks"] = b.ks;
    e["ks_normalized"] = b.ks_normalized;
    blocks.push_back(e);
  }
  j["blocks"] = blocks;
  j["ks_min"] = report.ks_min;
  j["ks_max"] = report.ks_max;
  return j;
}

std::string heatmap_csv(const std::vector<std::pair<std::string, SensitivityReport>>& variants) {
  require(!variants.empty(), ErrorKind::kUsage, "heatmap: no reports");
  const auto& first = variants.front().second.blocks;
  std::ostringstream out;
  out.precision(17);
  out << "variant";
  for (const BlockKs& b : first) out << ',' << b.prefix;
  out << '\n';
  for (const auto& [name, report] : variants) {
    require(report.blocks.size() == first.size(), ErrorKind::kData, "heatmap: block lists differ");
    out << name;
    for (std::size_t k = 0; k < first.size(); ++k) {
      require(report.blocks[k].prefix == first[k].prefix, ErrorKind::kData,
              "heatmap: block lists differ");
      out << ',' << report.blocks[k].ks_normalized;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace ps2::sensitivity
