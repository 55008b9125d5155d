#pragma once

#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ps2/eval/bss.hpp"
#include "ps2/room/scene.hpp"
#include "ps2/signal/waveform.hpp"

namespace ps2::eval {

struct Conditions {
  double rt60 = std::numeric_limits<double>::quiet_NaN();
  double snr_db = std::numeric_limits<double>::quiet_NaN();
  double speed = std::numeric_limits<double>::quiet_NaN();  // mean over sources, m/s
  double angle_deg = std::numeric_limits<double>::quiet_NaN();
  double duration_s = std::numeric_limits<double>::quiet_NaN();

  double get(const std::string& name) const;
};

Conditions conditions_of(const room::SceneSpec& scene);

struct PairReport {
  std::string id;
  std::vector<std::size_t> perm;  // estimate index assigned to each reference
  std::vector<double> si_sdr, sdr, sir, sar;  // per reference
  Conditions conditions;

  double mean(const std::string& metric) const;
};

// Permutation by maximum mean SI-SDR, then BSS-eval per speaker.
PairReport evaluate_pair(const signal::Waveform& ests, const signal::Waveform& refs,
                         const Conditions& conditions, const std::string& id = "",
                         const BssOptions& options = {});

struct BinSpec {
  std::string condition;      // rt60, snr_db, speed, angle_deg, duration_s
  std::vector<double> edges;  // [e0,e1), ..., [e_{n-1}, e_n]; last bin closed
};
using Binning = std::vector<BinSpec>;

Binning paper_binning();
// {"rt60": [0.1, 0.3, 0.5, 0.7], "duration_s": [0, 4, 8, "inf"], ...}
Binning binning_from_json(const nlohmann::json& j);

struct BinSummary {
  std::string condition;
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double median = 0.0, q1 = 0.0, q3 = 0.0;  // NaN when empty
  bool empty() const { return count == 0; }
};

// Per-bin median and quartiles of `metric` (si_sdr, sdr, sir, sar; speaker
// mean per report). Reports outside every bin of a condition are skipped.
std::vector<BinSummary> conditional_report(const std::vector<PairReport>& reports,
                                           const Binning& binning,
                                           const std::string& metric = "si_sdr");

// Linear-interpolation quantile (numpy's default) of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double p);

std::string reports_csv(const std::vector<PairReport>& reports);
nlohmann::ordered_json reports_json(const std::vector<PairReport>& reports);
std::string summary_csv(const std::vector<BinSummary>& rows);
nlohmann::ordered_json summary_json(const std::vector<BinSummary>& rows);

}  // namespace ps2::eval
