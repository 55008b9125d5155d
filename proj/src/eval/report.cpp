#include "ps2/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ps2/common/error.hpp"
#include "ps2/train/loss.hpp"

namespace ps2::eval {

namespace {

const std::vector<std::string> kConditionNames{"rt60", "snr_db", "speed", "angle_deg", "duration_s"};

const std::vector<double>& metric_values(const PairReport& r, const std::string& metric) {
  if (metric == "si_sdr") return r.si_sdr;
  if (metric == "sdr") return r.sdr;
  if (metric == "sir") return r.sir;
  if (metric == "sar") return r.sar;
  fail(ErrorKind::kUsage, "unknown metric '" + metric + "'");
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

nlohmann::ordered_json json_num(double v) {
  if (std::isfinite(v)) return v;
  return num(v);
}

}  // namespace

double Conditions::get(const std::string& name) const {
  if (name == "rt60") return rt60;
  if (name == "snr_db") return snr_db;
  if (name == "speed") return speed;
  if (name == "angle_deg") return angle_deg;
  if (name == "duration_s") return duration_s;
  fail(ErrorKind::kUsage, "unknown bin spec: condition '" + name + "'");
}

Conditions conditions_of(const room::SceneSpec& scene) {
  Conditions c;
  c.rt60 = scene.rt60;
  c.snr_db = scene.target_snr_db;
  c.speed = scene.mean_speed();
  c.angle_deg = scene.sources() >= 2 ? scene.min_source_angle_deg() : 180.0;
  c.duration_s = static_cast<double>(scene.mixture_length()) / scene.sample_rate;
  return c;
}

double PairReport::mean(const std::string& metric) const {
  const auto& v = metric_values(*this, metric);
  double s = 0.0;
  for (const double x : v) s += x / static_cast<double>(v.size());
  return s;
}

PairReport evaluate_pair(const signal::Waveform& ests, const signal::Waveform& refs,
                         const Conditions& conditions, const std::string& id,
                         const BssOptions& options) {
  require(ests.channels() == refs.channels() && ests.length() == refs.length(), ErrorKind::kData,
          "evaluate: estimates and references differ in shape");
  const std::size_t C = refs.channels();
  std::vector<std::vector<double>> score(C, std::vector<double>(C));
  for (std::size_t r = 0; r < C; ++r) {
    for (std::size_t e = 0; e < C; ++e) {
      score[r][e] = train::si_sdr(ests.channel(e), refs.channel(r));
    }
  }
  PairReport out;
  out.id = id;
  out.conditions = conditions;
  out.perm = train::best_permutation(score);
  std::vector<std::span<const double>> ref_spans;
  for (std::size_t r = 0; r < C; ++r) ref_spans.push_back(refs.channel(r));
  for (std::size_t r = 0; r < C; ++r) {
    out.si_sdr.push_back(std::clamp(score[r][out.perm[r]], -kMetricCapDb, kMetricCapDb));
    const BssMetrics m = bss_eval(ests.channel(out.perm[r]), ref_spans, r, options);
    out.sdr.push_back(m.sdr);
    out.sir.push_back(m.sir);
    out.sar.push_back(m.sar);
  }
  return out;
}

Binning paper_binning() {
  const double inf = std::numeric_limits<double>::infinity();
  return {{"rt60", {0.1, 0.3, 0.5, 0.7}},
          {"snr_db", {0.0, 3.0, 6.0, 10.0}},
          {"speed", {0.0, 0.3, 0.6, 1.0}},
          {"angle_deg", {0.0, 5.0, 90.0, 180.0}},
          {"duration_s", {0.0, 4.0, 8.0, inf}}};
}

Binning binning_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::kUsage, "unknown bin spec: expected an object of edge lists");
  Binning out;
  for (const auto& [key, value] : j.items()) {
    require(std::find(kConditionNames.begin(), kConditionNames.end(), key) != kConditionNames.end(),
            ErrorKind::kUsage, "unknown bin spec: condition '" + key + "'");
    require(value.is_array() && value.size() >= 2, ErrorKind::kUsage,
            "unknown bin spec: '" + key + "' needs at least two edges");
    BinSpec spec{key, {}};
    for (const auto& e : value) {
      if (e.is_string() && e.get<std::string>() == "inf") {
        spec.edges.push_back(std::numeric_limits<double>::infinity());
      } else {
        require(e.is_number(), ErrorKind::kUsage, "unknown bin spec: non-numeric edge in '" + key + "'");
        spec.edges.push_back(e.get<double>());
      }
    }
    require(std::is_sorted(spec.edges.begin(), spec.edges.end()) &&
                std::adjacent_find(spec.edges.begin(), spec.edges.end()) == spec.edges.end(),
            ErrorKind::kUsage, "unknown bin spec: edges of '" + key + "' must increase");
    out.push_back(std::move(spec));
  }
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  require(!sorted.empty(), ErrorKind::kData, "quantile of an empty set");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<BinSummary> conditional_report(const std::vector<PairReport>& reports,
                                           const Binning& binning, const std::string& metric) {
  std::vector<BinSummary> rows;
  for (const BinSpec& spec : binning) {
    (void)Conditions{}.get(spec.condition);
    for (std::size_t b = 0; b + 1 < spec.edges.size(); ++b) {
      const double lo = spec.edges[b], hi = spec.edges[b + 1];
      const bool last = b + 2 == spec.edges.size();
      std::vector<double> values;
      for (const PairReport& r : reports) {
        const double x = r.conditions.get(spec.condition);
        require(!std::isnan(x), ErrorKind::kData,
                "report '" + r.id + "' has no '" + spec.condition + "' condition tag");
        if (x >= lo && (x < hi || (last && x == hi))) values.push_back(r.mean(metric));
      }
      std::sort(values.begin(), values.end());
      BinSummary row{spec.condition, lo, hi, values.size(), NAN, NAN, NAN};
      if (!values.empty()) {
        row.median = quantile_sorted(values, 0.5);
        row.q1 = quantile_sorted(values, 0.25);
        row.q3 = quantile_sorted(values, 0.75);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string reports_csv(const std::vector<PairReport>& reports) {
  std::ostringstream out;
  out << "id,speaker,estimate,si_sdr,sdr,sir,sar,rt60,snr_db,speed,angle_deg,duration_s\n";
  for (const PairReport& r : reports) {
    for (std::size_t c = 0; c < r.perm.size(); ++c) {
      out << r.id << ',' << c << ',' << r.perm[c] << ',' << num(r.si_sdr[c]) << ',' << num(r.sdr[c])
          << ',' << num(r.sir[c]) << ',' << num(r.sar[c]);
      for (const auto& name : kConditionNames) out << ',' << num(r.conditions.get(name));
      out << '\n';
    }
  }
  return out.str();
}

nlohmann::ordered_json reports_json(const std::vector<PairReport>& reports) {
  auto arr = nlohmann::ordered_json::array();
  for (const PairReport& r : reports) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["permutation"] = r.perm;
    for (const char* m : {"si_sdr", "sdr", "sir", "sar"}) {
      auto vals = nlohmann::ordered_json::array();
      for (const double v : metric_values(r, m)) vals.push_back(json_num(v));
      j[m] = vals;
      j[std::string("mean_") + m] = json_num(r.mean(m));
    }
    nlohmann::ordered_json cond;
    for (const auto& name : kConditionNames) cond[name] = json_num(r.conditions.get(name));
    j["conditions"] = cond;
    arr.push_back(j);
  }
  return arr;
}

std::string summary_csv(const std::vector<BinSummary>& rows) {
  std::ostringstream out;
  out << "condition,lo,hi,count,median,q1,q3,iqr,empty\n";
  for (const BinSummary& r : rows) {
    out << r.condition << ',' << num(r.lo) << ',' << num(r.hi) << ',' << r.count << ','
        << num(r.median) << ',' << num(r.q1) << ',' << num(r.q3) << ',' << num(r.q3 - r.q1) << ','
        << (r.empty() ? 1 : 0) << '\n';
  }
  return out.str();
}

nlohmann::ordered_json summary_json(const std::vector<BinSummary>& rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const BinSummary& r : rows) {
    nlohmann::ordered_json j;
    j["lo"] = json_num(r.lo);
    j["hi"] = json_num(r.hi);
    j["count"] = r.count;
    j["median"] = json_num(r.median);
    j["q1"] = json_num(r.q1);
    j["q3"] = json_num(r.q3);
    j["iqr"] = json_num(r.q3 - r.q1);
    j["empty"] = r.empty();
    out[r.condition].push_back(j);
  }
  return out;
}

}  // namespace ps2::eval
