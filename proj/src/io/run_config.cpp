#include "ps2/io/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <initializer_list>

#include "ps2/common/error.hpp"

namespace ps2::io {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), ErrorKind::kUsage, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; });
    require(known, ErrorKind::kUsage, where + ": unknown key '" + key + "'");
  }
}

template <typename F>
void get(const nlohmann::json& j, const char* key, F& field) {
  if (j.contains(key)) field = j.at(key).get<F>();
}

void sort_binning(eval::Binning& b) {
  std::sort(b.begin(), b.end(), [](const auto& x, const auto& y) { return x.condition < y.condition; });
}

}  // namespace

std::string to_string(TargetKind kind) { return kind == TargetKind::kDry ? "dry" : "reverberant"; }

TargetKind parse_target_kind(const std::string& text) {
  if (text == "reverberant") return TargetKind::kReverberant;
  if (text == "dry") return TargetKind::kDry;
  fail(ErrorKind::kUsage, "unknown training target '" + text + "' (expected reverberant or dry)");
}

std::string to_string(room::RenderMode mode) {
  return mode == room::RenderMode::kExact ? "exact" : "crossfade";
}

room::RenderMode parse_render_mode(const std::string& text) {
  if (text == "crossfade") return room::RenderMode::kCrossfade;
  if (text == "exact") return room::RenderMode::kExact;
  fail(ErrorKind::kUsage, "unknown render mode '" + text + "' (expected crossfade or exact)");
}

bool operator==(const EvalOptions& a, const EvalOptions& b) {
  if (a.bss.filter_len != b.bss.filter_len || a.bss.ridge != b.bss.ridge || a.metric != b.metric) return false;
  eval::Binning x = a.binning, y = b.binning;
  sort_binning(x);
  sort_binning(y);
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].condition != y[i].condition || x[i].edges != y[i].edges) return false;
  }
  return true;
}

nlohmann::ordered_json binning_to_json(const eval::Binning& binning) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& spec : binning) {
    auto edges = nlohmann::ordered_json::array();
    for (double e : spec.edges) {
      if (std::isinf(e) && e > 0) {
        edges.push_back("inf");
      } else {
        edges.push_back(e);
      }
    }
    j[spec.condition] = std::move(edges);
  }
  return j;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["model_profile"] = c.model_profile;
  j["model"] = nlohmann::ordered_json(model::to_json(c.model));
  j["protocol"] = room::to_json(c.protocol);
  j["simulate"] = {{"count", c.simulate.count}, {"hop", c.simulate.hop}, {"render", to_string(c.simulate.render)}};
  j["train"] = {{"steps", c.train.steps},
                {"lr", c.train.adam.lr},
                {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},
                {"eps", c.train.adam.eps},
                {"clip", c.train.clip},
                {"target", to_string(c.train.target)}};
  eval::Binning binning = c.eval.binning;
  sort_binning(binning);
  j["eval"] = {{"filter_len", c.eval.bss.filter_len},
               {"ridge", c.eval.bss.ridge},
               {"metric", c.eval.metric},
               {"binning", binning_to_json(binning)}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"seed", "output_dir", "model_profile", "model", "protocol", "simulate", "train", "eval"},
                 "run config");
  RunConfig c;
  try {
    get(j, "seed", c.seed);
    get(j, "output_dir", c.output_dir);
    get(j, "model_profile", c.model_profile);
    c.model = model::Ps2Config::profile(c.model_profile);
    if (j.contains("model")) c.model = model::config_from_json(j.at("model"), c.model);
    if (j.contains("protocol")) c.protocol = room::protocol_from_json(j.at("protocol"));
    if (j.contains("simulate")) {
      const auto& s = j.at("simulate");
      reject_unknown(s, {"count", "hop", "render"}, "simulate");
      get(s, "count", c.simulate.count);
      get(s, "hop", c.simulate.hop);
      if (s.contains("render")) c.simulate.render = parse_render_mode(s.at("render").get<std::string>());
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, {"steps", "lr", "beta1", "beta2", "eps", "clip", "target"}, "train");
      get(t, "steps", c.train.steps);
      get(t, "lr", c.train.adam.lr);
      get(t, "beta1", c.train.adam.beta1);
      get(t, "beta2", c.train.adam.beta2);
      get(t, "eps", c.train.adam.eps);
      get(t, "clip", c.train.clip);
      if (t.contains("target")) c.train.target = parse_target_kind(t.at("target").get<std::string>());
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown(e, {"filter_len", "ridge", "metric", "binning"}, "eval");
      get(e, "filter_len", c.eval.bss.filter_len);
      get(e, "ridge", c.eval.bss.ridge);
      get(e, "metric", c.eval.metric);
      if (e.contains("binning")) c.eval.binning = eval::binning_from_json(e.at("binning"));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, std::string("run config: ") + e.what());
  }
  sort_binning(c.eval.binning);
  c.protocol.validate();
  require(c.simulate.hop > 0, ErrorKind::kUsage, "simulate: hop must be positive");
  require(c.train.clip > 0 && c.train.adam.lr > 0, ErrorKind::kUsage, "train: lr and clip must be positive");
  require(c.eval.bss.filter_len > 0, ErrorKind::kUsage, "eval: filter_len must be positive");
  require(c.eval.metric == "si_sdr" || c.eval.metric == "sdr" || c.eval.metric == "sir" || c.eval.metric == "sar",
          ErrorKind::kUsage, "eval: unknown metric '" + c.eval.metric + "'");
  return c;
}

RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kUsage, "cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kUsage, path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void write_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kData, "cannot write config file " + path);
  out << to_json(cfg).dump(2) << '\n';
}

std::string resolve_output_dir(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("PS2_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return ".";
}

}  // namespace ps2::io
