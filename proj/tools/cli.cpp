#include "cli.hpp"

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>

#include "ps2/common/error.hpp"
#include "ps2/eval/report.hpp"
#include "ps2/io/dataset.hpp"
#include "ps2/io/manifest.hpp"
#include "ps2/io/run_config.hpp"
#include "ps2/model/audit.hpp"
#include "ps2/model/model.hpp"
#include "ps2/model/weights.hpp"
#include "ps2/room/render.hpp"
#include "ps2/sensitivity/ks.hpp"
#include "ps2/signal/stft.hpp"
#include "ps2/signal/wav.hpp"
#include "ps2/train/overfit.hpp"

namespace ps2::cli {

namespace {

namespace fs = std::filesystem;

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage:
      return "usage";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kNumerical:
      return "numerical";
  }
  return "data";
}

int report_error(std::ostream& err, ErrorKind kind, const std::string& message) {
  const nlohmann::ordered_json j = {
      {"error", {{"kind", kind_name(kind)}, {"code", static_cast<int>(kind)}, {"message", message}}}};
  err << j.dump() << std::endl;
  return static_cast<int>(kind);
}

// Options every command understands.
struct Common {
  std::string config;
  std::uint64_t seed = 1;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  bool force = false;
  int jobs = 0;

  void attach(CLI::App* cmd, bool with_seed = true) {
    cmd->add_option("--config", config, "run configuration JSON")->check(CLI::ExistingFile);
    if (with_seed) seed_opt = cmd->add_option("--seed", seed, "random seed (overrides the config)");
    cmd->add_option("--out", out, "output directory (default: config output_dir, $PS2_OUTPUT_DIR, .)");
    cmd->add_flag("--force", force, "overwrite existing outputs");
    cmd->add_option("--jobs", jobs, "parallel work items (0: all cores)")->check(CLI::NonNegativeNumber);
  }

  io::RunConfig load() const {
    io::RunConfig c = config.empty() ? io::RunConfig{} : io::read_run_config(config);
    if (seed_opt != nullptr && seed_opt->count() > 0) c.seed = seed;
    return c;
  }

  std::string out_dir(const io::RunConfig& c) const { return io::resolve_output_dir(out.empty() ? c.output_dir : out); }

  int threads() const { return jobs > 0 ? jobs : omp_get_max_threads(); }
};

void write_text(const fs::path& path, const std::string& text, bool force) {
  io::guard_overwrite(path.string(), force);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::kData, "cannot write " + path.string());
  f << text;
  require(static_cast<bool>(f), ErrorKind::kData, "failed writing " + path.string());
}

signal::Waveform to_waveform(const ad::Tensor<float>& t, int rate) {
  signal::Waveform w(t.dim(0), t.dim(1), rate);
  for (std::size_t c = 0; c < t.dim(0); ++c)
    for (std::size_t i = 0; i < t.dim(1); ++i) w.channel(c)[i] = t[c * t.dim(1) + i];
  return w;
}

struct LoadedModel {
  model::Ps2Config cfg;
  nn::ParameterStore<float> store;
};

LoadedModel load_model(const std::string& path) {
  const auto side = model::read_sidecar(path);
  require(side.is_object() && side.contains("model"), ErrorKind::kData,
          model::sidecar_path(path) + ": missing 'model' configuration");
  LoadedModel m;
  try {
    m.cfg = model::config_from_json(side.at("model"));
  } catch (const Error& e) {
    fail(ErrorKind::kData, model::sidecar_path(path) + ": " + e.what());
  }
  m.store = model::init_params<float>(m.cfg, 0);
  model::load_params(m.store, path);
  return m;
}

signal::Waveform separate_one(const model::Ps2Model<float>& net, const signal::Waveform& mixture) {
  ad::NoGradScope ng;
  const auto out = net.forward(mixture, model::RunMode::eval());
  return to_waveform(out.waveforms, mixture.sample_rate());
}

void write_speakers(const fs::path& dir, const signal::Waveform& est, bool force) {
  for (std::size_t c = 0; c < est.channels(); ++c) {
    const fs::path p = dir / ("speaker" + std::to_string(c) + ".wav");
    io::guard_overwrite(p.string(), force);
  }
  fs::create_directories(dir);
  for (std::size_t c = 0; c < est.channels(); ++c) {
    signal::Waveform one(1, est.length(), est.sample_rate());
    std::copy(est.channel(c).begin(), est.channel(c).end(), one.channel(0).begin());
    signal::write_wav((dir / ("speaker" + std::to_string(c) + ".wav")).string(), one);
  }
}

// Runs `body(i)` for i in [0, n) on up to `jobs` threads; the first failure
// (in index order) is rethrown.
template <typename F>
void parallel_items(std::size_t n, int jobs, F&& body) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

const io::ManifestRecord& find_record(const std::vector<io::ManifestRecord>& recs, const std::string& id) {
  require(!recs.empty(), ErrorKind::kData, "manifest has no records");
  if (id.empty()) return recs.front();
  for (const auto& r : recs)
    if (r.id == id) return r;
  fail(ErrorKind::kUsage, "no record with id '" + id + "' in the manifest");
}

std::string manifest_dir(const std::string& manifest) {
  const fs::path p(manifest);
  return p.has_parent_path() ? p.parent_path().string() : ".";
}

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
  Common common;
  std::size_t count = 0;
  std::size_t hop = 0;
  std::string render;

  void attach(CLI::App* cmd) {
    common.attach(cmd);
    cmd->add_option("--count", count, "number of mixtures (overrides the config)");
    cmd->add_option("--hop", hop, "waypoint spacing in samples");
    cmd->add_option("--render", render, "crossfade or exact")->check(CLI::IsMember({"crossfade", "exact"}));
  }

  void run(std::ostream& out) const {
    io::RunConfig c = common.load();
    if (count > 0) c.simulate.count = count;
    if (hop > 0) c.simulate.hop = hop;
    if (!render.empty()) c.simulate.render = io::parse_render_mode(render);
    io::SimulateRequest req;
    req.dir = common.out_dir(c);
    req.seed = c.seed;
    req.count = c.simulate.count;
    req.protocol = c.protocol;
    req.options = c.simulate;
    req.jobs = common.threads();
    req.force = common.force;
    const auto recs = io::simulate_dataset(req);
    io::RunConfig saved = c;
    saved.output_dir.clear();
    write_text(fs::path(req.dir) / "config.json", io::to_json(saved).dump(2) + "\n", true);
    out << "simulate: wrote " << recs.size() << " mixtures to " << (fs::path(req.dir) / "manifest.jsonl").string()
        << '\n';
  }
};

// ---------------------------------------------------------------- gradcheck

struct GradcheckCmd {
  Common common;
  std::string profile = "toy";
  bool skip_layers = false;
  std::string report;

  void attach(CLI::App* cmd) {
    common.attach(cmd);
    cmd->add_option("--profile", profile,
                    "toy or gradcheck: both name the check geometry M=2, C=2, D=4, B=1, F=9")
        ->check(CLI::IsMember({"toy", "gradcheck"}));
    cmd->add_flag("--skip-layers", skip_layers, "only check the full model");
    cmd->add_option("--report", report, "write the JSON report to this file");
  }

  void run(std::ostream& out) const {
    const io::RunConfig c = common.load();
    const auto seed = common.seed_opt->count() > 0 ? c.seed : 41;
    model::GradientAudit audit;
    if (!skip_layers) audit = model::audit_layers();
    audit.checks.push_back(model::audit_model(model::Ps2Config::gradcheck(), 40, seed));
    for (const auto& e : audit.checks) audit.max_rel_error = std::max(audit.max_rel_error, e.report.max_rel_error);
    out << std::setprecision(3);
    for (const auto& e : audit.checks)
      out << "gradcheck: " << e.name << " max relative error " << e.report.max_rel_error << " over "
          << e.report.coords_checked << " coordinates\n";
    out << "gradcheck: " << (audit.passed() ? "PASS" : "FAIL") << " max relative error " << audit.max_rel_error
        << " (tolerance " << audit.tol << ")\n";
    if (!report.empty()) write_text(report, model::to_json(audit).dump(2) + "\n", common.force);
    require(audit.passed(), ErrorKind::kNumerical,
            "gradient check failed: max relative error " + std::to_string(audit.max_rel_error));
  }
};

// ---------------------------------------------------------------- overfit

struct OverfitCmd {
  Common common;
  std::string profile = "toy";
  std::string manifest, id, target;
  double duration = 1.0;
  std::size_t steps = 0;
  double lr = 0.0, clip = 0.0;

  void attach(CLI::App* cmd) {
    common.attach(cmd);
    cmd->add_option("--profile", profile, "model profile when no config is given")
        ->check(CLI::IsMember({"toy", "paper", "gradcheck"}));
    cmd->add_option("--manifest", manifest, "train on a dataset item instead of a fresh scene")
        ->check(CLI::ExistingFile);
    cmd->add_option("--id", id, "manifest record id (default: first)");
    cmd->add_option("--duration", duration, "length in seconds of the generated scene")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--steps", steps, "Adam steps");
    cmd->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--clip", clip, "gradient norm clip")->check(CLI::PositiveNumber);
    cmd->add_option("--target", target, "reverberant or dry")->check(CLI::IsMember({"reverberant", "dry"}));
  }

  void run(std::ostream& out) const {
    io::RunConfig c = common.load();
    if (common.config.empty()) {
      c.model_profile = profile;
      c.model = model::Ps2Config::profile(profile);
    }
    if (steps > 0) c.train.steps = steps;
    if (lr > 0) c.train.adam.lr = lr;
    if (clip > 0) c.train.clip = clip;
    if (!target.empty()) c.train.target = io::parse_target_kind(target);
    omp_set_num_threads(common.threads());

    io::DatasetItem item;
    std::string source;
    if (!manifest.empty()) {
      const auto recs = io::read_manifest(manifest);
      const auto& rec = find_record(recs, id);
      item = io::load_item(manifest_dir(manifest), rec);
      source = manifest + "#" + rec.id;
    } else {
      room::ProtocolRanges p = c.protocol;
      if (p.mic_azimuths_deg.size() != c.model.mics) {
        p.mic_azimuths_deg.clear();
        for (std::size_t m = 0; m < c.model.mics; ++m)
          p.mic_azimuths_deg.push_back(360.0 * static_cast<double>(m) / static_cast<double>(c.model.mics));
      }
      p.duration = {duration, duration};
      item.scene = room::sample_scene(c.seed, p);
      auto r = room::render_scene(item.scene, c.simulate.hop, c.simulate.render);
      item.mixture = std::move(r.mix.mixture);
      item.sources = std::move(r.mix.sources);
      item.dry = std::move(r.dry);
      item.noise = std::move(r.mix.noise);
      source = "scene seed " + std::to_string(c.seed);
    }
    require(item.scene.sources() == c.model.sources, ErrorKind::kData,
            "scene has " + std::to_string(item.scene.sources()) + " sources, model separates " +
                std::to_string(c.model.sources));
    const signal::Waveform refs = io::targets_of(item, c.train.target);

    const fs::path dir = common.out_dir(c);
    const fs::path weights = dir / "weights.ps2w";
    for (const char* name : {"weights.ps2w", "log.csv", "summary.json"})
      io::guard_overwrite((dir / name).string(), common.force);
    fs::create_directories(dir);

    train::OverfitOptions opt;
    opt.steps = c.train.steps;
    opt.adam = c.train.adam;
    opt.clip = c.train.clip;
    opt.seed = c.seed;
    opt.log_csv = (dir / "log.csv").string();
    opt.on_step = [&](const train::StepLog& s) {
      if (s.step % 25 == 0 || s.step == opt.steps)
        out << "overfit: step " << s.step << " loss " << std::fixed << std::setprecision(2) << s.loss_db
            << " dB si-sdri " << s.si_sdri_db << " dB\n"
            << std::flush;
    };
    const auto res = train::overfit(item.mixture, refs, c.model, opt);

    nlohmann::json extra;
    extra["model"] = model::to_json(c.model);
    extra["profile"] = c.model_profile;
    extra["trained_on"] = source;
    model::save_params(res.params, weights.string(), extra);
    nlohmann::ordered_json summary;
    summary["trained_on"] = source;
    summary["steps"] = opt.steps;
    summary["lr"] = opt.adam.lr;
    summary["clip"] = opt.clip;
    summary["target"] = io::to_string(c.train.target);
    summary["mixture_si_sdr"] = res.mixture_si_sdr;
    summary["initial_si_sdri"] = res.initial_si_sdri;
    summary["final_si_sdri"] = res.final_si_sdri;
    summary["final_perm"] = res.final_perm;
    write_text(dir / "summary.json", summary.dump(2) + "\n", true);
    out << "overfit: initial si-sdri " << std::fixed << std::setprecision(2) << res.initial_si_sdri
        << " dB, final " << res.final_si_sdri << " dB; weights in " << weights.string() << '\n';
  }
};

// ---------------------------------------------------------------- separate

struct SeparateCmd {
  Common common;
  std::string weights, input, manifest;
  std::vector<std::string> ids;

  void attach(CLI::App* cmd) {
    common.attach(cmd, false);
    cmd->add_option("--weights", weights, "PS2W weights file (config read from its sidecar)")
        ->required()
        ->check(CLI::ExistingFile);
    auto* in = cmd->add_option("--input", input, "mixture WAV")->check(CLI::ExistingFile);
    auto* man = cmd->add_option("--manifest", manifest, "separate dataset items into <out>/<id>/")
                    ->check(CLI::ExistingFile);
    in->excludes(man);
    cmd->add_option("--id", ids, "restrict --manifest to these ids");
  }

  void run(std::ostream& out) const {
    require(!input.empty() || !manifest.empty(), ErrorKind::kUsage, "separate needs --input or --manifest");
    const io::RunConfig c = common.load();
    LoadedModel m = load_model(weights);
    const model::Ps2Model<float> net(m.cfg, m.store);
    const fs::path dir = common.out_dir(c);
    if (!input.empty()) {
      const auto mix = signal::read_wav(input, m.cfg.sample_rate);
      write_speakers(dir, separate_one(net, mix), common.force);
      out << "separate: wrote " << m.cfg.sources << " speakers to " << dir.string() << '\n';
      return;
    }
    const auto recs = io::read_manifest(manifest);
    std::vector<const io::ManifestRecord*> todo;
    for (const auto& r : recs)
      if (ids.empty() || std::find(ids.begin(), ids.end(), r.id) != ids.end()) todo.push_back(&r);
    require(!todo.empty(), ErrorKind::kUsage, "no manifest records selected");
    const std::string base = manifest_dir(manifest);
    parallel_items(todo.size(), common.threads(), [&](std::size_t i) {
      const auto mix = signal::read_wav((fs::path(base) / todo[i]->files.mixture).string(), m.cfg.sample_rate);
      write_speakers(dir / todo[i]->id, separate_one(net, mix), common.force);
    });
    out << "separate: wrote " << todo.size() << " items to " << dir.string() << '\n';
  }
};

// ---------------------------------------------------------------- eval

struct EvalCmd {
  Common common;
  std::string manifest, estimates, bins, metric, target;
  std::size_t filter_len = 0;

  void attach(CLI::App* cmd) {
    common.attach(cmd, false);
    cmd->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    cmd->add_option("--estimates", estimates, "directory with <id>/speaker<c>.wav")
        ->required()
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--bins", bins, "JSON bin edges per condition")->check(CLI::ExistingFile);
    cmd->add_option("--metric", metric, "metric for the conditional report")
        ->check(CLI::IsMember({"si_sdr", "sdr", "sir", "sar"}));
    cmd->add_option("--target", target, "reverberant or dry")->check(CLI::IsMember({"reverberant", "dry"}));
    cmd->add_option("--filter-len", filter_len, "BSS-eval distortion filter length");
  }

  void run(std::ostream& out) const {
    io::RunConfig c = common.load();
    if (!metric.empty()) c.eval.metric = metric;
    if (!target.empty()) c.train.target = io::parse_target_kind(target);
    if (filter_len > 0) c.eval.bss.filter_len = filter_len;
    if (!bins.empty()) {
      std::ifstream in(bins);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kUsage, bins + ": " + e.what());
      }
      c.eval.binning = eval::binning_from_json(j);
    }
    const fs::path dir = common.out_dir(c);
    for (const char* name : {"reports.csv", "reports.json", "summary.csv", "summary.json"})
      io::guard_overwrite((dir / name).string(), common.force);

    const auto recs = io::read_manifest(manifest);
    const std::string base = manifest_dir(manifest);
    std::vector<eval::PairReport> reports(recs.size());
    parallel_items(recs.size(), common.threads(), [&](std::size_t i) {
      const auto item = io::load_item(base, recs[i]);
      const auto refs = io::targets_of(item, c.train.target);
      const std::size_t n = refs.length();
      signal::Waveform ests(refs.channels(), n, refs.sample_rate());
      for (std::size_t s = 0; s < refs.channels(); ++s) {
        const auto path = fs::path(estimates) / recs[i].id / ("speaker" + std::to_string(s) + ".wav");
        const auto w = signal::read_wav(path.string(), refs.sample_rate());
        require(w.channels() == 1 && w.length() == n, ErrorKind::kData,
                path.string() + ": expected one channel of " + std::to_string(n) + " samples");
        std::copy(w.channel(0).begin(), w.channel(0).end(), ests.channel(s).begin());
      }
      reports[i] = eval::evaluate_pair(ests, refs, eval::conditions_of(item.scene), recs[i].id, c.eval.bss);
    });
    const auto summary = eval::conditional_report(reports, c.eval.binning, c.eval.metric);
    write_text(dir / "reports.csv", eval::reports_csv(reports), common.force);
    write_text(dir / "reports.json", eval::reports_json(reports).dump(2) + "\n", common.force);
    write_text(dir / "summary.csv", eval::summary_csv(summary), common.force);
    write_text(dir / "summary.json", eval::summary_json(summary).dump(2) + "\n", common.force);
    double total = 0;
    for (const auto& r : reports) total += r.mean("si_sdr");
    out << "eval: " << reports.size() << " mixtures, mean SI-SDR " << std::fixed << std::setprecision(2)
        << total / static_cast<double>(reports.size()) << " dB; reports in " << dir.string() << '\n';
  }
};

// ---------------------------------------------------------------- sensitivity

struct SensitivityCmd {
  Common common;
  std::vector<std::string> pairs;

  void attach(CLI::App* cmd) {
    common.attach(cmd, false);
    cmd->add_option("--pair", pairs, "NAME=REFERENCE.ps2w,ADAPTED.ps2w (repeatable)")->required();
  }

  void run(std::ostream& out) const {
    const io::RunConfig c = common.load();
    const fs::path dir = common.out_dir(c);
    for (const char* name : {"sensitivity.json", "heatmap.csv"})
      io::guard_overwrite((dir / name).string(), common.force);
    std::vector<std::pair<std::string, sensitivity::SensitivityReport>> variants;
    nlohmann::ordered_json all = nlohmann::ordered_json::object();
    for (const auto& spec : pairs) {
      const auto eq = spec.find('=');
      const auto comma = spec.find(',', eq == std::string::npos ? 0 : eq);
      require(eq != std::string::npos && eq > 0 && comma != std::string::npos, ErrorKind::kUsage,
              "--pair expects NAME=A.ps2w,B.ps2w, got '" + spec + "'");
      const std::string name = spec.substr(0, eq);
      const LoadedModel a = load_model(spec.substr(eq + 1, comma - eq - 1));
      const LoadedModel b = load_model(spec.substr(comma + 1));
      require(a.cfg == b.cfg, ErrorKind::kData, "pair '" + name + "': the two models have different configurations");
      auto report = sensitivity::block_sensitivity(a.store, b.store, model::functional_blocks(a.cfg));
      all[name] = sensitivity::to_json(report);
      variants.emplace_back(name, std::move(report));
    }
    write_text(dir / "sensitivity.json", all.dump(2) + "\n", common.force);
    write_text(dir / "heatmap.csv", sensitivity::heatmap_csv(variants), common.force);
    out << "sensitivity: " << variants.size() << " model pairs; heatmap in " << (dir / "heatmap.csv").string()
        << '\n';
  }
};

// ---------------------------------------------------------------- itdmap

struct ItdCmd {
  Common common;
  std::string input;
  std::vector<std::size_t> mics{0, 1};
  std::size_t fft = 512, hop = 256;

  void attach(CLI::App* cmd) {
    common.attach(cmd, false);
    cmd->add_option("--input", input, "multichannel WAV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--mics", mics, "microphone pair")->expected(2)->delimiter(',');
    cmd->add_option("--fft", fft, "FFT size");
    cmd->add_option("--hop", hop, "hop size");
  }

  void run(std::ostream& out) const {
    const io::RunConfig c = common.load();
    const auto wave = signal::read_wav(input);
    require(mics.size() == 2, ErrorKind::kUsage, "--mics needs two indices");
    const signal::StftConfig sc{fft, hop, signal::WindowKind::kHannPeriodic};
    sc.validate();
    const auto grid = signal::itd_map(signal::stft(wave, sc), {mics[0], mics[1]});
    std::ostringstream csv;
    csv << std::setprecision(9) << "time_s";
    const double rate = wave.sample_rate();
    for (std::size_t f = 0; f < grid.bins; ++f) csv << ',' << static_cast<double>(f) * rate / static_cast<double>(fft);
    csv << '\n';
    for (std::size_t t = 0; t < grid.frames; ++t) {
      csv << static_cast<double>(t * hop) / rate;
      for (std::size_t f = 0; f < grid.bins; ++f) csv << ',' << grid.at(0, t, f);
      csv << '\n';
    }
    const fs::path path = fs::path(common.out_dir(c)) / "itd.csv";
    write_text(path, csv.str(), common.force);
    out << "itdmap: " << grid.frames << " frames x " << grid.bins << " bins in " << path.string() << '\n';
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ps2: moving-source speech separation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ps2 1.0");

  SimulateCmd simulate;
  GradcheckCmd gradcheck;
  OverfitCmd overfit;
  SeparateCmd separate;
  EvalCmd evaluate;
  SensitivityCmd sens;
  ItdCmd itd;
  auto* c_sim = app.add_subcommand("simulate", "render a dataset of moving-source mixtures");
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference check of layers and model");
  auto* c_fit = app.add_subcommand("overfit", "train a fresh model on one mixture");
  auto* c_sep = app.add_subcommand("separate", "separate mixtures with trained weights");
  auto* c_eval = app.add_subcommand("eval", "score separated speech against references");
  auto* c_sens = app.add_subcommand("sensitivity", "KS parameter-shift sensitivity per functional block");
  auto* c_itd = app.add_subcommand("itdmap", "inter-channel time difference map as CSV");
  simulate.attach(c_sim);
  gradcheck.attach(c_grad);
  overfit.attach(c_fit);
  separate.attach(c_sep);
  evaluate.attach(c_eval);
  sens.attach(c_sens);
  itd.attach(c_itd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    return report_error(err, ErrorKind::kUsage, e.what());
  }

  try {
    if (c_sim->parsed()) simulate.run(out);
    if (c_grad->parsed()) gradcheck.run(out);
    if (c_fit->parsed()) overfit.run(out);
    if (c_sep->parsed()) separate.run(out);
    if (c_eval->parsed()) evaluate.run(out);
    if (c_sens->parsed()) sens.run(out);
    if (c_itd->parsed()) itd.run(out);
  } catch (const Error& e) {
    return report_error(err, e.kind(), e.what());
  } catch (const CLI::Error& e) {
    return report_error(err, ErrorKind::kUsage, e.what());
  } catch (const std::exception& e) {
    return report_error(err, ErrorKind::kData, e.what());
  }
  return 0;
}

}  // namespace ps2::cli
