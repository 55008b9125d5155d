#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ps2/common/error.hpp"
#include "ps2/io/dataset.hpp"
#include "ps2/io/manifest.hpp"
#include "ps2/io/run_config.hpp"
#include "support.hpp"

using namespace ps2;
using namespace ps2::io;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kUsage;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  FAIL("expected an error");
  return {};
}

ManifestRecord sample_record() {
  ManifestRecord r;
  r.id = "000003";
  r.seed = 18446744073709551557ull;
  r.room = {8.25, 9.5, 3.125};
  r.rt60 = 0.4321;
  r.snr_db = 7.1;
  r.speeds = {0.25, 0.0};
  r.endpoints = {{{1, 2, 1.7}, {1.5, 2, 1.7}}, {{3, 3, 1.6}, {3, 3, 1.6}}};
  r.min_angle_deg = 33.3;
  r.duration_s = 2.5;
  r.files = {"000003/scene.json", "000003/mixture.wav", {"000003/source0.wav", "000003/source1.wav"},
             {"000003/dry0.wav", "000003/dry1.wav"}, "000003/noise.wav"};
  return r;
}

std::string header_line() { return "{\"format\":\"ps2-manifest\",\"version\":1}\n"; }

room::ProtocolRanges short_protocol() {
  room::ProtocolRanges p;
  p.duration = {0.5, 0.6};
  p.rt60 = {0.1, 0.2};
  return p;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("default run config round-trips losslessly") {
    const RunConfig c;
    const auto j = to_json(c);
    const RunConfig back = run_config_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back == c);
    CHECK(to_json(back).dump() == j.dump());
  }

  TEST_CASE("edited run config round-trips through a file") {
    RunConfig c;
    c.seed = 123456789012345ull;
    c.output_dir = "runs/a b";
    c.model_profile = "toy";
    c.model = model::Ps2Config::toy();
    c.model.fusion = model::FusionMode::kSum;
    c.model.gru_dropout = 0.1 / 3.0;
    c.protocol.rt60 = {0.2, 0.6};
    c.protocol.mic_azimuths_deg = {0.0, 180.0};
    c.simulate = {7, 1024, room::RenderMode::kExact};
    c.train.steps = 42;
    c.train.adam.lr = 1.0 / 3.0 * 1e-3;
    c.train.target = TargetKind::kDry;
    c.eval.bss.filter_len = 64;
    c.eval.metric = "sar";
    c.eval.binning = {{"speed", {0.0, 0.5, 1.0}}, {"duration_s", {0.0, 2.0, std::numeric_limits<double>::infinity()}}};
    const auto dir = test::scratch_dir("io_config");
    const std::string path = (dir / "run.json").string();
    write_run_config(c, path);
    const RunConfig back = read_run_config(path);
    CHECK(back == c);
    CHECK(back.model == c.model);
    CHECK(back.train.adam.lr == c.train.adam.lr);
    CHECK(std::isinf(back.eval.binning.front().edges.back()));
    CHECK(to_json(back).dump() == to_json(read_run_config(path)).dump());
  }

  TEST_CASE("partial config keeps defaults and the model profile") {
    const auto c = run_config_from_json(nlohmann::json::parse(R"({"model_profile":"toy","model":{"blocks":3}})"));
    auto expected = model::Ps2Config::toy();
    expected.blocks = 3;
    CHECK(c.model == expected);
    CHECK(c.train.steps == 500);
    CHECK(c.train.adam.lr == 5e-4);
    CHECK(c.train.clip == 5.0);
  }

  TEST_CASE("unknown keys are rejected at every level") {
    for (const char* text : {R"({"sede": 1})", R"({"model": {"embd": 4}})", R"({"protocol": {"rt61": [0.1, 0.2]}})",
                             R"({"simulate": {"cont": 3}})", R"({"train": {"learning_rate": 0.1}})",
                             R"({"eval": {"metrics": "sdr"}})", R"({"eval": {"binning": {"reverb": [0, 1]}}})"}) {
      INFO(text);
      CHECK(kind_of([&] { run_config_from_json(nlohmann::json::parse(text)); }) == ErrorKind::kUsage);
    }
    CHECK(message_of([] { run_config_from_json(nlohmann::json::parse(R"({"train": {"stepz": 1}})")); })
              .find("stepz") != std::string::npos);
    CHECK(kind_of([] { run_config_from_json(nlohmann::json::parse(R"({"train": {"target": "wet"}})")); }) ==
          ErrorKind::kUsage);
    CHECK(kind_of([] { run_config_from_json(nlohmann::json::parse(R"({"seed": "x"})")); }) == ErrorKind::kUsage);
    CHECK(kind_of([] { read_run_config("/nonexistent/run.json"); }) == ErrorKind::kUsage);
  }

  TEST_CASE("output directory resolution") {
    CHECK(resolve_output_dir("x") == "x");
    ::setenv("PS2_OUTPUT_DIR", "/tmp/ps2_env_out", 1);
    CHECK(resolve_output_dir("") == "/tmp/ps2_env_out");
    ::unsetenv("PS2_OUTPUT_DIR");
    CHECK(resolve_output_dir("") == ".");
  }

  TEST_CASE("manifest write/read round trip") {
    auto a = sample_record();
    auto b = sample_record();
    b.id = "000004";
    b.speeds = {1.0, 0.5};
    const auto dir = test::scratch_dir("io_manifest");
    const std::string path = (dir / "manifest.jsonl").string();
    write_manifest(path, {a, b});
    const auto back = read_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == a);
    CHECK(back[1] == b);
    CHECK(slurp(path) == manifest_text(back));
  }

  TEST_CASE("manifest key order is stable") {
    const std::string line = to_json(sample_record()).dump();
    std::size_t last = 0;
    for (const char* key : {"\"id\"", "\"seed\"", "\"room\"", "\"rt60\"", "\"snr_db\"", "\"speeds\"", "\"endpoints\"",
                            "\"min_angle_deg\"", "\"duration_s\"", "\"files\""}) {
      const std::size_t pos = line.find(key);
      REQUIRE(pos != std::string::npos);
      CHECK(pos >= last);
      last = pos;
    }
    CHECK(manifest_text({}) == header_line());
  }

  TEST_CASE("manifest schema violations name the field and line") {
    const std::string good = to_json(sample_record()).dump();
    auto with = [&](const std::function<void(nlohmann::json&)>& edit) {
      auto j = nlohmann::json::parse(good);
      edit(j);
      return header_line() + good + "\n" + j.dump() + "\n";
    };
    const std::string missing = message_of([&] { parse_manifest(with([](auto& j) { j.erase("rt60"); })); });
    CHECK(missing.find("line 3") != std::string::npos);
    CHECK(missing.find("missing field 'rt60'") != std::string::npos);
    const std::string nested = message_of([&] { parse_manifest(with([](auto& j) { j["files"].erase("noise"); })); });
    CHECK(nested.find("missing field 'files.noise'") != std::string::npos);
    const std::string extra = message_of([&] { parse_manifest(with([](auto& j) { j["color"] = "red"; })); });
    CHECK(extra.find("unexpected field 'color'") != std::string::npos);
    const std::string type = message_of([&] { parse_manifest(with([](auto& j) { j["snr_db"] = "5"; })); });
    CHECK(type.find("'snr_db'") != std::string::npos);
    const std::string dup = message_of([&] { parse_manifest(header_line() + good + "\n" + good + "\n"); });
    CHECK(dup.find("duplicate id") != std::string::npos);
    CHECK(kind_of([&] { parse_manifest(with([](auto& j) { j["seed"] = -1; })); }) == ErrorKind::kData);
    CHECK(kind_of([&] { parse_manifest(with([](auto& j) { j["room"] = {1, 2}; })); }) == ErrorKind::kData);
    CHECK(message_of([&] { parse_manifest(header_line() + "{not json\n"); }).find("line 2") != std::string::npos);
  }

  TEST_CASE("manifest header and version are checked") {
    const std::string rec = to_json(sample_record()).dump() + "\n";
    CHECK(kind_of([&] { parse_manifest(""); }) == ErrorKind::kData);
    CHECK(kind_of([&] { parse_manifest(rec); }) == ErrorKind::kData);
    CHECK(message_of([&] { parse_manifest("{\"format\":\"ps2-manifest\",\"version\":2}\n" + rec); })
              .find("version 2") != std::string::npos);
    CHECK(parse_manifest(header_line() + rec + "\n").size() == 1);
  }

  TEST_CASE("record fields follow the scene") {
    const auto scene = room::sample_scene(11, {});
    const auto r = record_of("x", scene);
    CHECK(r.seed == 11);
    CHECK(r.rt60 == scene.rt60);
    CHECK(r.snr_db == scene.target_snr_db);
    REQUIRE(r.speeds.size() == 2);
    CHECK(r.speeds[1] == scene.trajectories[1].speed());
    CHECK(r.endpoints[0].second == scene.trajectories[0].end());
    CHECK(r.min_angle_deg == scene.min_source_angle_deg());
    CHECK(r.duration_s == doctest::Approx(static_cast<double>(scene.mixture_length()) / 16000.0));
  }

  TEST_CASE("simulated datasets are byte-identical across runs and job counts") {
    const auto dir = test::scratch_dir("io_dataset");
    SimulateRequest req;
    req.seed = 7;
    req.count = 3;
    req.protocol = short_protocol();
    req.dir = (dir / "a").string();
    const auto recs = simulate_dataset(req);
    req.dir = (dir / "b").string();
    req.jobs = 2;
    simulate_dataset(req);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir / "a");
      INFO(rel.string());
      CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
      ++files;
    }
    CHECK(files == 1 + 3 * 7);
    CHECK(read_manifest((dir / "a" / "manifest.jsonl").string()) == recs);
    CHECK(recs[0].seed == item_seed(7, 0));
    CHECK(recs[2].id == "000002");
    CHECK(item_seed(7, 0) != item_seed(8, 0));
  }

  TEST_CASE("simulate refuses to overwrite without force") {
    const auto dir = test::scratch_dir("io_force");
    SimulateRequest req;
    req.count = 1;
    req.protocol = short_protocol();
    req.dir = dir.string();
    simulate_dataset(req);
    CHECK(kind_of([&] { simulate_dataset(req); }) == ErrorKind::kUsage);
    req.force = true;
    CHECK_NOTHROW(simulate_dataset(req));
    req.count = 0;
    CHECK(kind_of([&] { simulate_dataset(req); }) == ErrorKind::kUsage);
  }

  TEST_CASE("loaded items decompose and give targets") {
    const auto dir = test::scratch_dir("io_load");
    SimulateRequest req;
    req.seed = 3;
    req.count = 1;
    req.protocol = short_protocol();
    req.dir = dir.string();
    const auto recs = simulate_dataset(req);
    const auto item = load_item(dir.string(), recs[0]);
    CHECK(item.scene == room::sample_scene(recs[0].seed, req.protocol));
    const std::size_t n = item.mixture.length();
    CHECK(n == item.scene.mixture_length());
    double err = 0, ref = 0;
    for (std::size_t c = 0; c < item.mixture.channels(); ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const double sum = item.sources[0].channel(c)[i] + item.sources[1].channel(c)[i] + item.noise.channel(c)[i];
        err = std::max(err, std::abs(sum - item.mixture.channel(c)[i]));
        ref = std::max(ref, std::abs(item.mixture.channel(c)[i]));
      }
    }
    // Each stored signal is rounded to float32 independently.
    CHECK(err <= 4 * ref * std::numeric_limits<float>::epsilon());
    const auto rev = targets_of(item, TargetKind::kReverberant);
    CHECK(rev.channels() == 2);
    CHECK(rev.channel(1)[n / 2] == item.sources[1].channel(0)[n / 2]);
    const auto dry = targets_of(item, TargetKind::kDry);
    CHECK(dry.length() == n);
    CHECK(dry.channel(0)[5] == item.dry[0].channel(0)[5]);
    auto broken = recs[0];
    broken.files.mixture = "missing.wav";
    CHECK(kind_of([&] { load_item(dir.string(), broken); }) == ErrorKind::kData);
  }
}
