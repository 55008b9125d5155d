// Prints one PASS/FAIL line per acceptance criterion. Arguments select a
// subset by number; no arguments runs all nine.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <set>
#include <string>

#include "criteria.hpp"

namespace fs = std::filesystem;

namespace ps2::acceptance {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "ps2_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace ps2::acceptance

namespace {

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no runtime bound
  ps2::acceptance::Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "stft round trip", 5, ps2::acceptance::stft_round_trip},
    {2, "gradient integrity", 600, ps2::acceptance::gradient_integrity},
    {3, "toy overfit", 900, ps2::acceptance::toy_overfit},
    {4, "signal model consistency", 0, ps2::acceptance::signal_model},
    {5, "protocol reproduction", 0, ps2::acceptance::protocol},
    {6, "metric correctness", 0, ps2::acceptance::metrics},
    {7, "ks sensitivity", 0, ps2::acceptance::ks_sensitivity},
    {8, "ablation path coverage", 0, ps2::acceptance::ablation_manifests},
    {9, "paper scale shape conformance", 0, ps2::acceptance::paper_shape},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    ps2::acceptance::Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(c.budget_s)) + " s budget";
    }
    std::printf("criterion %d %s: %s (%s; %.1f s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
