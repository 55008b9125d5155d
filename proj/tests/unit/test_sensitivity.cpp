#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ps2/common/error.hpp"
#include "ps2/model/config.hpp"
#include "ps2/model/model.hpp"
#include "ps2/sensitivity/ks.hpp"
#include "support.hpp"

using namespace ps2;
using namespace ps2::sensitivity;

namespace {

// O(n^2): evaluate both empirical CDFs at every sample point.
double ks_brute(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> grid = a;
  grid.insert(grid.end(), b.begin(), b.end());
  double best = 0.0;
  for (const double x : grid) {
    double fa = 0.0, fb = 0.0;
    for (const double v : a) fa += v <= x;
    for (const double v : b) fb += v <= x;
    best = std::max(best, std::abs(fa / a.size() - fb / b.size()));
  }
  return best;
}

std::vector<double> flat(const nn::ParameterStore<float>& s, const std::string& prefix) {
  std::vector<double> out;
  for (const auto* e : s.with_prefix(prefix)) {
    for (const float v : e->tensor.values()) out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_SUITE("sensitivity") {
  TEST_CASE("ks examples") {
    CHECK(ks_two_sample(std::vector<double>{0, 1}, std::vector<double>{0, 1}) == 0.0);
    CHECK(ks_two_sample(std::vector<double>{0, 1}, std::vector<double>{2, 3}) == 1.0);
    CHECK(ks_two_sample(std::vector<double>{1, 2}, std::vector<double>{1.5, 2.5}) == 0.5);
    CHECK(ks_brute({1, 2}, {1.5, 2.5}) == 0.5);
    CHECK_THROWS_AS(ks_two_sample(std::vector<double>{}, std::vector<double>{1}), Error);
  }

  TEST_CASE("ks matches the brute-force oracle on random pairs") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t na = 1 + rng.below(60), nb = 1 + rng.below(60);
      std::vector<double> a(na), b(nb);
      // Coarse values so ties within and across samples are common.
      for (auto& v : a) v = std::round(rng.normal() * 4.0) / 4.0;
      for (auto& v : b) v = std::round((rng.normal() + 0.3) * 4.0) / 4.0;
      CHECK(std::abs(ks_two_sample(a, b) - ks_brute(a, b)) <= 1e-12);
    }
  }

  TEST_CASE("ks symmetry and invariances") {
    Rng rng(2);
    std::vector<double> a(50), b(70);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal() * 1.5;
    const double d = ks_two_sample(a, b);
    CHECK(ks_two_sample(b, a) == d);
    std::reverse(a.begin(), a.end());
    CHECK(ks_two_sample(a, b) == d);
    std::vector<double> ta = a, tb = b;
    for (auto& v : ta) v = std::exp(v) + 3.0;
    for (auto& v : tb) v = std::exp(v) + 3.0;
    CHECK(ks_two_sample(ta, tb) == d);
  }

  TEST_CASE("identical stores give zeros") {
    const auto cfg = model::Ps2Config::toy();
    const auto a = model::init_params<float>(cfg, 1);
    const auto rep = block_sensitivity(a, a.clone(), model::functional_blocks(cfg));
    for (const auto& b : rep.blocks) {
      CHECK(b.ks == 0.0);
      CHECK(b.ks_normalized == 0.0);
      CHECK(b.count_a == b.count_b);
    }
  }

  TEST_CASE("one shifted block is the only sensitive one") {
    const auto cfg = model::Ps2Config::toy();
    const auto blocks = model::functional_blocks(cfg);
    const auto a = model::init_params<float>(cfg, 1);
    auto b = a.clone();
    const std::string shifted = "spectral.block1.temporal";
    for (auto& e : b.entries()) {
      if (nn::has_prefix(e.name, shifted)) {
        for (float& v : e.tensor.mutable_values()) v += 10.0f;
      }
    }
    const auto rep = block_sensitivity(a, b, blocks);
    REQUIRE(rep.blocks.size() == blocks.size());
    std::size_t total = 0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      CHECK(rep.blocks[k].prefix == blocks[k]);
      const bool hit = blocks[k] == shifted;
      CHECK(rep.blocks[k].ks == (hit ? 1.0 : 0.0));
      CHECK(rep.blocks[k].ks_normalized == (hit ? 1.0 : 0.0));
      total += rep.blocks[k].count_a;
    }
    CHECK(total == a.total_count());
  }

  TEST_CASE("two random inits match the oracle on subsampled parameters") {
    const auto cfg = model::Ps2Config::toy();
    const auto blocks = model::functional_blocks(cfg);
    const auto a = model::init_params<float>(cfg, 1);
    const auto b = model::init_params<float>(cfg, 2);
    const auto rep = block_sensitivity(a, b, blocks);
    Rng rng(3);
    bool saw_zero = false, saw_one = false;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      auto va = flat(a, blocks[k]), vb = flat(b, blocks[k]);
      CHECK(rep.blocks[k].ks == doctest::Approx(ks_brute(va, vb)).epsilon(1e-12));
      saw_zero |= rep.blocks[k].ks_normalized == 0.0;
      saw_one |= rep.blocks[k].ks_normalized == 1.0;
      CHECK(rep.blocks[k].ks_normalized >= 0.0);
      CHECK(rep.blocks[k].ks_normalized <= 1.0);
      // Subsampled to 1000 values: library vs oracle on the same multisets.
      if (va.size() > 1000) {
        std::shuffle(va.begin(), va.end(), std::mt19937_64(rng.next_u64()));
        va.resize(1000);
      }
      if (vb.size() > 1000) {
        std::shuffle(vb.begin(), vb.end(), std::mt19937_64(rng.next_u64()));
        vb.resize(1000);
      }
      CHECK(std::abs(ks_two_sample(va, vb) - ks_brute(va, vb)) <= 1e-12);
    }
    CHECK(saw_zero);
    CHECK(saw_one);
  }

  TEST_CASE("manifest and prefix errors") {
    const auto toy = model::Ps2Config::toy();
    auto sum = toy;
    sum.fusion = model::FusionMode::kSum;
    const auto a = model::init_params<float>(toy, 1);
    const auto b = model::init_params<float>(sum, 1);
    CHECK_THROWS_AS(block_sensitivity(a, b, model::functional_blocks(toy)), Error);
    CHECK_THROWS_WITH_AS(block_sensitivity(a, a, {"nothing.here"}), doctest::Contains("matches no parameters"),
                         Error);
  }

  TEST_CASE("heatmap grid") {
    SensitivityReport one;
    one.blocks = {{"decoder", 10, 10, 0.25, 0.0}};
    const std::string grid = heatmap_csv({{"moving_vs_static", one}});
    CHECK(grid == "variant,decoder\nmoving_vs_static,0\n");

    const auto cfg = model::Ps2Config::toy();
    const auto rep = block_sensitivity(model::init_params<float>(cfg, 1),
                                       model::init_params<float>(cfg, 5), model::functional_blocks(cfg));
    const std::string csv = heatmap_csv({{"a", rep}, {"b", rep}});
    std::istringstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header.rfind("variant,spectral.encoder,", 0) == 0);
    std::vector<double> values;
    std::stringstream cells(row.substr(row.find(',') + 1));
    for (std::string cell; std::getline(cells, cell, ',');) values.push_back(std::stod(cell));
    REQUIRE(values.size() == rep.blocks.size());
    for (std::size_t k = 0; k < values.size(); ++k) CHECK(values[k] == rep.blocks[k].ks_normalized);
    CHECK(to_json(rep)["blocks"].size() == rep.blocks.size());
  }
}
