#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ps2/common/error.hpp"
#include "ps2/eval/bss.hpp"
#include "ps2/eval/report.hpp"
#include "ps2/train/loss.hpp"
#include "support.hpp"

using namespace ps2;
using namespace ps2::eval;
using signal::Waveform;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Dense least squares with L = 1: explicit design matrices solved by QR.
BssMetrics dense_oracle(const std::vector<double>& est, const std::vector<std::vector<double>>& refs,
                        std::size_t target) {
  const std::size_t n = est.size();
  Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(est.data(), static_cast<Eigen::Index>(n));
  Eigen::MatrixXd all(n, refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    all.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXd>(refs[i].data(), static_cast<Eigen::Index>(n));
  }
  const Eigen::MatrixXd t = all.col(static_cast<Eigen::Index>(target));
  const Eigen::VectorXd s_target = t * t.colPivHouseholderQr().solve(e);
  const Eigen::VectorXd p_all = all * all.colPivHouseholderQr().solve(e);
  const Eigen::VectorXd interf = p_all - s_target, artif = e - p_all;
  auto db = [](double a, double b) { return 10.0 * std::log10(a / b); };
  return {db(s_target.squaredNorm(), (interf + artif).squaredNorm()),
          db(s_target.squaredNorm(), interf.squaredNorm()),
          db(p_all.squaredNorm(), artif.squaredNorm())};
}

Waveform wave(const std::vector<std::vector<double>>& ch) { return Waveform(ch, 16000); }

PairReport tagged(double metric, double rt60, double snr = 5.0) {
  PairReport r;
  r.perm = {0};
  r.si_sdr = r.sdr = r.sir = r.sar = {metric};
  r.conditions = {rt60, snr, 0.5, 30.0, 3.0};
  return r;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("estimate equal to the target reaches the cap region") {
    Rng rng(1);
    const auto s1 = randn(2000, rng), s2 = randn(2000, rng);
    const BssMetrics m = bss_eval(s1, {s1, s2}, 0, {64});
    CHECK(m.sdr >= 100.0);
    CHECK(m.sir >= 100.0);
    CHECK(m.sar >= 100.0);
    CHECK(m.sdr <= kMetricCapDb);
  }

  TEST_CASE("estimate equal to an orthogonal interferer") {
    // Target made orthogonal to an alternating interferer at lag 0.
    std::vector<double> a(32), b(32);
    for (std::size_t i = 0; i < 32; ++i) {
      a[i] = 1.0 + 0.1 * std::sin(0.7 * i);
      b[i] = (i % 2 == 0 ? 1.0 : -1.0);
    }
    const double k = dot(a, b) / dot(b, b);
    std::vector<double> t = a;
    for (std::size_t i = 0; i < 32; ++i) t[i] -= k * b[i];
    REQUIRE(std::abs(dot(t, b)) < 1e-12);
    const BssMetrics m = bss_eval(b, {t, b}, 0, {1});
    const BssMetrics o = dense_oracle(b, {t, b}, 0);
    CHECK(m.sir <= -40.0);
    CHECK(o.sir <= -40.0);
  }

  TEST_CASE("filter length one matches the dense least-squares oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s1 = randn(32, rng), s2 = randn(32, rng), noise = randn(32, rng);
      std::vector<double> est(32);
      for (std::size_t i = 0; i < 32; ++i) est[i] = 0.9 * s1[i] + 0.4 * s2[i] + 0.3 * noise[i];
      for (std::size_t target : {0u, 1u}) {
        const BssMetrics m = bss_eval(est, {s1, s2}, target, {1});
        const BssMetrics o = dense_oracle(est, {s1, s2}, target);
        CHECK(std::abs(m.sdr - o.sdr) < 1e-6);
        CHECK(std::abs(m.sir - o.sir) < 1e-6);
        CHECK(std::abs(m.sar - o.sar) < 1e-6);
      }
    }
  }

  TEST_CASE("decomposition is orthogonal") {
    Rng rng(3);
    const auto s1 = randn(3000, rng), s2 = randn(3000, rng), noise = randn(3000, rng);
    std::vector<double> est(3000);
    for (std::size_t i = 0; i < 3000; ++i) {
      est[i] = s1[i] + 0.5 * (i >= 3 ? s1[i - 3] : 0.0) + 0.3 * s2[i] + 0.2 * noise[i];
    }
    const BssDecomposition d = bss_decompose(est, {s1, s2}, 0, {32});
    const double ei = dot(d.interf, d.interf), ea = dot(d.artif, d.artif);
    std::vector<double> sum(d.interf.size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = d.interf[i] + d.artif[i];
    CHECK(std::abs(dot(sum, sum) - ei - ea) / (ei + ea) < 1e-6);
    CHECK(std::abs(dot(d.target, d.artif)) / std::sqrt(dot(d.target, d.target) * ea) < 1e-6);
    CHECK(d.metrics.sir >= d.metrics.sdr);
    CHECK(d.metrics.sar >= d.metrics.sdr);
    CHECK(d.metrics.sdr <= std::min(d.metrics.sir, d.metrics.sar) + 3.02);
  }

  TEST_CASE("si-sdr never exceeds the long-filter sdr") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 1500;
      auto s1 = randn(n, rng), s2 = randn(n, rng);
      std::vector<double> est(n);
      const double mix = rng.uniform(0.0, 1.0), noise = rng.uniform(0.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) est[i] = s1[i] + mix * s2[i] + noise * rng.normal();
      // Zero-mean signals so SI-SDR's mean removal has nothing to exploit.
      for (auto* v : {&s1, &s2, &est}) {
        double m = 0.0;
        for (const double x : *v) m += x / n;
        for (double& x : *v) x -= m;
      }
      const double si = train::si_sdr(est, s1);
      CHECK(si <= bss_eval(est, {s1, s2}, 0, {512}).sdr + 1e-6);
    }
  }

  TEST_CASE("bss input errors") {
    const std::vector<double> z(16, 0.0), x(16, 1.0), y(15, 1.0);
    CHECK_THROWS_WITH_AS(bss_eval(x, {z, x}, 0, {4}), doctest::Contains("all-zero reference"), Error);
    CHECK_THROWS_AS(bss_eval(x, {y}, 0, {4}), Error);
    CHECK_THROWS_AS(bss_eval(x, {x}, 0, {0}), Error);
    CHECK_THROWS_AS(bss_eval(x, {x}, 1, {4}), Error);
  }

  TEST_CASE("rank-deficient references are handled by the ridge") {
    Rng rng(4);
    const auto s = randn(400, rng);
    const BssMetrics m = bss_eval(s, {s, s}, 0, {16});
    CHECK(std::isfinite(m.sdr));
    CHECK(m.sdr > 100.0);
  }

  TEST_CASE("evaluate_pair permutation and single source of truth") {
    Rng rng(12);
    const auto s1 = randn(1200, rng), s2 = randn(1200, rng);
    std::vector<double> e1(1200), e2(1200);
    for (std::size_t i = 0; i < 1200; ++i) {
      e1[i] = s1[i] + 0.2 * s2[i] + 0.1 * rng.normal();
      e2[i] = s2[i] + 0.3 * s1[i] + 0.1 * rng.normal();
    }
    const Waveform refs = wave({s1, s2});
    const PairReport same = evaluate_pair(refs, refs, {}, "same", {32});
    CHECK(same.perm == std::vector<std::size_t>{0, 1});
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(same.si_sdr[c] >= 100.0);
      CHECK(same.sdr[c] >= 100.0);
    }
    const PairReport a = evaluate_pair(wave({e1, e2}), refs, {}, "a", {32});
    const PairReport b = evaluate_pair(wave({e2, e1}), refs, {}, "b", {32});
    CHECK(a.perm == std::vector<std::size_t>{0, 1});
    CHECK(b.perm == std::vector<std::size_t>{1, 0});
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(a.si_sdr[c] == b.si_sdr[c]);
      CHECK(a.sdr[c] == doctest::Approx(b.sdr[c]).epsilon(1e-12));
    }
    CHECK(a.si_sdr[0] == train::si_sdr(e1, s1));
    CHECK(a.si_sdr[1] == train::si_sdr(e2, s2));
    // Positive per-channel scaling leaves the assignment unchanged.
    std::vector<double> e1s = e1, e2s = e2;
    for (double& v : e1s) v *= 1e-3;
    for (double& v : e2s) v *= 40.0;
    CHECK(evaluate_pair(wave({e2s, e1s}), refs, {}, "c", {32}).perm == b.perm);
  }

  TEST_CASE("quantiles match a sorting oracle") {
    Rng rng(5);
    std::vector<PairReport> reports;
    std::vector<double> values;
    for (int i = 0; i < 101; ++i) {
      const double v = rng.uniform(-5.0, 20.0);
      values.push_back(v);
      reports.push_back(tagged(v, 0.2));
    }
    std::sort(values.begin(), values.end());
    const auto rows = conditional_report(reports, {{"rt60", {0.1, 0.3}}});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].count == 101);
    // n = 101: the quartiles fall exactly on order statistics 25, 50, 75.
    CHECK(rows[0].median == values[50]);
    CHECK(rows[0].q1 == values[25]);
    CHECK(rows[0].q3 == values[75]);
    CHECK(quantile_sorted({1.0, 2.0, 3.0, 4.0}, 0.25) == doctest::Approx(1.75));
  }

  TEST_CASE("conditional report bins") {
    SUBCASE("single report") {
      const auto rows = conditional_report({tagged(7.5, 0.2)}, paper_binning());
      REQUIRE(rows.size() == 15);
      CHECK(rows[0].count == 1);
      CHECK(rows[0].median == 7.5);
      CHECK(rows[0].q3 - rows[0].q1 == 0.0);
      CHECK(rows[1].empty());
      CHECK(std::isnan(rows[1].median));
    }
    SUBCASE("two reports in different bins, last bin closed") {
      const auto rows =
          conditional_report({tagged(1.0, 0.2), tagged(2.0, 0.7)}, {{"rt60", {0.1, 0.3, 0.5, 0.7}}});
      REQUIRE(rows.size() == 3);
      CHECK(rows[0].count == 1);
      CHECK(rows[1].count == 0);
      CHECK(rows[2].count == 1);
      CHECK(rows[2].median == 2.0);
      const std::string csv = summary_csv(rows);
      CHECK(csv.find("condition,lo,hi,count,median,q1,q3,iqr,empty") == 0);
      CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
      CHECK(summary_json(rows)["rt60"].size() == 3);
    }
    SUBCASE("bin spec parsing") {
      const Binning b = binning_from_json(nlohmann::json::parse(R"({"duration_s": [0, 4, "inf"]})"));
      CHECK(std::isinf(b[0].edges[2]));
      CHECK_THROWS_WITH_AS(binning_from_json(nlohmann::json::parse(R"({"loudness": [0, 1]})")),
                           doctest::Contains("unknown bin spec"), Error);
      CHECK_THROWS_AS(binning_from_json(nlohmann::json::parse(R"({"rt60": [0.5, 0.1]})")), Error);
      CHECK_THROWS_AS(conditional_report({tagged(1.0, 0.2)}, {{"rt60", {0.0, 1.0}}}, "pesq"), Error);
    }
    SUBCASE("missing condition tags") {
      PairReport r = tagged(1.0, 0.2);
      r.conditions.speed = NAN;
      CHECK_THROWS_AS(conditional_report({r}, paper_binning()), Error);
    }
  }

  TEST_CASE("scene conditions") {
    const room::SceneSpec s = room::sample_scene(3, room::ProtocolRanges{});
    const Conditions c = conditions_of(s);
    CHECK(c.rt60 == s.rt60);
    CHECK(c.snr_db == s.target_snr_db);
    CHECK(c.duration_s == doctest::Approx(s.mixture_length() / 16000.0));
    CHECK(c.angle_deg >= 0.0);
    CHECK(c.angle_deg <= 180.0);
    // Static sources: the angle is the t = 0 angle at mic 0.
    room::SceneSpec still = s;
    for (auto& t : still.trajectories) t.velocity = {0.0, 0.0, 0.0};
    const auto& o = still.mics[0];
    const auto& a = still.trajectories[0].start;
    const auto& b = still.trajectories[1].start;
    const std::vector<double> u{a[0] - o[0], a[1] - o[1], a[2] - o[2]};
    const std::vector<double> v{b[0] - o[0], b[1] - o[1], b[2] - o[2]};
    const double cosang = dot(u, v) / std::sqrt(dot(u, u) * dot(v, v));
    CHECK(conditions_of(still).angle_deg == doctest::Approx(std::acos(cosang) * 180.0 / M_PI));
    CHECK(c.angle_deg <= conditions_of(still).angle_deg + 1e-9);
  }

  TEST_CASE("report serialization") {
    PairReport r = tagged(3.0, 0.4);
    r.id = "mix0";
    const std::string csv = reports_csv({r});
    CHECK(csv.find("id,speaker,estimate,si_sdr,sdr,sir,sar,rt60") == 0);
    CHECK(csv.find("mix0,0,0,3,3,3,3,0.4,5,0.5,30,3") != std::string::npos);
    const auto j = reports_json({r});
    CHECK(j[0]["mean_si_sdr"] == 3.0);
    CHECK(j[0]["conditions"]["rt60"] == 0.4);
  }
}
