#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "logsae/simulation.hpp"

using namespace logsae;
using Catch::Approx;

namespace {

SimulationConfig small_config(int m, int k, int r) {
  SimulationConfig c;
  c.m = m;
  c.k_percent = k;
  c.r_replications = r;
  c.b_bootstrap = 20;
  c.seed = 2024;
  c.threads = 1;
  return c;
}

}  // namespace

TEST_CASE("k = 0 populations carry no measurement error", "[simulation]") {
  const auto pop = generate_population(small_config(30, 0, 1), 3);
  for (const auto& a : pop) {
    CHECK(a.obs.sigma_me.isZero(0.0));
    CHECK(a.obs.w == a.W);
    CHECK_FALSE(a.has_error);
  }
}

TEST_CASE("k = 100 assigns d to every area", "[simulation]") {
  auto c = small_config(30, 100, 1);
  c.d = 2.0;
  for (const auto& a : generate_population(c, 0)) {
    CHECK(a.obs.sigma_me(0, 0) == 2.0);
    CHECK(a.has_error);
  }
}

TEST_CASE("round(k% m) areas receive measurement error", "[simulation]") {
  for (const int m : {20, 50, 33}) {
    for (const int k : {0, 20, 50, 80, 100}) {
      auto c = small_config(m, k, 1);
      const int expected = static_cast<int>(std::lround(k * m / 100.0));
      CHECK(measurement_error_count(c) == expected);
      for (int r = 0; r < 5; ++r) {
        int n = 0;
        for (const auto& a : generate_population(c, r)) n += a.has_error ? 1 : 0;
        CHECK(n == expected);
      }
    }
  }
}

TEST_CASE("generated areas satisfy the model identities", "[simulation]") {
  auto c = small_config(40, 50, 1);
  for (const auto& a : generate_population(c, 7)) {
    CHECK(a.Y == std::exp(a.theta));
    CHECK(a.obs.psi > 0.0);
    if (!a.has_error) CHECK(a.obs.w == a.W);
  }
}

TEST_CASE("generate_population is a pure function of (seed, replicate)", "[simulation][determinism]") {
  const auto c = small_config(25, 50, 1);
  const auto a = generate_population(c, 4);
  const auto b = generate_population(c, 4);
  const auto other = generate_population(c, 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].obs.z == b[i].obs.z);
    CHECK(a[i].obs.w == b[i].obs.w);
  }
  CHECK(a[0].obs.z != other[0].obs.z);
}

TEST_CASE("psi draws have Gamma(4.5, scale 2) moments", "[simulation][oracle]") {
  // Mean k s = 9, variance k s^2 = 18, fourth central moment (3 + 6/k) var^2.
  auto c = small_config(1000, 0, 1);
  std::vector<double> psi;
  for (int r = 0; r < 100; ++r) {
    for (const auto& a : generate_population(c, r)) psi.push_back(a.obs.psi);
  }
  const double n = static_cast<double>(psi.size());
  double mean = 0.0;
  for (const double v : psi) mean += v / n;
  double var = 0.0;
  for (const double v : psi) var += (v - mean) * (v - mean) / (n - 1);
  const double mu4 = (3.0 + 6.0 / 4.5) * 18.0 * 18.0;
  CHECK(std::abs(mean - 9.0) < 3.0 * std::sqrt(18.0 / n));
  CHECK(std::abs(var - 18.0) < 3.0 * std::sqrt((mu4 - 18.0 * 18.0) / n));
}

TEST_CASE("latent covariates are N(5, variance 9)", "[simulation][oracle]") {
  auto c = small_config(1000, 0, 1);
  double sum = 0.0, sq = 0.0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    for (const auto& a : generate_population(c, r)) {
      sum += a.W[0];
      sq += a.W[0] * a.W[0];
    }
  }
  const double n = 1000.0 * reps;
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean - 5.0) < 3.0 * std::sqrt(9.0 / n));
  CHECK(std::abs(var - 9.0) < 3.0 * 9.0 * std::sqrt(2.0 / n));
}

TEST_CASE("with one replicate the EMSE is the single squared error", "[simulation]") {
  const auto c = small_config(6, 50, 1);
  const auto report = run_emse_study(c);
  const auto pop = generate_population(c, 0);
  const auto preds = predict_replicate(pop, fit_replicate(pop, c.fit));
  for (int e = 0; e < kEstimatorCount; ++e) {
    for (int i = 0; i < c.m; ++i) {
      const double err = preds[e][i] - pop[static_cast<std::size_t>(i)].Y;
      CHECK(report.emse[e][i] == err * err);
    }
  }
}

TEST_CASE("k = 0 EB estimators coincide replicate by replicate", "[simulation]") {
  const auto report = run_emse_study(small_config(20, 0, 100));
  CHECK(report.k0_prediction_mismatches == 0);
  CHECK(report.avg_emse[1] == report.avg_emse[2]);
  CHECK(report.avg_emse[2] == report.avg_emse[3]);
  CHECK(report.zero_proportion[0] == report.zero_proportion[2]);
}

TEST_CASE("direct EMSE does not depend on the fitter", "[simulation][property]") {
  auto c = small_config(20, 50, 50);
  const auto base = run_emse_study(c);
  c.fit.max_iterations = 1;
  c.fit.rel_tolerance = 1e-2;
  const auto perturbed = run_emse_study(c);
  CHECK(base.emse[0] == perturbed.emse[0]);
  CHECK(base.avg_emse[3] != perturbed.avg_emse[3]);
}

TEST_CASE("relative bias of an exact MSPE estimate is zero", "[simulation]") {
  CHECK(relative_bias(12.5, 12.5) == 0.0);
  CHECK(relative_bias(15.0, 10.0) == Approx(0.5));
  CHECK_THROWS_AS(relative_bias(1.0, 0.0), DegenerateVariance);
}

TEST_CASE("signed log keeps the sign", "[simulation]") {
  const auto s = signed_log(-std::exp(3.0));
  CHECK(s.negative);
  CHECK(s.log_abs == Approx(3.0));
}

TEST_CASE("a dominant random effect never truncates", "[simulation]") {
  auto c = small_config(20, 50, 100);
  c.sigma2_nu_true = 1e6;
  const auto rows = zero_proportion_study(c, {20}, {0, 50});
  for (const auto& row : rows) {
    CHECK(row.true_covariate == 0.0);
    CHECK(row.ignoring_error == 0.0);
    CHECK(row.measurement_error == 0.0);
  }
}

TEST_CASE("misspecification vanishes without measurement error or misspecification", "[simulation]") {
  const auto c = small_config(20, 0, 100);
  const auto k0 = misspecification_study(c, 2.0, 4.0);
  CHECK(k0.mean_abs_diff_x100 == 0.0);
  CHECK(k0.bias_x100 == k0.bias_mis_x100);

  auto c100 = small_config(20, 100, 100);
  const auto same = misspecification_study(c100, 2.0, 2.0);
  CHECK(same.mean_abs_diff_x100 == 0.0);
  CHECK(same.bias_x100 == same.bias_mis_x100);

  const auto diff = misspecification_study(c100, 2.0, 4.0);
  CHECK(diff.mean_abs_diff_x100 > 0.0);
}

TEST_CASE("mspe study fills every report field", "[simulation]") {
  auto c = small_config(8, 50, 10);
  const auto report = run_mspe_study(c);
  CHECK(report.replicates_used + report.replicates_failed == 10);
  CHECK(report.areas.size() == 8u);
  CHECK(report.draws.size() == static_cast<std::size_t>(report.replicates_used) * 8u);
  double avg = 0.0;
  for (const auto& a : report.areas) {
    CHECK(a.rb_j == Approx((a.mean_mspe_j - a.emse) / a.emse));
    avg += a.emse / 8.0;
  }
  CHECK(report.avg_emse == Approx(avg));
  CHECK(report.log_gap_j == Approx(report.log_mspe_j.log_abs - report.log_emse.log_abs));
}

TEST_CASE("studies are identical at any thread count", "[simulation][determinism]") {
  auto c = small_config(12, 50, 16);
  const auto emse1 = run_emse_study(c);
  const auto mspe1 = run_mspe_study(c);
  for (const int threads : {4, 16}) {
    c.threads = threads;
    const auto emse = run_emse_study(c);
    const auto mspe = run_mspe_study(c);
    for (int e = 0; e < kEstimatorCount; ++e) CHECK(emse.emse[e] == emse1.emse[e]);
    CHECK(mspe.avg_mspe_b == mspe1.avg_mspe_b);
    CHECK(mspe.avg_mspe_j == mspe1.avg_mspe_j);
  }
}

TEST_CASE("invalid configurations are rejected", "[simulation]") {
  auto c = small_config(20, 120, 1);
  CHECK_THROWS_AS(run_emse_study(c), InvalidArgument);
  c = small_config(1, 0, 1);
  CHECK_THROWS_AS(generate_population(c, 0), InvalidArgument);
  c = small_config(20, 0, 1);
  c.b_bootstrap = 1;
  CHECK_THROWS_AS(run_mspe_study(c), InvalidArgument);
}
