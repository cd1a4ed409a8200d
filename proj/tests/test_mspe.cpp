#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "logsae/mspe.hpp"
#include "oracles.hpp"

using namespace logsae;
using Catch::Approx;

namespace {

Area scalar_area(std::string id, double z, double w, double psi, double sigma = 0.0) {
  Area a;
  a.area_id = std::move(id);
  a.z = z;
  a.w = Eigen::VectorXd::Constant(1, w);
  a.psi = psi;
  a.sigma_me = Eigen::MatrixXd::Constant(1, 1, sigma);
  return a;
}

// Four areas by hand; the third carries measurement error.
Areas hand_dataset() {
  return {scalar_area("a", 6.1, 2.0, 1.0), scalar_area("b", 9.4, 3.1, 2.0), scalar_area("c", 14.0, 4.2, 1.5, 0.3),
          scalar_area("d", 3.2, 1.2, 0.8)};
}

oracle::Params to_oracle(const Params& p) {
  oracle::Params out;
  out.beta.assign(p.beta.data(), p.beta.data() + p.beta.size());
  out.sigma2 = p.sigma2_nu;
  return out;
}

}  // namespace

TEST_CASE("jackknife on identical areas has no variability", "[mspe]") {
  Areas areas;
  for (int i = 0; i < 6; ++i) areas.push_back(scalar_area(std::to_string(i), 4.0, 1.5, 1.0, 0.2));
  const auto full = fit(areas);
  const auto jack = jackknife_mspe(areas, full, Config{});
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const double m1 = m1_term(areas[i], full.params);
    CHECK(jack[i].m2_j == Approx(0.0).margin(1e-20 * (1.0 + m1)));
    CHECK(jack[i].m1_j == Approx(m1).epsilon(1e-12));
  }
}

TEST_CASE("jackknife matches the straight-line recomputation", "[mspe][oracle]") {
  const Areas areas = hand_dataset();
  const auto full = fit(areas);
  REQUIRE(full.converged);
  const auto jack = jackknife_mspe(areas, full, Config{});

  const auto rows = oracle::rows_from(areas);
  std::vector<oracle::Params> loo;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    std::vector<oracle::Row> rest;
    for (std::size_t l = 0; l < rows.size(); ++l) {
      if (l != j) rest.push_back(rows[l]);
    }
    loo.push_back(oracle::moment_fit(rest, to_oracle(full.params).beta));
  }
  const auto ref = oracle::jackknife(rows, oracle::moment_fit(rows), loo);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    CHECK(jack[i].m1_j == Approx(ref[i].m1_j).epsilon(1e-8));
    CHECK(jack[i].m2_j == Approx(ref[i].m2_j).epsilon(1e-8));
    CHECK(jack[i].total == jack[i].m1_j + jack[i].m2_j);
    CHECK(jack[i].m2_j >= 0.0);
  }
}

TEST_CASE("jackknife needs p + 2 areas", "[mspe]") {
  const Areas areas{scalar_area("a", 1.0, 1.0, 1.0), scalar_area("b", 2.5, 2.0, 1.0)};
  Fit dummy;
  dummy.params = {Eigen::VectorXd::Constant(1, 1.0), 0.0};
  CHECK_THROWS_AS(jackknife_mspe(areas, dummy, Config{}), InsufficientAreas);
}

TEST_CASE("a singular leave-one-out refit names the dropped area", "[mspe]") {
  const Areas areas{scalar_area("a", 0.5, 0.0, 1.0), scalar_area("b", -0.2, 0.0, 1.0), scalar_area("c", 0.1, 0.0, 1.0),
                    scalar_area("d", 3.0, 1.0, 1.0)};
  const auto full = fit(areas);
  try {
    jackknife_mspe(areas, full, Config{});
    FAIL("expected SingularMomentMatrix");
  } catch (const SingularMomentMatrix& e) {
    CHECK(e.left_out() == 3);
  }
}

TEST_CASE("jackknife for area i ignores the labelling of the other areas", "[mspe][property]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto areas = oracle::random_dataset(rng, 12, 1 + trial % 2);
    const auto full = fit(areas);
    const auto base = jackknife_mspe(areas, full, Config{});
    // Keep area 0 first, shuffle the rest.
    std::shuffle(areas.begin() + 1, areas.end(), rng);
    const auto shuffled = jackknife_mspe(areas, fit(areas), Config{});
    CHECK(shuffled[0].total == Approx(base[0].total).epsilon(1e-9));
    CHECK(shuffled[0].m2_j == Approx(base[0].m2_j).epsilon(1e-7).margin(1e-12));
  }
}

TEST_CASE("bootstrap with no replicate variation returns the plug-in M1", "[mspe]") {
  const Areas areas = hand_dataset();
  const auto full = fit(areas);
  const std::vector<std::optional<Params>> same(5, full.params);
  const auto boot = combine_bootstrap(areas, full.params, same);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const double m1 = m1_term(areas[i], full.params);
    CHECK(boot[i].m1_bias_corrected == Approx(m1).epsilon(1e-14));
    CHECK(boot[i].m2_star == 0.0);
    CHECK(boot[i].total == Approx(m1).epsilon(1e-14));
    CHECK(boot[i].b_replicates == 5);
    CHECK_FALSE(boot[i].negative);
  }
}

TEST_CASE("bootstrap keeps negative totals and counts failed replicates", "[mspe]") {
  const Areas areas = hand_dataset();
  const auto full = fit(areas);
  Params wild = full.params;
  wild.sigma2_nu += 50.0;  // inflates M1(phi*) well past 2 M1(phi_hat)
  const std::vector<std::optional<Params>> reps{wild, std::nullopt, wild};
  const auto boot = combine_bootstrap(areas, full.params, reps);
  for (const auto& r : boot) {
    CHECK(r.b_replicates == 2);
    CHECK(r.b_failed == 1);
    CHECK(r.total == r.m1_bias_corrected + r.m2_star);
    CHECK(r.negative == (r.total < 0.0));
  }
  CHECK(std::any_of(boot.begin(), boot.end(), [](const BootstrapMspe& r) { return r.negative; }));
  const std::vector<std::optional<Params>> none(3);
  CHECK_THROWS_AS(combine_bootstrap(areas, full.params, none), ResamplingFailed);
}

TEST_CASE("bootstrap matches the straight-line recomputation on shared draws", "[mspe][oracle]") {
  const Areas areas = hand_dataset();
  const auto full = fit(areas);
  const int b = 3;
  const std::uint64_t seed = 1234;
  const auto boot = bootstrap_mspe(areas, full, b, seed, Config{});

  const auto rows = oracle::rows_from(areas);
  std::vector<oracle::Params> reps;
  for (int r = 0; r < b; ++r) {
    const auto starred = oracle::rows_from(draw_bootstrap_sample(areas, full.params, seed, r));
    reps.push_back(oracle::moment_fit(starred, to_oracle(full.params).beta));
  }
  const auto ref = oracle::bootstrap(rows, oracle::moment_fit(rows), reps);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    CHECK(boot[i].total == Approx(ref[i]).epsilon(1e-8));
    CHECK(boot[i].m2_star >= 0.0);
    CHECK(boot[i].b_replicates + boot[i].b_failed == b);
  }
}

TEST_CASE("bootstrap draws follow the fitted model", "[mspe]") {
  Areas areas{scalar_area("a", 5.0, 2.0, 1.5, 0.5)};
  const Params fitted{Eigen::VectorXd::Constant(1, 2.0), 0.7};
  const int n = 40000;
  double sw = 0.0, sww = 0.0, sz = 0.0, szz = 0.0;
  for (int r = 0; r < n; ++r) {
    const auto s = draw_bootstrap_sample(areas, fitted, 77, r).front();
    sw += s.w[0];
    sww += s.w[0] * s.w[0];
    sz += s.z;
    szz += s.z * s.z;
  }
  const double mw = sw / n, vw = sww / n - mw * mw, mz = sz / n, vz = szz / n - mz * mz;
  // w* ~ N(2, 0.5); z* ~ N(4, 4 * 0.5 + 0.7 + 1.5)
  CHECK(mw == Approx(2.0).margin(3.0 * std::sqrt(0.5 / n)));
  CHECK(vw == Approx(0.5).margin(3.0 * 0.5 * std::sqrt(2.0 / n)));
  CHECK(mz == Approx(4.0).margin(3.0 * std::sqrt(4.2 / n)));
  CHECK(vz == Approx(4.2).margin(3.0 * 4.2 * std::sqrt(2.0 / n)));
}

TEST_CASE("bootstrap m2_star settles as B grows", "[mspe][property]") {
  std::mt19937_64 rng(9);
  const auto areas = oracle::random_dataset(rng, 15, 1);
  const auto full = fit(areas);
  const std::uint64_t seed = 4242;
  const int b = 400;
  const auto small = bootstrap_mspe(areas, full, b, seed, Config{});
  const auto large = bootstrap_mspe(areas, full, 2 * b, seed, Config{});

  // Spread of the per-replicate squared differences for area 0.
  Config warm;
  warm.beta_init = full.params.beta;
  const double pred = eb_predict(areas[0], full.params);
  std::vector<double> sq;
  for (int r = 0; r < 2 * b; ++r) {
    const auto p = fit(draw_bootstrap_sample(areas, full.params, seed, r), warm).params;
    sq.push_back(std::pow(eb_predict(areas[0], p) - pred, 2));
  }
  double mean = 0.0;
  for (const double v : sq) mean += v / sq.size();
  double var = 0.0;
  for (const double v : sq) var += (v - mean) * (v - mean) / (sq.size() - 1);
  CHECK(large[0].m2_star == Approx(mean).epsilon(1e-9));
  CHECK(std::abs(large[0].m2_star - small[0].m2_star) < 3.0 * std::sqrt(var / b));
}

TEST_CASE("resampling output does not depend on the worker count", "[mspe][determinism]") {
  std::mt19937_64 rng(15);
  const auto areas = oracle::random_dataset(rng, 25, 2);
  const auto full = fit(areas);
  const auto j1 = jackknife_mspe(areas, full, Config{}, 1);
  const auto b1 = bootstrap_mspe(areas, full, 64, 99, Config{}, 1);
  for (const int threads : {4, 16}) {
    const auto j = jackknife_mspe(areas, full, Config{}, threads);
    const auto b = bootstrap_mspe(areas, full, 64, 99, Config{}, threads);
    for (std::size_t i = 0; i < areas.size(); ++i) {
      CHECK(j[i].total == j1[i].total);
      CHECK(b[i].total == b1[i].total);
    }
  }
}
