#include "logsae/simulation.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <utility>

#include "logsae/mspe.hpp"
#include "logsae/parallel.hpp"
#include "logsae/rng.hpp"

namespace logsae {

namespace {

constexpr std::uint64_t key(Stream s) { return static_cast<std::uint64_t>(s); }

template <typename T>
using Slots = std::vector<std::optional<T>>;

// Runs `one(r)` for every replicate; numerical failures leave the slot empty.
template <typename T, typename Fn>
Slots<T> run_replicates(const SimulationConfig& config, Fn one) {
  Slots<T> slots(static_cast<std::size_t>(config.r_replications));
  parallel_for(slots.size(), config.threads, [&](std::size_t r) {
    try {
      slots[r] = one(static_cast<int>(r));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
      slots[r].reset();
    }
  });
  return slots;
}

template <typename T>
int count_used(const Slots<T>& slots) {
  int n = 0;
  for (const auto& s : slots) n += s ? 1 : 0;
  return n;
}

}  // namespace

void validate(const SimulationConfig& c) {
  if (c.m < 1) throw InvalidArgument("m must be >= 1");
  if (c.k_percent < 0 || c.k_percent > 100) throw InvalidArgument("k must lie in [0, 100]");
  if (!(c.d >= 0.0)) throw InvalidArgument("d must be >= 0");
  if (c.beta_true.size() < 1) throw InvalidArgument("beta_true must have at least one coefficient");
  if (c.m <= c.beta_true.size()) throw InvalidArgument("m must exceed the number of covariates");
  if (!(c.sigma2_nu_true >= 0.0)) throw InvalidArgument("sigma2_nu_true must be >= 0");
  if (c.r_replications < 1) throw InvalidArgument("r must be >= 1");
  if (!(c.covariate_var >= 0.0)) throw InvalidArgument("covariate variance must be >= 0");
  if (!(c.psi_shape > 0.0) || !(c.psi_scale > 0.0)) throw InvalidArgument("psi gamma parameters must be > 0");
}

int measurement_error_count(const SimulationConfig& config) {
  return static_cast<int>(std::lround(config.k_percent * config.m / 100.0));
}

std::vector<SyntheticArea> generate_population(const SimulationConfig& config, int replicate) {
  validate(config);
  const auto m = static_cast<std::size_t>(config.m);
  const Eigen::Index p = config.beta_true.size();
  const auto rep = static_cast<std::uint64_t>(replicate);

  // Partial Fisher-Yates: the first n slots of `order` are the chosen areas.
  std::vector<bool> chosen(m, false);
  {
    KeyedRng rng(config.seed, {key(Stream::Assignment), rep});
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    const auto n = static_cast<std::size_t>(measurement_error_count(config));
    for (std::size_t t = 0; t < n; ++t) {
      std::uniform_int_distribution<std::size_t> pick(t, m - 1);
      std::swap(order[t], order[pick(rng)]);
      chosen[order[t]] = true;
    }
  }

  const double w_sd = std::sqrt(config.covariate_var);
  const double nu_sd = std::sqrt(config.sigma2_nu_true);
  const double eta_sd = std::sqrt(config.d);
  std::vector<SyntheticArea> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    KeyedRng rng(config.seed, {key(Stream::Population), rep, static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::gamma_distribution<double> gamma(config.psi_shape, config.psi_scale);

    auto& a = out[i];
    a.W = Eigen::VectorXd::Constant(p, config.covariate_mean) + w_sd * standard_normal(rng, p);
    const double psi = gamma(rng);
    const double nu = nu_sd * normal(rng);
    const double e = std::sqrt(psi) * normal(rng);
    const Eigen::VectorXd eta = standard_normal(rng, p);

    a.has_error = chosen[i];
    a.theta = a.W.dot(config.beta_true) + nu;
    a.Y = std::exp(a.theta);
    a.obs.area_id = std::to_string(i + 1);
    a.obs.z = a.theta + e;
    a.obs.psi = psi;
    if (a.has_error) {
      a.obs.w = a.W + eta_sd * eta;
      a.obs.sigma_me = config.d * Eigen::MatrixXd::Identity(p, p);
    } else {
      a.obs.w = a.W;
      a.obs.sigma_me = Eigen::MatrixXd::Zero(p, p);
    }
  }
  return out;
}

const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Direct: return "direct";
    case Estimator::TrueCovariate: return "true_covariate";
    case Estimator::IgnoringError: return "ignoring_error";
    case Estimator::MeasurementError: return "measurement_error";
  }
  return "unknown";
}

Areas true_covariate_areas(const std::vector<SyntheticArea>& population) {
  Areas out;
  out.reserve(population.size());
  for (const auto& a : population) {
    Area t = a.obs;
    t.w = a.W;
    t.sigma_me.setZero();
    out.push_back(std::move(t));
  }
  return out;
}

Areas ignoring_error_areas(const std::vector<SyntheticArea>& population) {
  Areas out;
  out.reserve(population.size());
  for (const auto& a : population) {
    Area t = a.obs;
    t.sigma_me.setZero();
    out.push_back(std::move(t));
  }
  return out;
}

Areas observed_areas(const std::vector<SyntheticArea>& population) {
  Areas out;
  out.reserve(population.size());
  for (const auto& a : population) out.push_back(a.obs);
  return out;
}

ReplicateFits fit_replicate(const std::vector<SyntheticArea>& population, const Config& config) {
  return {fit(true_covariate_areas(population), config), fit(ignoring_error_areas(population), config),
          fit(observed_areas(population), config)};
}

std::array<Eigen::VectorXd, kEstimatorCount> predict_replicate(const std::vector<SyntheticArea>& population,
                                                               const ReplicateFits& fits) {
  const auto m = static_cast<Eigen::Index>(population.size());
  std::array<Eigen::VectorXd, kEstimatorCount> out;
  for (auto& v : out) v.resize(m);
  const auto truth = true_covariate_areas(population);
  const auto ignoring = ignoring_error_areas(population);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& a = population[static_cast<std::size_t>(i)];
    out[0][i] = detail::checked_exp(a.obs.z, "direct estimate");
    out[1][i] = eb_predict(truth[static_cast<std::size_t>(i)], fits.true_covariate.params);
    out[2][i] = eb_predict(ignoring[static_cast<std::size_t>(i)], fits.ignoring_error.params);
    out[3][i] = eb_predict(a.obs, fits.measurement_error.params);
  }
  return out;
}

SignedLog signed_log(double x) { return {std::log(std::abs(x)), x < 0.0}; }

double relative_bias(double mean_mspe, double emse) {
  if (!(emse > 0.0)) throw DegenerateVariance("relative bias needs a positive EMSE");
  return (mean_mspe - emse) / emse;
}

EmseReport run_emse_study(const SimulationConfig& config) {
  validate(config);
  struct Replicate {
    std::array<Eigen::VectorXd, kEstimatorCount> prediction;
    std::array<Eigen::VectorXd, kEstimatorCount> squared_error;
    std::array<bool, 3> truncated{};
    int mismatches = 0;
  };

  const auto slots = run_replicates<Replicate>(config, [&](int r) {
    const auto population = generate_population(config, r);
    const auto fits = fit_replicate(population, config.fit);
    Replicate out;
    out.prediction = predict_replicate(population, fits);
    Eigen::VectorXd truth(config.m);
    for (int i = 0; i < config.m; ++i) truth[i] = population[static_cast<std::size_t>(i)].Y;
    for (int e = 0; e < kEstimatorCount; ++e) out.squared_error[e] = (out.prediction[e] - truth).array().square();
    out.truncated = {fits.true_covariate.sigma2_truncated, fits.ignoring_error.sigma2_truncated,
                     fits.measurement_error.sigma2_truncated};
    if (config.k_percent == 0) {
      for (int i = 0; i < config.m; ++i) {
        const double a = out.prediction[1][i];
        if (a != out.prediction[2][i] || a != out.prediction[3][i]) ++out.mismatches;
      }
    }
    return out;
  });

  EmseReport report;
  report.config = config;
  report.replicates_used = count_used(slots);
  report.replicates_failed = config.r_replications - report.replicates_used;
  for (int e = 0; e < kEstimatorCount; ++e) {
    report.emse[e] = Eigen::VectorXd::Zero(config.m);
    report.mean_prediction[e] = Eigen::VectorXd::Zero(config.m);
  }
  if (report.replicates_used == 0) throw ResamplingFailed("every simulation replicate failed");

  std::array<int, 3> zeros{};
  for (const auto& s : slots) {
    if (!s) continue;
    for (int e = 0; e < kEstimatorCount; ++e) {
      report.emse[e] += s->squared_error[e];
      report.mean_prediction[e] += s->prediction[e];
    }
    for (int f = 0; f < 3; ++f) zeros[f] += s->truncated[f] ? 1 : 0;
    report.k0_prediction_mismatches += s->mismatches;
  }
  const double used = report.replicates_used;
  for (int e = 0; e < kEstimatorCount; ++e) {
    report.emse[e] /= used;
    report.mean_prediction[e] /= used;
    report.avg_emse[e] = report.emse[e].mean();
    report.avg_prediction[e] = report.mean_prediction[e].mean();
    report.log_avg_emse[e] = std::log(report.avg_emse[e]);
    report.log_avg_prediction[e] = std::log(report.avg_prediction[e]);
  }
  for (int f = 0; f < 3; ++f) report.zero_proportion[f] = zeros[f] / used;
  return report;
}

MspeReport run_mspe_study(const SimulationConfig& config) {
  validate(config);
  if (config.b_bootstrap < 2) throw InvalidArgument("b must be >= 2");
  if (config.m < config.beta_true.size() + 2) throw InvalidArgument("the jackknife needs m >= p + 2");
  struct Replicate {
    Eigen::VectorXd squared_error, mspe_j, mspe_b;
    int loo_nonconverged = 0;
    int bootstrap_failed = 0;
  };

  const auto slots = run_replicates<Replicate>(config, [&](int r) {
    const auto population = generate_population(config, r);
    const auto areas = observed_areas(population);
    const auto full = fit(areas, config.fit);
    const auto jack = jackknife_mspe(areas, full, config.fit, 1);
    const auto boot_seed = derive_key(config.seed, {key(Stream::BootstrapSeed), static_cast<std::uint64_t>(r)});
    const auto boot = bootstrap_mspe(areas, full, config.b_bootstrap, boot_seed, config.fit, 1);
    Replicate out;
    out.squared_error.resize(config.m);
    out.mspe_j.resize(config.m);
    out.mspe_b.resize(config.m);
    for (int i = 0; i < config.m; ++i) {
      const auto& a = population[static_cast<std::size_t>(i)];
      const double err = eb_predict(a.obs, full.params) - a.Y;
      out.squared_error[i] = err * err;
      out.mspe_j[i] = jack[static_cast<std::size_t>(i)].total;
      out.mspe_b[i] = boot[static_cast<std::size_t>(i)].total;
    }
    out.loo_nonconverged = jack.front().loo_nonconverged;
    out.bootstrap_failed = boot.front().b_failed;
    return out;
  });

  MspeReport report;
  report.config = config;
  report.replicates_used = count_used(slots);
  report.replicates_failed = config.r_replications - report.replicates_used;
  if (report.replicates_used == 0) throw ResamplingFailed("every simulation replicate failed");

  Eigen::VectorXd emse = Eigen::VectorXd::Zero(config.m);
  Eigen::VectorXd sum_j = Eigen::VectorXd::Zero(config.m);
  Eigen::VectorXd sum_b = Eigen::VectorXd::Zero(config.m);
  std::vector<int> negatives(static_cast<std::size_t>(config.m), 0);
  report.draws.reserve(static_cast<std::size_t>(report.replicates_used) * static_cast<std::size_t>(config.m));
  for (std::size_t r = 0; r < slots.size(); ++r) {
    const auto& s = slots[r];
    if (!s) continue;
    emse += s->squared_error;
    sum_j += s->mspe_j;
    sum_b += s->mspe_b;
    report.loo_nonconverged += s->loo_nonconverged;
    report.bootstrap_failed += s->bootstrap_failed;
    for (int i = 0; i < config.m; ++i) {
      if (s->mspe_b[i] < 0.0) ++negatives[static_cast<std::size_t>(i)];
      report.draws.push_back({static_cast<int>(r), i, s->squared_error[i], s->mspe_j[i], s->mspe_b[i]});
    }
  }
  const double used = report.replicates_used;
  emse /= used;
  sum_j /= used;
  sum_b /= used;

  report.areas.resize(static_cast<std::size_t>(config.m));
  for (int i = 0; i < config.m; ++i) {
    auto& a = report.areas[static_cast<std::size_t>(i)];
    a.emse = emse[i];
    a.mean_mspe_j = sum_j[i];
    a.mean_mspe_b = sum_b[i];
    a.rb_j = relative_bias(a.mean_mspe_j, a.emse);
    a.rb_b = relative_bias(a.mean_mspe_b, a.emse);
    a.bootstrap_negative = negatives[static_cast<std::size_t>(i)];
    report.avg_rb_j += a.rb_j / config.m;
    report.avg_rb_b += a.rb_b / config.m;
  }
  report.avg_emse = emse.mean();
  report.avg_mspe_j = sum_j.mean();
  report.avg_mspe_b = sum_b.mean();
  report.log_emse = signed_log(report.avg_emse);
  report.log_mspe_j = signed_log(report.avg_mspe_j);
  report.log_mspe_b = signed_log(report.avg_mspe_b);
  report.log_gap_j = report.log_mspe_j.log_abs - report.log_emse.log_abs;
  report.log_gap_b = report.log_mspe_b.log_abs - report.log_emse.log_abs;
  return report;
}

std::vector<ZeroProportionRow> zero_proportion_study(const SimulationConfig& base, const std::vector<int>& ms,
                                                     const std::vector<int>& ks) {
  std::vector<ZeroProportionRow> rows;
  for (const int m : ms) {
    for (const int k : ks) {
      SimulationConfig c = base;
      c.m = m;
      c.k_percent = k;
      const auto report = run_emse_study(c);
      rows.push_back({m, k, report.replicates_used, report.replicates_failed, report.zero_proportion[0],
                      report.zero_proportion[1], report.zero_proportion[2]});
    }
  }
  return rows;
}

MisspecificationRow misspecification_study(const SimulationConfig& config, double d_true, double d_mis) {
  if (!(d_true >= 0.0) || !(d_mis >= 0.0)) throw InvalidArgument("d values must be >= 0");
  SimulationConfig c = config;
  c.d = d_true;
  validate(c);
  const Eigen::Index p = c.beta_true.size();

  const auto slots = run_replicates<std::pair<double, double>>(c, [&](int r) {
    const auto population = generate_population(c, r);
    const Areas areas = observed_areas(population);
    Areas mis = areas;
    for (std::size_t i = 0; i < mis.size(); ++i) {
      if (population[i].has_error) mis[i].sigma_me = d_mis * Eigen::MatrixXd::Identity(p, p);
    }
    return std::pair{fit(areas, c.fit).params.beta[0], fit(mis, c.fit).params.beta[0]};
  });

  MisspecificationRow row;
  row.m = c.m;
  row.k_percent = c.k_percent;
  row.d_true = d_true;
  row.d_mis = d_mis;
  row.replicates_used = count_used(slots);
  row.replicates_failed = c.r_replications - row.replicates_used;
  if (row.replicates_used == 0) throw ResamplingFailed("every simulation replicate failed");
  const double target = c.beta_true[0];
  for (const auto& s : slots) {
    if (!s) continue;
    row.mean_abs_diff_x100 += std::abs(s->first - s->second);
    row.bias_x100 += s->first - target;
    row.bias_mis_x100 += s->second - target;
  }
  const double scale = 100.0 / row.replicates_used;
  row.mean_abs_diff_x100 *= scale;
  row.bias_x100 *= scale;
  row.bias_mis_x100 *= scale;
  return row;
}

}  // namespace logsae
