#pragma once

// Model-based Monte-Carlo studies.  Each replicate draws a fresh population
//
//   W_ik ~ N(mean, var),  psi_i ~ Gamma(shape, scale),
//   theta_i = W_i' beta + nu_i,  z_i = theta_i + e_i,  w_i = W_i + eta_i,
//
// where round(k% * m) randomly chosen areas get Sigma_i = d I and the rest 0.
// A replicate is a pure function of (config, replicate index); studies reduce
// over replicates in index order, so output does not depend on thread count.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "logsae/estimation.hpp"
#include "logsae/model.hpp"

namespace logsae {

struct SyntheticArea {
  Eigen::VectorXd W;  // latent log covariates
  double theta = 0.0;
  double Y = 0.0;     // exp(theta), the estimand
  bool has_error = false;  // drawn into the k% that receive Sigma_i = d I
  Area obs;
};

struct SimulationConfig {
  int m = 20;
  int k_percent = 0;
  double d = 2.0;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Constant(1, 3.0);
  double sigma2_nu_true = 2.0;
  int r_replications = 1000;
  int b_bootstrap = 1000;
  std::uint64_t seed = 1;
  double covariate_mean = 5.0;
  double covariate_var = 9.0;
  double psi_shape = 4.5;
  double psi_scale = 2.0;
  Config fit;
  int threads = 0;  // 0 = default_thread_count()
};

void validate(const SimulationConfig& config);

/// Number of areas that receive measurement error: round(k% * m).
int measurement_error_count(const SimulationConfig& config);

std::vector<SyntheticArea> generate_population(const SimulationConfig& config, int replicate);

/// The four competitors, in report order.
enum class Estimator : int {
  Direct = 0,          // y_i = exp(z_i)
  TrueCovariate = 1,   // EB with the latent W_i and Sigma_i = 0
  IgnoringError = 2,   // EB with w_i, Sigma_i forced to 0
  MeasurementError = 3,  // EB with w_i and Sigma_i
};
inline constexpr int kEstimatorCount = 4;
const char* estimator_name(Estimator e);

/// The three model-based fits of one replicate on the same generated data.
struct ReplicateFits {
  Fit true_covariate;
  Fit ignoring_error;
  Fit measurement_error;
};

Areas true_covariate_areas(const std::vector<SyntheticArea>& population);
Areas ignoring_error_areas(const std::vector<SyntheticArea>& population);
Areas observed_areas(const std::vector<SyntheticArea>& population);

ReplicateFits fit_replicate(const std::vector<SyntheticArea>& population, const Config& config);

/// Predictions of every estimator for every area: predictions[e][i].
std::array<Eigen::VectorXd, kEstimatorCount> predict_replicate(const std::vector<SyntheticArea>& population,
                                                               const ReplicateFits& fits);

/// Natural log with the sign kept separately, for the log|x| rescaling.
struct SignedLog {
  double log_abs = 0.0;
  bool negative = false;
};
SignedLog signed_log(double x);

/// (mean estimated MSPE - EMSE) / EMSE.
double relative_bias(double mean_mspe, double emse);

struct EmseReport {
  SimulationConfig config;
  int replicates_used = 0;
  int replicates_failed = 0;
  // Per area, indexed [estimator](area).
  std::array<Eigen::VectorXd, kEstimatorCount> emse;
  std::array<Eigen::VectorXd, kEstimatorCount> mean_prediction;
  // Area averages and their natural logs.
  std::array<double, kEstimatorCount> avg_emse{};
  std::array<double, kEstimatorCount> log_avg_emse{};
  std::array<double, kEstimatorCount> avg_prediction{};
  std::array<double, kEstimatorCount> log_avg_prediction{};
  // Share of replicates whose sigma2_nu estimate was truncated to zero, for
  // the three model-based fits (TrueCovariate, IgnoringError, MeasurementError).
  std::array<double, 3> zero_proportion{};
  int k0_prediction_mismatches = 0;  // replicate/area pairs where k = 0 EB columns differ
};

EmseReport run_emse_study(const SimulationConfig& config);

struct MspeArea {
  double emse = 0.0;
  double mean_mspe_j = 0.0;
  double mean_mspe_b = 0.0;
  double rb_j = 0.0;
  double rb_b = 0.0;
  int bootstrap_negative = 0;  // replicates with a negative bootstrap total
};

/// One entry of the per-replicate distributions.
struct MspeDraw {
  int replicate = 0;
  int area = 0;
  double squared_error = 0.0;
  double mspe_j = 0.0;
  double mspe_b = 0.0;
};

struct MspeReport {
  SimulationConfig config;
  int replicates_used = 0;
  int replicates_failed = 0;
  int loo_nonconverged = 0;
  int bootstrap_failed = 0;
  std::vector<MspeArea> areas;
  double avg_emse = 0.0;
  double avg_mspe_j = 0.0;
  double avg_mspe_b = 0.0;
  double avg_rb_j = 0.0;  // area average of the per-area relative biases
  double avg_rb_b = 0.0;
  SignedLog log_emse, log_mspe_j, log_mspe_b;
  // log|avg mspe| - log|avg EMSE|, the log-scale gap.
  double log_gap_j = 0.0;
  double log_gap_b = 0.0;
  std::vector<MspeDraw> draws;
};

MspeReport run_mspe_study(const SimulationConfig& config);

struct ZeroProportionRow {
  int m = 0;
  int k_percent = 0;
  int replicates_used = 0;
  int replicates_failed = 0;
  double true_covariate = 0.0;
  double ignoring_error = 0.0;
  double measurement_error = 0.0;
};

/// Sweeps every (m, k) pair; other settings come from `base`.
std::vector<ZeroProportionRow> zero_proportion_study(const SimulationConfig& base, const std::vector<int>& ms,
                                                     const std::vector<int>& ks);

struct MisspecificationRow {
  int m = 0;
  int k_percent = 0;
  double d_true = 0.0;
  double d_mis = 0.0;
  int replicates_used = 0;
  int replicates_failed = 0;
  double mean_abs_diff_x100 = 0.0;  // 100 mean |b - b_mis|
  double bias_x100 = 0.0;           // 100 mean (b - beta_true)
  double bias_mis_x100 = 0.0;       // 100 mean (b_mis - beta_true)
};

/// Data are generated with Sigma_i = d_true; beta is fitted once with the
/// true d and once with d_mis on the same areas.  Statistics use the first
/// regression coefficient.
MisspecificationRow misspecification_study(const SimulationConfig& config, double d_true, double d_mis);

}  // namespace logsae
