#pragma once

// Jackknife and parametric-bootstrap estimators of the mean squared
// prediction error of the EB predictor.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "logsae/estimation.hpp"
#include "logsae/model.hpp"

namespace logsae {

struct JackknifeMspe {
  double m1_j = 0.0;  // bias-corrected plug-in posterior variance
  double m2_j = 0.0;  // leave-one-out variability of the predictor
  double total = 0.0;
  int loo_nonconverged = 0;
};

struct BootstrapMspe {
  double m1_bias_corrected = 0.0;  // 2 M1(phi_hat) - mean_b M1(phi*_b)
  double m2_star = 0.0;            // mean_b (Y*_EB - Y_EB)^2
  double total = 0.0;              // can be negative; never clipped
  int b_replicates = 0;            // replicates that entered the averages
  int b_failed = 0;                // replicates dropped because the refit failed
  bool negative = false;
};

/// Refits on all areas but one, for every area, warm-started at `full_fit`.
/// A singular refit is rethrown as SingularMomentMatrix carrying the index
/// of the dropped area.
std::vector<Fit> leave_one_out_fits(const Areas& areas, const Fit& full_fit, const Config& config,
                                    int threads = 0);

std::vector<JackknifeMspe> jackknife_mspe(const Areas& areas, const Fit& full_fit, const Config& config,
                                          int threads = 0);

/// One bootstrap data set drawn from the fitted model:
///   nu* ~ N(0, s2_hat),  w* ~ N_p(w_i, Sigma_i),  z* ~ N(w*' beta_hat + nu*, psi_i).
/// Area i of replicate b reads only the stream keyed by (seed, b, i).
Areas draw_bootstrap_sample(const Areas& areas, const Params& fitted, std::uint64_t seed, int replicate);

/// Combines per-replicate refits into the bootstrap estimator.  Entries left
/// empty count as failed replicates.  Starred predictors are evaluated at
/// each area's original (z_i, w_i).
std::vector<BootstrapMspe> combine_bootstrap(const Areas& areas, const Params& fitted,
                                             std::span<const std::optional<Params>> replicate_params);

std::vector<BootstrapMspe> bootstrap_mspe(const Areas& areas, const Fit& full_fit, int b, std::uint64_t seed,
                                          const Config& config, int threads = 0);

}  // namespace logsae
