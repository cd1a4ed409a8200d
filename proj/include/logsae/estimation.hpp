#pragma once

// Moment estimation of (beta, sigma2_nu).  beta solves the measurement-error
// corrected weighted normal equations
//
//   sum_i D_i (w_i w_i' - Sigma_i) beta = sum_i D_i w_i z_i,
//   D_i^{-1} = beta' Sigma_i beta + sigma2_nu + psi_i,
//
// and sigma2_nu = max(0, mean (z_i - w_i' beta)^2 - mean psi_i).  The two are
// alternated until the parameters stop moving.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logsae/error.hpp"
#include "logsae/model.hpp"

namespace logsae {

template <typename Scalar>
struct FitConfig {
  int max_iterations = 200;
  Scalar rel_tolerance = Scalar(1e-10);
  std::optional<Vector<Scalar>> beta_init;
};

template <typename Scalar>
struct ModelFit {
  ModelParams<Scalar> params;
  Vector<Scalar> gammas;
  int iterations_used = 0;
  bool converged = false;
  bool sigma2_truncated = false;
};

template <typename Scalar>
struct Sigma2Estimate {
  Scalar value{0};
  bool truncated = false;
};

using Config = FitConfig<double>;
using Fit = ModelFit<double>;

namespace detail {

template <typename Scalar>
void validate_areas(std::span<const AreaObservation<Scalar>> areas) {
  if (areas.empty()) throw InsufficientAreas("no areas supplied");
  const Eigen::Index p = areas.front().dim();
  if (p == 0) throw InvalidArgument("areas carry no covariates");
  for (const auto& a : areas) {
    if (a.dim() != p) {
      throw InvalidArgument("area '" + a.area_id + "' has " + std::to_string(a.dim()) + " covariates, expected " +
                            std::to_string(p));
    }
    if (a.sigma_me.rows() != p || a.sigma_me.cols() != p) {
      throw InvalidArgument("area '" + a.area_id + "' has a measurement-error matrix of the wrong shape");
    }
    if (!(a.psi >= Scalar(0))) throw InvalidArgument("area '" + a.area_id + "' has negative psi");
  }
}

/// Solves sum_i d_i (w_i w_i' - Sigma_i) beta = sum_i d_i w_i z_i for given weights.
/// The correction can make the left side indefinite, so it is solved with LU.
template <typename Scalar>
Vector<Scalar> solve_moment_equation(std::span<const AreaObservation<Scalar>> areas,
                                     std::span<const Scalar> weights) {
  const Eigen::Index p = areas.front().dim();
  Matrix<Scalar> lhs = Matrix<Scalar>::Zero(p, p);
  Vector<Scalar> rhs = Vector<Scalar>::Zero(p);
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const auto& a = areas[i];
    lhs.noalias() += weights[i] * (a.w * a.w.transpose() - a.sigma_me);
    rhs.noalias() += (weights[i] * a.z) * a.w;
  }
  if (!lhs.allFinite() || !rhs.allFinite()) {
    throw SingularMomentMatrix("moment equation has non-finite entries");
  }
  const Eigen::PartialPivLU<Matrix<Scalar>> lu(lhs);
  const Scalar rcond = lu.rcond();
  if (!(rcond > std::numeric_limits<Scalar>::epsilon())) {
    throw SingularMomentMatrix("moment matrix is numerically singular (rcond = " +
                               std::to_string(static_cast<double>(rcond)) + ")");
  }
  return lu.solve(rhs);
}

template <typename Scalar>
Scalar relative_step(const ModelParams<Scalar>& prev, const ModelParams<Scalar>& next) {
  using std::abs;
  Scalar step = abs(next.sigma2_nu - prev.sigma2_nu) / (Scalar(1) + abs(next.sigma2_nu));
  for (Eigen::Index k = 0; k < next.beta.size(); ++k) {
    step = std::max(step, abs(next.beta[k] - prev.beta[k]) / (Scalar(1) + abs(next.beta[k])));
  }
  return step;
}

}  // namespace detail

/// One beta update: weights D_i are evaluated at `current`.
template <typename Scalar>
Vector<Scalar> solve_beta(std::span<const AreaObservation<Scalar>> areas, const ModelParams<Scalar>& current) {
  using std::isfinite;
  detail::validate_areas(areas);
  if (static_cast<Eigen::Index>(areas.size()) < areas.front().dim()) {
    throw InsufficientAreas("solve_beta needs at least p areas");
  }
  if (current.beta.size() != areas.front().dim()) throw InvalidArgument("beta has the wrong length");
  std::vector<Scalar> weights(areas.size());
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const auto& a = areas[i];
    const Scalar total = propagated_variance(current.beta, a.sigma_me) + current.sigma2_nu + a.psi;
    if (!(total > Scalar(0)) || !isfinite(total)) {
      throw DegenerateVariance("area '" + a.area_id + "' has zero total variance; D_i is undefined");
    }
    weights[i] = Scalar(1) / total;
  }
  return detail::solve_moment_equation<Scalar>(areas, weights);
}

template <typename Scalar>
Vector<Scalar> solve_beta(const std::vector<AreaObservation<Scalar>>& areas, const ModelParams<Scalar>& current) {
  return solve_beta(std::span<const AreaObservation<Scalar>>(areas), current);
}

/// Moment estimate of sigma2_nu, truncated at zero.
template <typename Scalar, typename BetaDerived>
Sigma2Estimate<Scalar> estimate_sigma2(std::span<const AreaObservation<Scalar>> areas,
                                       const Eigen::MatrixBase<BetaDerived>& beta) {
  detail::validate_areas(areas);
  if (beta.size() != areas.front().dim()) throw InvalidArgument("beta has the wrong length");
  Scalar sum_sq{0};
  Scalar sum_psi{0};
  for (const auto& a : areas) {
    const Scalar r = a.z - a.w.dot(beta);
    sum_sq += r * r;
    sum_psi += a.psi;
  }
  const Scalar m = static_cast<Scalar>(areas.size());
  const Scalar raw = sum_sq / m - sum_psi / m;
  if (raw < Scalar(0)) return {Scalar(0), true};
  return {raw, false};
}

template <typename Scalar, typename BetaDerived>
Sigma2Estimate<Scalar> estimate_sigma2(const std::vector<AreaObservation<Scalar>>& areas,
                                       const Eigen::MatrixBase<BetaDerived>& beta) {
  return estimate_sigma2(std::span<const AreaObservation<Scalar>>(areas), beta);
}

/// Alternates solve_beta and estimate_sigma2.  The first iterate solves the
/// beta equation with unit weights unless `config.beta_init` is given.
/// Non-convergence is reported through `converged`, not thrown.
template <typename Scalar>
ModelFit<Scalar> fit(std::span<const AreaObservation<Scalar>> areas, const FitConfig<Scalar>& config = {}) {
  detail::validate_areas(areas);
  const Eigen::Index p = areas.front().dim();
  if (static_cast<Eigen::Index>(areas.size()) <= p) {
    throw InsufficientAreas("fit needs more areas (" + std::to_string(areas.size()) + ") than covariates (" +
                            std::to_string(p) + ")");
  }
  if (config.max_iterations < 1) throw InvalidArgument("max_iterations must be >= 1");
  if (!(config.rel_tolerance > Scalar(0))) throw InvalidArgument("rel_tolerance must be > 0");

  ModelParams<Scalar> current;
  if (config.beta_init) {
    if (config.beta_init->size() != p) throw InvalidArgument("beta_init has the wrong length");
    current.beta = *config.beta_init;
  } else {
    const std::vector<Scalar> unit(areas.size(), Scalar(1));
    current.beta = detail::solve_moment_equation<Scalar>(areas, unit);
  }
  auto s2 = estimate_sigma2(areas, current.beta);
  current.sigma2_nu = s2.value;

  ModelFit<Scalar> out;
  for (int it = 1; it <= config.max_iterations; ++it) {
    ModelParams<Scalar> next;
    next.beta = solve_beta(areas, current);
    s2 = estimate_sigma2(areas, next.beta);
    next.sigma2_nu = s2.value;
    const Scalar step = detail::relative_step(current, next);
    current = std::move(next);
    out.iterations_used = it;
    if (step < config.rel_tolerance) {
      out.converged = true;
      break;
    }
  }
  out.sigma2_truncated = s2.truncated;
  out.gammas.resize(static_cast<Eigen::Index>(areas.size()));
  for (std::size_t i = 0; i < areas.size(); ++i) {
    out.gammas[static_cast<Eigen::Index>(i)] = shrinkage_gamma(current, areas[i]);
  }
  out.params = std::move(current);
  return out;
}

template <typename Scalar>
ModelFit<Scalar> fit(const std::vector<AreaObservation<Scalar>>& areas, const FitConfig<Scalar>& config = {}) {
  return fit(std::span<const AreaObservation<Scalar>>(areas), config);
}

}  // namespace logsae
