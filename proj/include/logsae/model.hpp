#pragma once

// Area-level log-normal model with measurement error in the covariates:
//
//   z_i = theta_i + e_i,          e_i   ~ N(0, psi_i)
//   theta_i = W_i' beta + nu_i,   nu_i  ~ N(0, sigma2_nu)
//   w_i = W_i + eta_i,            eta_i ~ N_p(0, Sigma_i)
//
// with z_i = log y_i and the target Y_i = exp(theta_i).  Everything here is a
// closed-form function of one area and the parameters.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "logsae/error.hpp"

namespace logsae {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// One small area as seen at fit time.  All quantities are on the log scale.
template <typename Scalar>
struct AreaObservation {
  std::string area_id;
  Scalar z{0};            // log direct estimate
  Vector<Scalar> w;       // observed log covariates, length p
  Scalar psi{0};          // sampling variance of z
  Matrix<Scalar> sigma_me;  // p x p measurement-error covariance of w

  Eigen::Index dim() const { return w.size(); }
};

template <typename Scalar>
struct ModelParams {
  Vector<Scalar> beta;
  Scalar sigma2_nu{0};
};

/// Conditional law of theta_i given z_i: N(mean, variance), variance = gamma * psi.
template <typename Scalar>
struct PosteriorMoments {
  Scalar mean{0};
  Scalar variance{0};
  Scalar gamma{0};
};

using Area = AreaObservation<double>;
using Params = ModelParams<double>;
using Areas = std::vector<Area>;

namespace detail {

template <typename Scalar>
Scalar checked_exp(Scalar exponent, const char* what) {
  using std::exp;
  using std::isfinite;
  if (!isfinite(exponent)) {
    throw Overflow(std::string(what) + ": exponent is not finite");
  }
  if (exponent > std::log(std::numeric_limits<Scalar>::max())) {
    throw Overflow(std::string(what) + ": exp(" + std::to_string(static_cast<double>(exponent)) +
                   ") exceeds the representable range");
  }
  return exp(exponent);
}

}  // namespace detail

/// beta' Sigma beta, the variance the covariate noise adds to w' beta.
template <typename BetaDerived, typename SigmaDerived>
typename BetaDerived::Scalar propagated_variance(const Eigen::MatrixBase<BetaDerived>& beta,
                                                 const Eigen::MatrixBase<SigmaDerived>& sigma_me) {
  using Scalar = typename BetaDerived::Scalar;
  if (sigma_me.size() == 0) return Scalar(0);
  return beta.dot(sigma_me * beta);
}

/// Shrinkage factor gamma = (b'Sb + s2) / (b'Sb + s2 + psi).
template <typename Scalar, typename SigmaDerived>
Scalar shrinkage_gamma(const ModelParams<Scalar>& params, const Eigen::MatrixBase<SigmaDerived>& sigma_me,
                       Scalar psi) {
  if (!(psi >= Scalar(0))) throw InvalidArgument("shrinkage_gamma: psi must be >= 0");
  // A PSD Sigma can give a b'Sb a few ulps below zero.
  const Scalar signal = std::max(Scalar(0), propagated_variance(params.beta, sigma_me) + params.sigma2_nu);
  if (signal == Scalar(0) && psi == Scalar(0)) {
    throw DegenerateVariance("shrinkage_gamma: model variance and sampling variance are both zero");
  }
  return signal / (signal + psi);
}

template <typename Scalar>
Scalar shrinkage_gamma(const ModelParams<Scalar>& params, const AreaObservation<Scalar>& obs) {
  return shrinkage_gamma(params, obs.sigma_me, obs.psi);
}

/// Posterior moments of theta_i | z_i with `covariates` standing in for W_i.
template <typename Scalar, typename CovDerived>
PosteriorMoments<Scalar> posterior_moments(const AreaObservation<Scalar>& obs, const ModelParams<Scalar>& params,
                                           const Eigen::MatrixBase<CovDerived>& covariates) {
  const Scalar gamma = shrinkage_gamma(params, obs);
  const Scalar synthetic = covariates.dot(params.beta);
  return {gamma * obs.z + (Scalar(1) - gamma) * synthetic, gamma * obs.psi, gamma};
}

template <typename Scalar>
PosteriorMoments<Scalar> posterior_moments(const AreaObservation<Scalar>& obs, const ModelParams<Scalar>& params) {
  return posterior_moments(obs, params, obs.w);
}

/// Log of the (empirical) Bayes predictor: posterior mean + variance / 2.
template <typename Scalar, typename CovDerived>
Scalar log_eb_predict(const AreaObservation<Scalar>& obs, const ModelParams<Scalar>& params,
                      const Eigen::MatrixBase<CovDerived>& covariates) {
  const auto post = posterior_moments(obs, params, covariates);
  return post.mean + post.variance / Scalar(2);
}

/// E[Y_i | z_i] = exp{gamma z + (1 - gamma) m'beta + gamma psi / 2} with m the
/// covariates in use (observed w_i by default).
template <typename Scalar, typename CovDerived>
Scalar eb_predict(const AreaObservation<Scalar>& obs, const ModelParams<Scalar>& params,
                  const Eigen::MatrixBase<CovDerived>& covariates) {
  return detail::checked_exp(log_eb_predict(obs, params, covariates), "eb_predict");
}

template <typename Scalar>
Scalar eb_predict(const AreaObservation<Scalar>& obs, const ModelParams<Scalar>& params) {
  return eb_predict(obs, params, obs.w);
}

/// Posterior variance of Y_i = exp(theta_i):
///   exp{psi gamma} (exp{psi gamma} - 1) exp{2 [gamma z + (1 - gamma) m'beta]}.
/// Evaluated as exp(log of the product) so intermediate factors cannot overflow.
template <typename Scalar, typename CovDerived>
Scalar m1_term(const AreaObservation<Scalar>& obs, const ModelParams<Scalar>& params,
               const Eigen::MatrixBase<CovDerived>& covariates) {
  using std::expm1;
  using std::log;
  const auto post = posterior_moments(obs, params, covariates);
  if (post.variance <= Scalar(0)) return Scalar(0);
  const Scalar log_value = post.variance + log(expm1(post.variance)) + Scalar(2) * post.mean;
  return detail::checked_exp(log_value, "m1_term");
}

template <typename Scalar>
Scalar m1_term(const AreaObservation<Scalar>& obs, const ModelParams<Scalar>& params) {
  return m1_term(obs, params, obs.w);
}

}  // namespace logsae
