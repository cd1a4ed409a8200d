#include "logsae/mspe.hpp"

#include <string>

#include "logsae/parallel.hpp"
#include "logsae/rng.hpp"

namespace logsae {

namespace {

Config warm_started(const Config& config, const Fit& full_fit) {
  Config out = config;
  out.beta_init = full_fit.params.beta;
  return out;
}

}  // namespace

std::vector<Fit> leave_one_out_fits(const Areas& areas, const Fit& full_fit, const Config& config, int threads) {
  const auto m = areas.size();
  if (m == 0) throw InsufficientAreas("jackknife needs at least one area");
  const auto p = static_cast<std::size_t>(areas.front().dim());
  if (m < p + 2) {
    throw InsufficientAreas("jackknife needs at least p + 2 areas (have " + std::to_string(m) + ")");
  }
  const Config warm = warm_started(config, full_fit);
  std::vector<Fit> fits(m);
  parallel_for(m, threads, [&](std::size_t j) {
    Areas rest;
    rest.reserve(m - 1);
    for (std::size_t l = 0; l < m; ++l) {
      if (l != j) rest.push_back(areas[l]);
    }
    try {
      fits[j] = fit(rest, warm);
    } catch (const SingularMomentMatrix& e) {
      throw SingularMomentMatrix("leave-one-out refit without area " + std::to_string(j) + " ('" +
                                     areas[j].area_id + "'): " + e.what(),
                                 static_cast<long>(j));
    }
  });
  return fits;
}

std::vector<JackknifeMspe> jackknife_mspe(const Areas& areas, const Fit& full_fit, const Config& config,
                                          int threads) {
  const auto loo = leave_one_out_fits(areas, full_fit, config, threads);
  const auto m = areas.size();
  const double factor = static_cast<double>(m - 1) / static_cast<double>(m);

  int nonconverged = 0;
  for (const auto& f : loo) nonconverged += f.converged ? 0 : 1;

  std::vector<JackknifeMspe> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& area = areas[i];
    const double m1 = m1_term(area, full_fit.params);
    const double pred = eb_predict(area, full_fit.params);
    double m1_shift = 0.0;
    double m2_sum = 0.0;
    for (const auto& f : loo) {
      m1_shift += m1 - m1_term(area, f.params);
      const double diff = pred - eb_predict(area, f.params);
      m2_sum += diff * diff;
    }
    auto& r = out[i];
    r.m1_j = m1 - factor * m1_shift;
    r.m2_j = factor * m2_sum;
    r.total = r.m1_j + r.m2_j;
    r.loo_nonconverged = nonconverged;
  }
  return out;
}

Areas draw_bootstrap_sample(const Areas& areas, const Params& fitted, std::uint64_t seed, int replicate) {
  const double nu_sd = std::sqrt(std::max(0.0, fitted.sigma2_nu));
  Areas out = areas;
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const auto& a = areas[i];
    KeyedRng rng(seed, {static_cast<std::uint64_t>(Stream::Bootstrap), static_cast<std::uint64_t>(replicate),
                        static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> normal(0.0, 1.0);
    const double nu = nu_sd * normal(rng);
    const Eigen::VectorXd eta = standard_normal(rng, a.dim());
    auto& s = out[i];
    s.w = a.w + psd_factor(a.sigma_me) * eta;
    s.z = s.w.dot(fitted.beta) + nu + std::sqrt(a.psi) * normal(rng);
  }
  return out;
}

std::vector<BootstrapMspe> combine_bootstrap(const Areas& areas, const Params& fitted,
                                             std::span<const std::optional<Params>> replicate_params) {
  int used = 0;
  for (const auto& p : replicate_params) used += p ? 1 : 0;
  const int failed = static_cast<int>(replicate_params.size()) - used;
  if (used == 0) throw ResamplingFailed("every bootstrap replicate failed to refit");

  std::vector<BootstrapMspe> out(areas.size());
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const auto& area = areas[i];
    const double m1 = m1_term(area, fitted);
    const double pred = eb_predict(area, fitted);
    double m1_star_sum = 0.0;
    double m2_sum = 0.0;
    for (const auto& p : replicate_params) {
      if (!p) continue;
      m1_star_sum += m1_term(area, *p);
      const double diff = eb_predict(area, *p) - pred;
      m2_sum += diff * diff;
    }
    auto& r = out[i];
    r.m1_bias_corrected = 2.0 * m1 - m1_star_sum / used;
    r.m2_star = m2_sum / used;
    r.total = r.m1_bias_corrected + r.m2_star;
    r.b_replicates = used;
    r.b_failed = failed;
    r.negative = r.total < 0.0;
  }
  return out;
}

std::vector<BootstrapMspe> bootstrap_mspe(const Areas& areas, const Fit& full_fit, int b, std::uint64_t seed,
                                          const Config& config, int threads) {
  if (b < 2) throw InvalidArgument("bootstrap needs at least 2 replicates");
  if (areas.empty()) throw InsufficientAreas("bootstrap needs at least one area");
  const Config warm = warm_started(config, full_fit);
  std::vector<std::optional<Params>> params(static_cast<std::size_t>(b));
  parallel_for(params.size(), threads, [&](std::size_t r) {
    const Areas starred = draw_bootstrap_sample(areas, full_fit.params, seed, static_cast<int>(r));
    try {
      params[r] = fit(starred, warm).params;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
      params[r].reset();
    }
  });
  return combine_bootstrap(areas, full_fit.params, params);
}

}  // namespace logsae
