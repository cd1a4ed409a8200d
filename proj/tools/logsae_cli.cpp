// logsae: fit, predict, estimate MSPE and run model-based simulations for the
// area-level log-normal model with measurement error in the covariates.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "logsae/error.hpp"
#include "logsae/estimation.hpp"
#include "logsae/io.hpp"
#include "logsae/mspe.hpp"
#include "logsae/parallel.hpp"
#include "logsae/simulation.hpp"

namespace fs = std::filesystem;
using namespace logsae;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Common {
  std::string out_dir = ".";
  int threads = 0;
  int max_iterations = 200;
  double rel_tolerance = 1e-10;
  bool quiet = false;

  Config fit_config() const {
    Config c;
    c.max_iterations = max_iterations;
    c.rel_tolerance = rel_tolerance;
    return c;
  }
  int resolved_threads() const { return threads > 0 ? threads : default_thread_count(); }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--out-dir", common.out_dir, "Directory for output files")->capture_default_str();
  app->add_option("--threads", common.threads, "Worker threads (default: LOGSAE_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--max-iter", common.max_iterations, "Maximum fitting iterations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--tol", common.rel_tolerance, "Relative convergence tolerance")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_flag("--quiet", common.quiet, "Do not echo the main table to stdout");
}

std::ofstream open_output(const Common& common, const std::string& name) {
  fs::create_directories(common.out_dir);
  const auto path = fs::path(common.out_dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  return out;
}

// Writes `name` under the output directory and echoes it to stdout.
void emit(const Common& common, const std::string& name, const std::function<void(std::ostream&)>& writer,
          bool echo) {
  std::ostringstream buffer;
  writer(buffer);
  auto out = open_output(common, name);
  out << buffer.str();
  if (echo && !common.quiet) std::cout << buffer.str();
}

class ManifestScope {
 public:
  ManifestScope(const Common& common, std::string command) : common_(common) {
    manifest_.command = std::move(command);
    manifest_.started_at = utc_timestamp();
    manifest_.threads = common.resolved_threads();
    start_ = std::chrono::steady_clock::now();
  }

  RunManifest& manifest() { return manifest_; }

  void finish() {
    manifest_.finished_at = utc_timestamp();
    manifest_.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    auto out = open_output(common_, "manifest.json");
    out << manifest_to_json(manifest_).dump(2) << '\n';
  }

 private:
  const Common& common_;
  RunManifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

nlohmann::json fit_config_json(const Config& c) {
  return {{"max_iterations", c.max_iterations}, {"rel_tolerance", c.rel_tolerance}};
}

int run_fit(const Common& common, const std::string& data) {
  ManifestScope scope(common, "fit");
  const auto areas = load_dataset(data);
  const auto config = common.fit_config();
  const auto result = fit(areas, config);
  emit(common, "fit.json", [&](std::ostream& out) { out << fit_to_json(result, areas).dump(2) << '\n'; }, true);
  scope.manifest().config = fit_config_json(config);
  scope.manifest().config["data"] = data;
  scope.manifest().input_digest = file_digest(data);
  scope.finish();
  return 0;
}

int run_predict(const Common& common, const std::string& data) {
  ManifestScope scope(common, "predict");
  const auto areas = load_dataset(data);
  const auto config = common.fit_config();
  const auto result = fit(areas, config);
  emit(common, "fit.json", [&](std::ostream& out) { out << fit_to_json(result, areas).dump(2) << '\n'; }, false);
  emit(common, "predictions.csv", [&](std::ostream& out) { write_predictions_csv(out, areas, result); }, true);
  scope.manifest().config = fit_config_json(config);
  scope.manifest().config["data"] = data;
  scope.manifest().input_digest = file_digest(data);
  scope.finish();
  return 0;
}

int run_mspe(const Common& common, const std::string& data, const std::string& method, int b,
             std::uint64_t seed) {
  ManifestScope scope(common, "mspe");
  const auto areas = load_dataset(data);
  const auto config = common.fit_config();
  const auto result = fit(areas, config);
  const int threads = common.resolved_threads();
  if (method == "jackknife") {
    const auto mspe = jackknife_mspe(areas, result, config, threads);
    emit(common, "mspe_jackknife.csv", [&](std::ostream& out) { write_jackknife_csv(out, areas, result, mspe); },
         true);
  } else {
    const auto mspe = bootstrap_mspe(areas, result, b, seed, config, threads);
    emit(common, "mspe_bootstrap.csv", [&](std::ostream& out) { write_bootstrap_csv(out, areas, result, mspe); },
         true);
    scope.manifest().seed = seed;
  }
  scope.manifest().config = fit_config_json(config);
  scope.manifest().config["data"] = data;
  scope.manifest().config["method"] = method;
  if (method == "bootstrap") scope.manifest().config["b"] = b;
  scope.manifest().input_digest = file_digest(data);
  scope.finish();
  return 0;
}

struct SimulateOptions {
  std::string study;
  std::vector<int> ms;
  std::vector<int> ks;
  double d = 2.0;
  double d_true = 2.0;
  double d_mis = 4.0;
  std::vector<double> beta{3.0};
  double sigma2_nu = 2.0;
  int r = 1000;
  int b = 1000;
  std::uint64_t seed = 1;
  double covariate_mean = 5.0;
  double covariate_var = 9.0;
  double psi_shape = 4.5;
  double psi_scale = 2.0;
};

int run_simulate(const Common& common, SimulateOptions opt) {
  ManifestScope scope(common, "simulate --study " + opt.study);
  if (opt.ms.empty()) opt.ms = opt.study == "zeros" ? std::vector<int>{20, 50, 100, 500} : std::vector<int>{20};
  if (opt.ks.empty()) opt.ks = opt.study == "zeros" ? std::vector<int>{0, 20, 50, 80, 100} : std::vector<int>{0};

  SimulationConfig base;
  base.d = opt.study == "misspec" ? opt.d_true : opt.d;
  base.beta_true = Eigen::Map<const Eigen::VectorXd>(opt.beta.data(), static_cast<Eigen::Index>(opt.beta.size()));
  base.sigma2_nu_true = opt.sigma2_nu;
  base.r_replications = opt.r;
  base.b_bootstrap = opt.b;
  base.seed = opt.seed;
  base.covariate_mean = opt.covariate_mean;
  base.covariate_var = opt.covariate_var;
  base.psi_shape = opt.psi_shape;
  base.psi_scale = opt.psi_scale;
  base.fit = common.fit_config();
  base.threads = common.resolved_threads();

  auto configs = [&] {
    std::vector<SimulationConfig> out;
    for (const int m : opt.ms) {
      for (const int k : opt.ks) {
        SimulationConfig c = base;
        c.m = m;
        c.k_percent = k;
        out.push_back(c);
      }
    }
    return out;
  };

  if (opt.study == "emse") {
    std::vector<EmseReport> reports;
    for (const auto& c : configs()) reports.push_back(run_emse_study(c));
    emit(common, "emse_summary.csv", [&](std::ostream& out) { write_emse_summary_csv(out, reports); }, true);
    emit(common, "emse_areas.csv", [&](std::ostream& out) { write_emse_areas_csv(out, reports); }, false);
  } else if (opt.study == "mspe") {
    std::vector<MspeReport> reports;
    for (const auto& c : configs()) reports.push_back(run_mspe_study(c));
    emit(common, "mspe_summary.csv", [&](std::ostream& out) { write_mspe_summary_csv(out, reports); }, true);
    emit(common, "mspe_areas.csv", [&](std::ostream& out) { write_mspe_areas_csv(out, reports); }, false);
    emit(common, "mspe_distribution.csv", [&](std::ostream& out) { write_mspe_distribution_csv(out, reports); },
         false);
  } else if (opt.study == "zeros") {
    const auto rows = zero_proportion_study(base, opt.ms, opt.ks);
    emit(common, "zeros.csv", [&](std::ostream& out) { write_zero_proportion_csv(out, base, rows); }, true);
  } else {
    std::vector<MisspecificationRow> rows;
    for (const auto& c : configs()) rows.push_back(misspecification_study(c, opt.d_true, opt.d_mis));
    emit(common, "misspec.csv", [&](std::ostream& out) { write_misspecification_csv(out, rows); }, true);
  }

  auto& manifest = scope.manifest();
  manifest.config = config_to_json(base);
  manifest.config.erase("m");
  manifest.config.erase("k_percent");
  manifest.config["study"] = opt.study;
  manifest.config["m"] = opt.ms;
  manifest.config["k_percent"] = opt.ks;
  if (opt.study == "misspec") {
    manifest.config["d_true"] = opt.d_true;
    manifest.config["d_mis"] = opt.d_mis;
  }
  manifest.seed = opt.seed;
  scope.finish();
  return 0;
}

int report_error(const std::string& name, const std::string& message, int code) {
  nlohmann::json j{{"error", name}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Empirical Bayes prediction for positive small-area quantities under a log-normal "
               "area-level model with measurement error in the covariates"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Common common;
  std::string data;

  auto* fit_cmd = app.add_subcommand("fit", "Estimate (beta, sigma2_nu) and write fit.json");
  fit_cmd->add_option("--data", data, "Area-level CSV dataset")->required();
  add_common(fit_cmd, common);

  auto* predict_cmd = app.add_subcommand("predict", "Fit and write per-area EB predictions");
  predict_cmd->add_option("--data", data, "Area-level CSV dataset")->required();
  add_common(predict_cmd, common);

  std::string method;
  int b = 1000;
  std::uint64_t seed = 1;
  auto* mspe_cmd = app.add_subcommand("mspe", "Jackknife or parametric-bootstrap MSPE of the EB predictor");
  mspe_cmd->add_option("--data", data, "Area-level CSV dataset")->required();
  mspe_cmd->add_option("--method", method, "jackknife or bootstrap")
      ->required()
      ->check(CLI::IsMember({"jackknife", "bootstrap"}));
  mspe_cmd->add_option("--b", b, "Bootstrap replicates")->check(CLI::Range(2, 100000000))->capture_default_str();
  mspe_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  add_common(mspe_cmd, common);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Model-based simulation studies");
  sim_cmd->add_option("--study", sim.study, "emse, mspe, zeros or misspec")
      ->required()
      ->check(CLI::IsMember({"emse", "mspe", "zeros", "misspec"}));
  sim_cmd->add_option("--m", sim.ms, "Number of areas (one or more)");
  sim_cmd->add_option("--k", sim.ks, "Percent of areas with measurement error (one or more)")
      ->check(CLI::Range(0, 100));
  sim_cmd->add_option("--d", sim.d, "Measurement-error variance")->check(CLI::NonNegativeNumber)->capture_default_str();
  sim_cmd->add_option("--d-true", sim.d_true, "True d (misspec study)")->check(CLI::NonNegativeNumber)->capture_default_str();
  sim_cmd->add_option("--d-mis", sim.d_mis, "Misspecified d (misspec study)")->check(CLI::NonNegativeNumber)->capture_default_str();
  sim_cmd->add_option("--beta", sim.beta, "True regression coefficients")->capture_default_str();
  sim_cmd->add_option("--sigma2-nu", sim.sigma2_nu, "True random-effect variance")->check(CLI::NonNegativeNumber)->capture_default_str();
  sim_cmd->add_option("--r", sim.r, "Replications")->check(CLI::PositiveNumber)->capture_default_str();
  sim_cmd->add_option("--b", sim.b, "Bootstrap replicates (mspe study)")->check(CLI::Range(2, 100000000))->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  sim_cmd->add_option("--covariate-mean", sim.covariate_mean, "Mean of the latent log covariates")->capture_default_str();
  sim_cmd->add_option("--covariate-var", sim.covariate_var, "Variance of the latent log covariates")->capture_default_str();
  sim_cmd->add_option("--psi-shape", sim.psi_shape, "Gamma shape of psi")->capture_default_str();
  sim_cmd->add_option("--psi-scale", sim.psi_scale, "Gamma scale of psi")->capture_default_str();
  add_common(sim_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*fit_cmd) return run_fit(common, data);
    if (*predict_cmd) return run_predict(common, data);
    if (*mspe_cmd) return run_mspe(common, data, method, b, seed);
    return run_simulate(common, sim);
  } catch (const Error& e) {
    const int code = e.kind() == ErrorKind::Usage  ? kExitUsage
                     : e.kind() == ErrorKind::Data ? kExitData
                                                   : kExitNumerical;
    return report_error(e.name(), e.what(), code);
  } catch (const std::exception& e) {
    return report_error("IoError", e.what(), kExitData);
  }
}
