#pragma once

// Area-level CSV datasets, report tables and run manifests.
//
// Dataset columns (header names decide the schema, column order is free):
//   area_id                      required, unique
//   y | z                        exactly one: raw direct estimate (> 0) or its log
//   x_1..x_p | w_1..w_p          exactly one family: raw covariates (> 0) or their logs
//   psi                          sampling variance of z, >= 0
//   sme_diag_1..sme_diag_p       diagonal measurement-error covariance, or
//   sme_j_k for all k <= j <= p  its full lower triangle
// Raw columns are log-transformed on load.  The measurement-error covariance
// always refers to the log covariates.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "logsae/estimation.hpp"
#include "logsae/model.hpp"
#include "logsae/mspe.hpp"
#include "logsae/simulation.hpp"

namespace logsae {

inline constexpr const char* kVersion = "0.1.0";

Areas parse_dataset(std::istream& in, const std::string& source = "<stream>");
Areas load_dataset(const std::filesystem::path& path);

/// Writes areas in the log-scale schema (z, w_k, psi, full lower-triangle
/// sme_j_k).  load_dataset on the result reproduces `areas` exactly.
void write_dataset(std::ostream& out, const Areas& areas);

/// Round-trip text for a double (17 significant digits).
std::string format_number(double x);

nlohmann::json fit_to_json(const Fit& fit, const Areas& areas);

void write_predictions_csv(std::ostream& out, const Areas& areas, const Fit& fit);
void write_jackknife_csv(std::ostream& out, const Areas& areas, const Fit& fit,
                         const std::vector<JackknifeMspe>& mspe);
void write_bootstrap_csv(std::ostream& out, const Areas& areas, const Fit& fit,
                         const std::vector<BootstrapMspe>& mspe);

void write_emse_summary_csv(std::ostream& out, const std::vector<EmseReport>& reports);
void write_emse_areas_csv(std::ostream& out, const std::vector<EmseReport>& reports);
void write_mspe_summary_csv(std::ostream& out, const std::vector<MspeReport>& reports);
void write_mspe_areas_csv(std::ostream& out, const std::vector<MspeReport>& reports);
void write_mspe_distribution_csv(std::ostream& out, const std::vector<MspeReport>& reports);
void write_zero_proportion_csv(std::ostream& out, const SimulationConfig& base,
                               const std::vector<ZeroProportionRow>& rows);
void write_misspecification_csv(std::ostream& out, const std::vector<MisspecificationRow>& rows);

nlohmann::json config_to_json(const SimulationConfig& config);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::optional<std::uint64_t> seed;
  std::string version = kVersion;
  std::optional<std::string> input_digest;
  std::string started_at;
  std::string finished_at;
  double wall_clock_seconds = 0.0;
  int threads = 0;
};

nlohmann::json manifest_to_json(const RunManifest& manifest);

/// Current UTC time as ISO 8601.
std::string utc_timestamp();

}  // namespace logsae
