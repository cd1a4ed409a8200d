#include "logsae/io.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

namespace logsae {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string where(const std::string& source, std::size_t line, const std::string& column) {
  return source + ":" + std::to_string(line) + " column '" + column + "'";
}

double parse_number(const std::string& cell, const std::string& source, std::size_t line, const std::string& column) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError(where(source, line, column) + ": '" + cell + "' is not a finite number");
  }
  return value;
}

enum class Scale { Raw, Log };

// Column layout resolved from the header.
struct Schema {
  std::size_t area_id = 0;
  std::size_t response = 0;
  Scale response_scale = Scale::Log;
  std::vector<std::size_t> covariates;  // column of covariate k
  Scale covariate_scale = Scale::Log;
  std::size_t psi = 0;
  bool diagonal_sigma = true;
  std::map<std::pair<int, int>, std::size_t> sigma;  // (j, k) with k <= j, 0-based
  std::vector<std::string> names;
};

Schema resolve_schema(const std::vector<std::string>& header, const std::string& source) {
  Schema s;
  s.names = header;
  std::optional<std::size_t> area_id, y, z, psi;
  std::map<int, std::size_t> xs, ws, diag;
  std::map<std::pair<int, int>, std::size_t> tri;
  static const std::regex indexed(R"((x|w|sme_diag)_([1-9][0-9]*))");
  static const std::regex pair(R"(sme_([1-9][0-9]*)_([1-9][0-9]*))");

  std::set<std::string> seen;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& name = header[c];
    if (!seen.insert(name).second) throw ParseError(source + ": duplicate column '" + name + "'");
    std::smatch match;
    if (name == "area_id") {
      area_id = c;
    } else if (name == "y") {
      y = c;
    } else if (name == "z") {
      z = c;
    } else if (name == "psi") {
      psi = c;
    } else if (std::regex_match(name, match, indexed)) {
      const int k = std::stoi(match[2]) - 1;
      const auto family = match[1].str();
      (family == "x" ? xs : family == "w" ? ws : diag)[k] = c;
    } else if (std::regex_match(name, match, pair)) {
      const int j = std::stoi(match[1]) - 1;
      const int k = std::stoi(match[2]) - 1;
      if (k > j) throw ParseError(source + ": '" + name + "' is above the diagonal; give the lower triangle");
      tri[{j, k}] = c;
    } else {
      throw ParseError(source + ": unknown column '" + name + "'");
    }
  }

  if (!area_id) throw ParseError(source + ": missing column 'area_id'");
  if (y.has_value() == z.has_value()) throw ParseError(source + ": need exactly one of the columns 'y' and 'z'");
  if (!psi) throw ParseError(source + ": missing column 'psi'");
  if (!xs.empty() && !ws.empty()) throw ParseError(source + ": covariates given on both raw (x_k) and log (w_k) scale");
  if (xs.empty() && ws.empty()) throw ParseError(source + ": no covariate columns (x_k or w_k)");

  s.area_id = *area_id;
  s.response = y ? *y : *z;
  s.response_scale = y ? Scale::Raw : Scale::Log;
  s.psi = *psi;
  const auto& cov = xs.empty() ? ws : xs;
  s.covariate_scale = xs.empty() ? Scale::Log : Scale::Raw;
  const int p = static_cast<int>(cov.size());
  for (int k = 0; k < p; ++k) {
    const auto it = cov.find(k);
    if (it == cov.end()) throw ParseError(source + ": covariate columns are not numbered 1.." + std::to_string(p));
    s.covariates.push_back(it->second);
  }

  if (!diag.empty() && !tri.empty()) throw ParseError(source + ": give either sme_diag_k or sme_j_k, not both");
  if (diag.empty() && tri.empty()) throw ParseError(source + ": missing measurement-error columns");
  s.diagonal_sigma = !diag.empty();
  for (int j = 0; j < p; ++j) {
    for (int k = 0; k <= j; ++k) {
      if (s.diagonal_sigma) {
        if (j != k) continue;
        const auto it = diag.find(j);
        if (it == diag.end()) throw ParseError(source + ": missing column 'sme_diag_" + std::to_string(j + 1) + "'");
        s.sigma[{j, j}] = it->second;
      } else {
        const auto it = tri.find({j, k});
        if (it == tri.end()) {
          throw ParseError(source + ": missing column 'sme_" + std::to_string(j + 1) + "_" + std::to_string(k + 1) +
                           "'");
        }
        s.sigma[{j, k}] = it->second;
      }
    }
  }
  const std::size_t expected = s.diagonal_sigma ? diag.size() : tri.size();
  if (expected != s.sigma.size()) throw ParseError(source + ": measurement-error columns exceed the covariate count");
  return s;
}

void check_psd(const Area& area, const std::string& source, std::size_t line) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(area.sigma_me, Eigen::EigenvaluesOnly);
  const auto& values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() < -1e-12 * scale) {
    throw NonPsdSigma(source + ":" + std::to_string(line) + ": measurement-error covariance of area '" +
                      area.area_id + "' is not positive semi-definite (smallest eigenvalue " +
                      format_number(values.minCoeff()) + ")");
  }
}

double positive_log(double value, const std::string& source, std::size_t line, const std::string& column) {
  if (!(value > 0.0)) {
    throw NonPositiveValue(where(source, line, column) + ": raw-scale value " + format_number(value) +
                           " must be > 0 to take logs");
  }
  return std::log(value);
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (c) out << ',';
    out << cells[c];
  }
  out << '\n';
}

std::string num(double x) { return format_number(x); }
std::string num(int x) { return std::to_string(x); }
std::string flag(bool b) { return b ? "1" : "0"; }

}  // namespace

std::string format_number(double x) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", x);
  return std::string(buf, static_cast<std::size_t>(n));
}

Areas parse_dataset(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<Schema> schema;
  Areas areas;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_row(line);
    if (!schema) {
      schema = resolve_schema(cells, source);
      continue;
    }
    const auto& s = *schema;
    if (cells.size() != s.names.size()) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(s.names.size()) +
                       " cells, found " + std::to_string(cells.size()));
    }
    auto number = [&](std::size_t col) { return parse_number(cells[col], source, line_no, s.names[col]); };

    Area a;
    a.area_id = cells[s.area_id];
    if (a.area_id.empty()) throw ParseError(where(source, line_no, "area_id") + ": empty identifier");
    if (!ids.insert(a.area_id).second) {
      throw ParseError(where(source, line_no, "area_id") + ": duplicate area '" + a.area_id + "'");
    }

    const double response = number(s.response);
    a.z = s.response_scale == Scale::Raw ? positive_log(response, source, line_no, s.names[s.response]) : response;

    const auto p = static_cast<Eigen::Index>(s.covariates.size());
    a.w.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto col = s.covariates[static_cast<std::size_t>(k)];
      const double v = number(col);
      a.w[k] = s.covariate_scale == Scale::Raw ? positive_log(v, source, line_no, s.names[col]) : v;
    }

    a.psi = number(s.psi);
    if (a.psi < 0.0) {
      throw NonPositiveValue(where(source, line_no, "psi") + ": sampling variance must be >= 0");
    }

    a.sigma_me = Eigen::MatrixXd::Zero(p, p);
    for (const auto& [jk, col] : s.sigma) {
      const double v = number(col);
      a.sigma_me(jk.first, jk.second) = v;
      a.sigma_me(jk.second, jk.first) = v;
    }
    check_psd(a, source, line_no);
    areas.push_back(std::move(a));
  }
  if (!schema) throw ParseError(source + ": empty file");
  return areas;
}

Areas load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  return parse_dataset(in, path.string());
}

void write_dataset(std::ostream& out, const Areas& areas) {
  if (areas.empty()) throw InvalidArgument("write_dataset: no areas");
  const Eigen::Index p = areas.front().dim();
  std::vector<std::string> header{"area_id", "z"};
  for (Eigen::Index k = 0; k < p; ++k) header.push_back("w_" + std::to_string(k + 1));
  header.push_back("psi");
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index k = 0; k <= j; ++k) header.push_back("sme_" + std::to_string(j + 1) + "_" + std::to_string(k + 1));
  }
  write_row(out, header);
  for (const auto& a : areas) {
    std::vector<std::string> row{a.area_id, num(a.z)};
    for (Eigen::Index k = 0; k < p; ++k) row.push_back(num(a.w[k]));
    row.push_back(num(a.psi));
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index k = 0; k <= j; ++k) row.push_back(num(a.sigma_me(j, k)));
    }
    write_row(out, row);
  }
}

nlohmann::json fit_to_json(const Fit& fit, const Areas& areas) {
  nlohmann::json j;
  j["beta"] = std::vector<double>(fit.params.beta.data(), fit.params.beta.data() + fit.params.beta.size());
  j["sigma2_nu"] = fit.params.sigma2_nu;
  j["converged"] = fit.converged;
  j["sigma2_truncated"] = fit.sigma2_truncated;
  j["iterations_used"] = fit.iterations_used;
  auto& g = j["gammas"] = nlohmann::json::array();
  for (std::size_t i = 0; i < areas.size(); ++i) {
    g.push_back({{"area_id", areas[i].area_id}, {"gamma", fit.gammas[static_cast<Eigen::Index>(i)]}});
  }
  return j;
}

void write_predictions_csv(std::ostream& out, const Areas& areas, const Fit& fit) {
  write_row(out, {"area_id", "z", "psi", "gamma", "eb_prediction", "log_eb_prediction", "m1_hat"});
  for (const auto& a : areas) {
    const double g = shrinkage_gamma(fit.params, a);
    const double log_pred = log_eb_predict(a, fit.params, a.w);
    write_row(out, {a.area_id, num(a.z), num(a.psi), num(g), num(eb_predict(a, fit.params)), num(log_pred),
                    num(m1_term(a, fit.params))});
  }
}

void write_jackknife_csv(std::ostream& out, const Areas& areas, const Fit& fit,
                         const std::vector<JackknifeMspe>& mspe) {
  write_row(out, {"area_id", "eb_prediction", "m1_hat", "m1_j", "m2_j", "mspe_j", "loo_nonconverged"});
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const auto& a = areas[i];
    const auto& r = mspe[i];
    write_row(out, {a.area_id, num(eb_predict(a, fit.params)), num(m1_term(a, fit.params)), num(r.m1_j), num(r.m2_j),
                    num(r.total), num(r.loo_nonconverged)});
  }
}

void write_bootstrap_csv(std::ostream& out, const Areas& areas, const Fit& fit,
                         const std::vector<BootstrapMspe>& mspe) {
  write_row(out, {"area_id", "eb_prediction", "m1_hat", "m1_bias_corrected", "m2_star", "mspe_b", "negative",
                  "b_replicates", "b_failed"});
  for (std::size_t i = 0; i < areas.size(); ++i) {
    const auto& a = areas[i];
    const auto& r = mspe[i];
    write_row(out, {a.area_id, num(eb_predict(a, fit.params)), num(m1_term(a, fit.params)), num(r.m1_bias_corrected),
                    num(r.m2_star), num(r.total), flag(r.negative), num(r.b_replicates), num(r.b_failed)});
  }
}

void write_emse_summary_csv(std::ostream& out, const std::vector<EmseReport>& reports) {
  std::vector<std::string> header{"m", "k", "d", "r_used", "r_failed"};
  for (int e = 0; e < kEstimatorCount; ++e) {
    const std::string name = estimator_name(static_cast<Estimator>(e));
    header.insert(header.end(), {"mean_pred_" + name, "log_mean_pred_" + name});
  }
  for (int e = 0; e < kEstimatorCount; ++e) {
    const std::string name = estimator_name(static_cast<Estimator>(e));
    header.insert(header.end(), {"emse_" + name, "log_emse_" + name});
  }
  header.insert(header.end(), {"zero_prop_true_covariate", "zero_prop_ignoring_error", "zero_prop_measurement_error"});
  write_row(out, header);
  for (const auto& r : reports) {
    std::vector<std::string> row{num(r.config.m), num(r.config.k_percent), num(r.config.d), num(r.replicates_used),
                                 num(r.replicates_failed)};
    for (int e = 0; e < kEstimatorCount; ++e) {
      row.insert(row.end(), {num(r.avg_prediction[e]), num(r.log_avg_prediction[e])});
    }
    for (int e = 0; e < kEstimatorCount; ++e) row.insert(row.end(), {num(r.avg_emse[e]), num(r.log_avg_emse[e])});
    for (const double z : r.zero_proportion) row.push_back(num(z));
    write_row(out, row);
  }
}

void write_emse_areas_csv(std::ostream& out, const std::vector<EmseReport>& reports) {
  std::vector<std::string> header{"m", "k", "area"};
  for (int e = 0; e < kEstimatorCount; ++e) header.push_back(std::string("emse_") + estimator_name(static_cast<Estimator>(e)));
  for (int e = 0; e < kEstimatorCount; ++e) {
    header.push_back(std::string("mean_pred_") + estimator_name(static_cast<Estimator>(e)));
  }
  write_row(out, header);
  for (const auto& r : reports) {
    for (int i = 0; i < r.config.m; ++i) {
      std::vector<std::string> row{num(r.config.m), num(r.config.k_percent), num(i + 1)};
      for (int e = 0; e < kEstimatorCount; ++e) row.push_back(num(r.emse[e][i]));
      for (int e = 0; e < kEstimatorCount; ++e) row.push_back(num(r.mean_prediction[e][i]));
      write_row(out, row);
    }
  }
}

void write_mspe_summary_csv(std::ostream& out, const std::vector<MspeReport>& reports) {
  write_row(out, {"m", "k", "d", "b", "r_used", "r_failed", "emse", "log_emse", "mspe_j", "log_abs_mspe_j",
                  "mspe_j_negative", "mspe_b", "log_abs_mspe_b", "mspe_b_negative", "rb_j", "rb_b", "log_gap_j",
                  "log_gap_b", "loo_nonconverged", "bootstrap_failed"});
  for (const auto& r : reports) {
    write_row(out, {num(r.config.m), num(r.config.k_percent), num(r.config.d), num(r.config.b_bootstrap),
                    num(r.replicates_used), num(r.replicates_failed), num(r.avg_emse), num(r.log_emse.log_abs),
                    num(r.avg_mspe_j), num(r.log_mspe_j.log_abs), flag(r.log_mspe_j.negative), num(r.avg_mspe_b),
                    num(r.log_mspe_b.log_abs), flag(r.log_mspe_b.negative), num(r.avg_rb_j), num(r.avg_rb_b),
                    num(r.log_gap_j), num(r.log_gap_b), num(r.loo_nonconverged), num(r.bootstrap_failed)});
  }
}

void write_mspe_areas_csv(std::ostream& out, const std::vector<MspeReport>& reports) {
  write_row(out, {"m", "k", "area", "emse", "mean_mspe_j", "mean_mspe_b", "rb_j", "rb_b", "bootstrap_negative"});
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.areas.size(); ++i) {
      const auto& a = r.areas[i];
      write_row(out, {num(r.config.m), num(r.config.k_percent), num(static_cast<int>(i) + 1), num(a.emse),
                      num(a.mean_mspe_j), num(a.mean_mspe_b), num(a.rb_j), num(a.rb_b), num(a.bootstrap_negative)});
    }
  }
}

void write_mspe_distribution_csv(std::ostream& out, const std::vector<MspeReport>& reports) {
  write_row(out, {"m", "k", "replicate", "area", "squared_error", "mspe_j", "mspe_b"});
  for (const auto& r : reports) {
    for (const auto& d : r.draws) {
      write_row(out, {num(r.config.m), num(r.config.k_percent), num(d.replicate), num(d.area + 1),
                      num(d.squared_error), num(d.mspe_j), num(d.mspe_b)});
    }
  }
}

void write_zero_proportion_csv(std::ostream& out, const SimulationConfig& base,
                               const std::vector<ZeroProportionRow>& rows) {
  write_row(out, {"m", "k", "d", "r_used", "r_failed", "true_covariate", "ignoring_error", "measurement_error"});
  for (const auto& r : rows) {
    write_row(out, {num(r.m), num(r.k_percent), num(base.d), num(r.replicates_used), num(r.replicates_failed),
                    num(r.true_covariate), num(r.ignoring_error), num(r.measurement_error)});
  }
}

void write_misspecification_csv(std::ostream& out, const std::vector<MisspecificationRow>& rows) {
  write_row(out, {"m", "k", "d_true", "d_mis", "r_used", "r_failed", "mean_abs_diff_x100", "bias_x100",
                  "bias_mis_x100"});
  for (const auto& r : rows) {
    write_row(out, {num(r.m), num(r.k_percent), num(r.d_true), num(r.d_mis), num(r.replicates_used),
                    num(r.replicates_failed), num(r.mean_abs_diff_x100), num(r.bias_x100), num(r.bias_mis_x100)});
  }
}

nlohmann::json config_to_json(const SimulationConfig& c) {
  return {
      {"m", c.m},
      {"k_percent", c.k_percent},
      {"d", c.d},
      {"beta_true", std::vector<double>(c.beta_true.data(), c.beta_true.data() + c.beta_true.size())},
      {"sigma2_nu_true", c.sigma2_nu_true},
      {"r_replications", c.r_replications},
      {"b_bootstrap", c.b_bootstrap},
      {"seed", c.seed},
      {"covariate_mean", c.covariate_mean},
      {"covariate_var", c.covariate_var},
      {"psi_shape", c.psi_shape},
      {"psi_scale", c.psi_scale},
      {"max_iterations", c.fit.max_iterations},
      {"rel_tolerance", c.fit.rel_tolerance},
  };
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize k = 0; k < in.gcount(); ++k) {
      hash ^= static_cast<unsigned char>(buf[k]);
      hash *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  return hex;
}

nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json j{
      {"command", m.command},
      {"config", m.config},
      {"version", m.version},
      {"started_at", m.started_at},
      {"finished_at", m.finished_at},
      {"wall_clock_seconds", m.wall_clock_seconds},
      {"threads", m.threads},
  };
  j["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
  j["input_digest_fnv1a64"] = m.input_digest ? nlohmann::json(*m.input_digest) : nlohmann::json(nullptr);
  return j;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace logsae
