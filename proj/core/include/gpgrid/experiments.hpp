#ifndef GPGRID_EXPERIMENTS_HPP
#define GPGRID_EXPERIMENTS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gpgrid/covariance.hpp"
#include "gpgrid/estimators.hpp"

namespace gpgrid {

enum class ExperimentKind { kEstimate, kAsymvar, kToeplitz, kEpsSweep, kMap, kJoint, kPredict, kNormality };

std::string_view to_string(ExperimentKind kind);
std::optional<ExperimentKind> experiment_from_string(std::string_view name);

enum class ExitCode : int { kOk = 0, kConfigError = 2, kNumericalFailure = 3, kBudgetExceeded = 4 };

/// Raw settings: key -> value text. Config files and flags both produce one.
using Settings = std::map<std::string, std::string>;

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
/// Throws std::invalid_argument naming the offending line.
Settings parse_settings(std::istream& is);
Settings load_settings(const std::string& path);

/// Keys accepted by settings_to_config, with their defaults ("" = unset).
const std::map<std::string, std::string>& default_settings();

struct ParamPoint {
  double ell = 1.0;
  double nu = 1.5;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kAsymvar;
  std::string family = "matern";  // matern | variance
  std::string free = "ell";       // ell | nu | both (matern), sigma2 (variance)
  std::vector<ParamPoint> points;
  double sigma2 = 1.0;
  std::vector<double> eps;
  std::vector<EstimatorKind> estimators;
  Eigen::Index n = 1024;
  int replicates = 32;
  std::uint64_t seed = 1;
  std::string out;
  int threads = 0;
  double delta = 0.02;
  std::string map_type = "local";     // local | global
  std::string predict_mode = "error";  // error | impact
  double ell_lo = 0.05;
  double ell_hi = 10.0;
  double nu_lo = 0.2;
  double nu_hi = 10.0;
  double sigma2_lo = 0.01;
  double sigma2_hi = 100.0;
  OptimizerBudget optimizer;
  int quad_nodes = 8;
  int spectral_grid = 8192;
  Eigen::Index asym_n = 1024;
  int asym_replicates = 16;
  double budget_minutes = 0.0;  // 0: unlimited
  Settings resolved;            // every key after defaults and overrides

  /// Model with the configured free parameters; other Matern parameters are
  /// fixed at the point's values.
  [[nodiscard]] std::unique_ptr<CovarianceModel> model_at(const ParamPoint& p) const;
  [[nodiscard]] Eigen::VectorXd theta_at(const ParamPoint& p) const;
  [[nodiscard]] ParamBox box() const;
};

struct CostEstimate {
  Eigen::Index largest_matrix = 0;
  std::int64_t cells = 0;
  std::int64_t factorizations = 0;
  double projected_seconds = 0.0;
};

struct Diagnostics {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  CostEstimate cost;
  [[nodiscard]] bool ok() const { return errors.empty(); }
};

/// Builds a config from settings. Problems are collected in `diag`; the
/// returned config is meaningful only if diag.ok().
ExperimentConfig settings_to_config(ExperimentKind kind, const Settings& settings, Diagnostics& diag);

/// Checks every constraint and fills the cost estimate. Never throws.
Diagnostics validate(const ExperimentConfig& config);

void print_diagnostics(std::ostream& os, const Diagnostics& diag);

struct RunResult {
  ExitCode code = ExitCode::kOk;
  std::string message;
  std::string csv_path;
  std::string json_path;
  std::size_t rows = 0;
  double wall_seconds = 0.0;
};

/// Runs a validated config: CSV to config.out (stdout for "-"), JSON sidecar
/// next to it. Cells run in a fixed order and every cell uses config.seed, so
/// the CSV body depends on the config only.
RunResult run(const ExperimentConfig& config, std::ostream& log);

/// The CSV body `run` would produce, without touching the filesystem.
std::string run_to_string(const ExperimentConfig& config);

/// Anderson-Darling statistic of a sample against N(0, 1).
double anderson_darling_normal(std::vector<double> z);

/// 1% critical value of the A^2 statistic for a fully specified null.
inline constexpr double kAndersonDarling1Pct = 3.857;

/// Replicated estimation at n points with the reference asymptotic variance.
/// Replicate r draws the design from derive_seed(seed, 2r) and y from
/// derive_seed(seed, 2r + 1). Requires p = 1.
struct NormalityStudy {
  EstimatorKind kind = EstimatorKind::kML;
  Eigen::Index n = 0;
  double epsilon = 0.0;
  Eigen::VectorXd theta0;
  std::uint64_t seed = 0;
  std::vector<double> theta_hat;  // converged replicates, in replicate order
  int excluded = 0;
  int boundary_hits = 0;
  double asym_var = 0.0;        // Sigma_ML^{-1} or the CV sandwich
  double empirical_var = 0.0;   // sample variance of sqrt(n) (theta_hat - theta0)
  double coverage90 = 0.0;      // share of theta0 inside the asymptotic 90% interval
  double ad_statistic = 0.0;    // of sqrt(n) (theta_hat - theta0) / sqrt(asym_var)
  [[nodiscard]] double variance_ratio() const { return empirical_var / asym_var; }
};

std::vector<NormalityStudy> normality_study(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                                            Eigen::Index n, double epsilon, int n_replicates, std::uint64_t seed,
                                            const std::vector<EstimatorKind>& kinds, const ParamBox& box,
                                            const OptimizerBudget& budget = {}, Eigen::Index asym_n = 1024,
                                            int asym_replicates = 16, int threads = 0);

}  // namespace gpgrid

#endif  // GPGRID_EXPERIMENTS_HPP
