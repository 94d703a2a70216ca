#ifndef GPGRID_ASYMPTOTICS_HPP
#define GPGRID_ASYMPTOTICS_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "gpgrid/covariance.hpp"
#include "gpgrid/design.hpp"

namespace gpgrid {

enum class TraceKind { kML, kCV1, kCV2 };

std::string_view to_string(TraceKind kind);

/// The three normalized random traces at one design, all from one
/// (R^{-1}, dR/dtheta_k) bundle:
///   ml  = (1/n) Tr(1/2 R^{-1} dR_i R^{-1} dR_j)
///   cv1 = (1/n) Tr(2 {M^i + M^i'} R {M^j + M^j'} R)
///   cv2 = (1/n) Tr(M_CV2^{i,j})
/// cv1 equals cov(sqrt(n) dCV/dtheta_i, sqrt(n) dCV/dtheta_j | X) and cv2
/// equals E(d2 CV / dtheta_i dtheta_j | X).
struct TraceSet {
  Eigen::MatrixXd ml;
  Eigen::MatrixXd cv1;
  Eigen::MatrixXd cv2;
  double loo_variance = 0.0;  // (1/n) sum 1 / (R^{-1})_ii, with the CV traces
};

TraceSet compute_traces(const CovarianceModel& model, const Eigen::VectorXd& theta0, const PerturbedDesign& design,
                        bool include_cv = true);

Eigen::MatrixXd trace_ml(const CovarianceModel& model, const Eigen::VectorXd& theta0, const PerturbedDesign& design);
Eigen::MatrixXd trace_cv1(const CovarianceModel& model, const Eigen::VectorXd& theta0, const PerturbedDesign& design);
Eigen::MatrixXd trace_cv2(const CovarianceModel& model, const Eigen::VectorXd& theta0, const PerturbedDesign& design);

/// Monte Carlo mean of one trace kind over design replicates.
struct TraceEstimate {
  TraceKind kind = TraceKind::kML;
  Eigen::MatrixXd value;
  Eigen::MatrixXd std_error;
  Eigen::Index n = 0;
  int n_replicates = 0;
  double epsilon = 0.0;
  Eigen::VectorXd theta0;
};

/// Scalar summaries of an asymptotic covariance matrix. For p = 2 (ell, nu)
/// v = (V_ell, V_nu), c = C_{ell,nu} and d = V_ell V_nu - C^2; for p = 1 only
/// v(0) is meaningful and d equals it.
struct CovCriteria {
  Eigen::VectorXd v;
  double c = 0.0;
  double d = 0.0;
};

CovCriteria criteria_of(const Eigen::MatrixXd& asym_cov);

struct ReportOptions {
  bool include_cv = true;
  bool mirrored = false;  // use -X_i in every replicate
  int threads = 0;
};

struct AsymptoticReport {
  std::string model;
  std::vector<std::string> param_names;
  Eigen::VectorXd theta0;
  double epsilon = 0.0;
  Eigen::Index n = 0;
  int n_replicates = 0;
  std::uint64_t seed = 0;
  bool has_cv = false;

  TraceEstimate sigma_ml;
  TraceEstimate sigma_cv1;
  TraceEstimate sigma_cv2;
  Eigen::MatrixXd asym_cov_ml;  // Sigma_ML^{-1}
  Eigen::MatrixXd asym_cov_cv;  // Sigma_CV2^{-1} Sigma_CV1 Sigma_CV2^{-1}
  CovCriteria ml;
  CovCriteria cv;
};

/// Replicate r uses the design stream derive_seed(seed, r). Throws
/// NumericalError when Sigma_ML or Sigma_CV2 is numerically singular
/// (condition number above 1e12), which signals an unidentifiable
/// parameterization.
AsymptoticReport asym_report(const CovarianceModel& model, const Eigen::VectorXd& theta0, double epsilon,
                             Eigen::Index n, int n_replicates, std::uint64_t seed, const ReportOptions& options = {});

/// Design used for replicate `replicate` of asym_report (d = 1).
PerturbedDesign replicate_design(Eigen::Index n, double epsilon, std::uint64_t seed, int replicate,
                                 bool mirror = false);

/// Sigma^{-1}, or the sandwich A^{-1} B A^{-1}, with the singularity check.
/// With reference > 0 the sandwich also requires the smallest eigenvalue of
/// A to exceed 1e-10 * reference, the scale of a CV Hessian (mean LOO
/// variance times |Sigma_ML|).
Eigen::MatrixXd inverse_checked(const Eigen::MatrixXd& sigma, std::string_view what);
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& s2, const Eigen::MatrixXd& s1, double reference = 0.0);

/// Second derivative in epsilon of the averaged traces, by the central
/// difference [S(eps + delta) - 2 S(eps) + S(eps - delta)] / delta^2 with
/// common random numbers. S(eps - delta) for eps < delta is evaluated on the
/// mirrored design (X -> -X), which has the law of the design at
/// delta - eps with the same draws.
struct EpsCurvature {
  double epsilon = 0.0;
  double delta = 0.0;
  Eigen::Index n = 0;
  int n_replicates = 0;
  Eigen::VectorXd theta0;

  Eigen::MatrixXd sigma_ml;      // S(eps)
  Eigen::MatrixXd d2_sigma_ml;   // d2 S / d eps2
  Eigen::MatrixXd d2_sigma_ml_se;
  /// Second derivative of the asymptotic variance divided by the variance,
  /// per parameter (diagonal of the asymptotic covariance).
  Eigen::VectorXd var_ratio_ml;
  Eigen::VectorXd var_ratio_ml_se;
  bool has_cv = false;
  Eigen::VectorXd var_ratio_cv;
  Eigen::VectorXd var_ratio_cv_se;
};

EpsCurvature eps_second_derivative(const CovarianceModel& model, const Eigen::VectorXd& theta0, Eigen::Index n,
                                   int n_replicates, std::uint64_t seed, double delta = 0.02, double epsilon = 0.0,
                                   const ReportOptions& options = {});

void write_report_json(std::ostream& os, const AsymptoticReport& report);
void write_curvature_json(std::ostream& os, const EpsCurvature& curvature);

/// Flat CSV: header of write_report_csv_header, then one row per report.
void write_report_csv_header(std::ostream& os, std::size_t num_params);
void write_report_csv_row(std::ostream& os, const AsymptoticReport& report);

}  // namespace gpgrid

#endif  // GPGRID_ASYMPTOTICS_HPP
