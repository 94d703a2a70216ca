#ifndef GPGRID_PREDICTION_HPP
#define GPGRID_PREDICTION_HPP

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "gpgrid/covariance.hpp"
#include "gpgrid/design.hpp"
#include "gpgrid/estimators.hpp"

namespace gpgrid {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

GaussRule gauss_legendre(int order);

/// Composite rule on [0, n]: every unit cell is split at the design points it
/// contains and each piece gets a Gauss-Legendre rule, so the integrand is
/// smooth on every piece.
struct Quadrature {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

Quadrature prediction_quadrature(const PerturbedDesign& design, int nodes_per_cell = 8);

/// E[(Yhat_theta(t) - Y(t))^2 | X] under Y ~ GP(0, K_theta0) at each t:
/// K0(0) - 2 w' r0 + w' R0 w with w = R_theta^{-1} r_theta(t), which reduces
/// to 1 - r0' R0^{-1} r0 when theta = theta0. Requires d = 1.
Eigen::VectorXd pred_error_integrand(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& theta0, const PerturbedDesign& design,
                                     const Eigen::VectorXd& t);

/// (1/n) int_0^n E[(Yhat_theta(t) - Y(t))^2 | X] dt.
double expected_pred_error(const CovarianceModel& model, const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                           const PerturbedDesign& design, int nodes_per_cell = 8);

/// D_p(theta, theta0): exact difference of the expected mean squared LOO
/// errors of the predictors under theta and theta0, data from theta0.
double loo_mse_gap(const CovarianceModel& model, const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                   const PerturbedDesign& design);

/// One replicate of the estimation-impact study: the conditional integrated
/// errors given the design and the observations, with estimated and with
/// true parameters. Their difference is (1/n) int (Yhat_thetahat - Yhat_theta0)^2.
struct PredictionImpact {
  Eigen::VectorXd theta_hat;
  bool converged = false;
  double e_hat = 0.0;
  double e_true = 0.0;
  [[nodiscard]] double difference() const { return e_hat - e_true; }
};

PredictionImpact prediction_impact(const CovarianceModel& model, const Eigen::VectorXd& theta_hat,
                                   const Eigen::VectorXd& theta0, const PerturbedDesign& design,
                                   const Eigen::VectorXd& y, int nodes_per_cell = 8);

struct ImpactStudy {
  Eigen::Index n = 0;
  double epsilon = 0.0;
  EstimatorKind kind = EstimatorKind::kML;
  std::vector<PredictionImpact> replicates;  // in replicate order
  int excluded = 0;                          // non-converged estimates

  [[nodiscard]] double median_abs_difference() const;
  [[nodiscard]] double mean_e_true() const;
};

/// Replicate r: design seed derive_seed(seed, 2r), observation seed
/// derive_seed(seed, 2r + 1). Non-converged estimates are excluded and counted.
ImpactStudy estimation_impact_on_prediction(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                                            Eigen::Index n, double epsilon, EstimatorKind kind, const ParamBox& box,
                                            int n_replicates, std::uint64_t seed, const OptimizerBudget& budget = {},
                                            int threads = 0);

/// Mean of expected_pred_error at theta = theta0 over design replicates.
struct PredictionErrorReport {
  double epsilon = 0.0;
  Eigen::VectorXd theta0;
  Eigen::Index n = 0;
  int n_replicates = 0;
  std::uint64_t seed = 0;
  int nodes_per_cell = 8;
  double e_mean = 0.0;
  double e_stderr = 0.0;
};

PredictionErrorReport prediction_error_report(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                                              Eigen::Index n, double epsilon, int n_replicates, std::uint64_t seed,
                                              int nodes_per_cell = 8, int threads = 0);

/// CSV columns epsilon,ell0,nu0,n,E_mean,E_stderr,replicates,seed.
void write_prediction_csv_header(std::ostream& os);
void write_prediction_csv_row(std::ostream& os, const PredictionErrorReport& r, double ell0, double nu0);

}  // namespace gpgrid

#endif  // GPGRID_PREDICTION_HPP
