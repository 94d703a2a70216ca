#ifndef GPGRID_ESTIMATORS_HPP
#define GPGRID_ESTIMATORS_HPP

#include <string_view>

#include <Eigen/Core>

#include "gpgrid/covariance.hpp"
#include "gpgrid/gp.hpp"

namespace gpgrid {

enum class EstimatorKind { kML, kCV };

std::string_view to_string(EstimatorKind kind);
EstimatorKind estimator_from_string(std::string_view name);

struct ObjectiveEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::VectorXd theta;
  EstimatorKind kind = EstimatorKind::kML;
};

/// L_theta = (1/n) { log det R_theta + y^T R_theta^{-1} y } and its gradient
/// (1/n) { Tr(R^{-1} dR_k) - y^T R^{-1} dR_k R^{-1} y }.
ObjectiveEval neg_log_likelihood(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                 const GpDataset& data);

/// CV_theta = (1/n) y^T R^{-1} diag(R^{-1})^{-2} R^{-1} y, the mean squared
/// virtual-LOO error, with gradient (2/n) y^T M^k y where
/// M^k = R^{-1} diag(R^{-1})^{-2} { diag(R^{-1} dR_k R^{-1}) diag(R^{-1})^{-1} - R^{-1} dR_k } R^{-1}.
ObjectiveEval cv_criterion(const CovarianceModel& model, const Eigen::VectorXd& theta, const GpDataset& data);

ObjectiveEval evaluate_objective(EstimatorKind kind, const CovarianceModel& model, const Eigen::VectorXd& theta,
                                 const GpDataset& data);

/// Optimizer settings. Multistart points are the first `starts` points of a
/// Halton sequence mapped into the box.
struct OptimizerBudget {
  int starts = 8;
  int max_iterations = 200;
  double gradient_tolerance = 1e-7;
  double step_tolerance = 1e-10;
};

struct EstimateResult {
  Eigen::VectorXd theta_hat;
  double objective_at_opt = 0.0;
  int n_restarts_used = 0;
  int evaluations = 0;
  bool converged = false;
  bool boundary_hit = false;
  EstimatorKind kind = EstimatorKind::kML;
};

/// Box-constrained multistart quasi-Newton minimization of L_theta or
/// CV_theta. The best local optimum wins; exact ties go to the
/// lexicographically smallest theta. Non-convergence is reported in the
/// result, never thrown.
EstimateResult estimate(const CovarianceModel& model, const GpDataset& data, EstimatorKind kind,
                        const ParamBox& box, const OptimizerBudget& budget = {});

/// Multistart points used by `estimate`, in order.
std::vector<Eigen::VectorXd> multistart_points(const ParamBox& box, int count);

/// Second step of the CV procedure: sigma^2_CV = (1/n) sum_i (y_i - yhat_i)^2 / c^2_i
/// at fixed correlation parameters.
double cv_variance(const CovarianceModel& model, const Eigen::VectorXd& theta, const GpDataset& data);

}  // namespace gpgrid

#endif  // GPGRID_ESTIMATORS_HPP
