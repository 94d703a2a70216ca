#ifndef GPGRID_GP_HPP
#define GPGRID_GP_HPP

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "gpgrid/covariance.hpp"
#include "gpgrid/design.hpp"

namespace gpgrid {

/// Factorized covariance matrix R_theta. Immutable after construction.
class CovMatrix {
 public:
  /// Factorizes `r` (adding `nugget` to the diagonal first). Throws
  /// FactorizationError with the first failing pivot; never jitters.
  explicit CovMatrix(Eigen::MatrixXd r, double nugget = 0.0);

  [[nodiscard]] Eigen::Index size() const { return matrix_.rows(); }
  [[nodiscard]] const Eigen::MatrixXd& matrix() const { return matrix_; }
  [[nodiscard]] const Eigen::LLT<Eigen::MatrixXd>& llt() const { return llt_; }

  [[nodiscard]] Eigen::MatrixXd lower() const { return llt_.matrixL(); }
  [[nodiscard]] double log_det() const;
  [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }
  [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt_.solve(b); }
  /// Explicit inverse (symmetric). Formed on demand; callers keep the copy.
  [[nodiscard]] Eigen::MatrixXd inverse() const;

 private:
  Eigen::MatrixXd matrix_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// R_theta and its parameter derivatives dR/dtheta_k, assembled in one pass.
struct CovBundle {
  Eigen::MatrixXd r;
  std::vector<Eigen::MatrixXd> dr;
};

/// Dense n x n matrix of pairwise Euclidean distances between design points.
Eigen::MatrixXd pairwise_distances(const PerturbedDesign& design);

CovMatrix build_cov_matrix(const CovarianceModel& model, const Eigen::VectorXd& theta,
                           const PerturbedDesign& design, double nugget = 0.0);

CovBundle build_cov_bundle(const CovarianceModel& model, const Eigen::VectorXd& theta,
                           const PerturbedDesign& design);

/// Covariances between design points and arbitrary locations (one per row
/// of `locations`); result is n x m.
Eigen::MatrixXd cross_covariance(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                 const PerturbedDesign& design, const PointMatrix& locations);

/// Exact draw y = L z with z iid N(0, 1) from the stream `seed`.
Eigen::VectorXd simulate_gp(const CovMatrix& cov, std::uint64_t seed);

struct GpDataset {
  PerturbedDesign design;
  Eigen::VectorXd y;
  Eigen::VectorXd theta0;
  std::uint64_t seed = 0;

  [[nodiscard]] Eigen::Index size() const { return y.size(); }
};

GpDataset simulate_dataset(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                           PerturbedDesign design, std::uint64_t seed);

struct KrigingPrediction {
  double mean;
  double variance;
};

/// Simple-Kriging predictor with a fixed factorization.
class KrigingPredictor {
 public:
  KrigingPredictor(const CovarianceModel& model, Eigen::VectorXd theta, const PerturbedDesign& design,
                   const Eigen::VectorXd& y);

  [[nodiscard]] KrigingPrediction predict(std::span<const double> location) const;

  /// Means and variances at many locations (rows of `locations`).
  void predict(const PointMatrix& locations, Eigen::VectorXd& mean, Eigen::VectorXd& variance) const;

 private:
  const CovarianceModel& model_;
  Eigen::VectorXd theta_;
  PointMatrix points_;
  CovMatrix cov_;
  Eigen::VectorXd alpha_;  // R^{-1} y
  double k0_;
};

KrigingPrediction krig_predict(const CovarianceModel& model, const Eigen::VectorXd& theta,
                               const GpDataset& data, std::span<const double> location);

/// Leave-one-out quantities from the virtual LOO identities.
struct LooResult {
  Eigen::VectorXd mean;      // y_hat_{i,theta}(y_{-i})
  Eigen::VectorXd variance;  // c^2_{i,-i,theta} = 1 / (R^{-1})_{ii}
  Eigen::VectorXd error;     // y_i - mean_i = (R^{-1} y)_i / (R^{-1})_{ii}
};

LooResult virtual_loo(const CovarianceModel& model, const Eigen::VectorXd& theta, const GpDataset& data);

}  // namespace gpgrid

#endif  // GPGRID_GP_HPP
