#include "gpgrid/gp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gpgrid/errors.hpp"
#include "gpgrid/fpenv.hpp"
#include "gpgrid/random.hpp"

namespace gpgrid {
namespace {

// First non-positive pivot of an unblocked Cholesky; only used to report a
// failure Eigen has already detected.
long failing_pivot(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) return static_cast<long>(j);
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return -1;
}

double distance(const PointMatrix& p, Eigen::Index i, Eigen::Index j) {
  return (p.row(i) - p.row(j)).norm();
}

}  // namespace

CovMatrix::CovMatrix(Eigen::MatrixXd r, double nugget) : matrix_(std::move(r)) {
  const DenormalGuard guard;
  if (matrix_.rows() != matrix_.cols()) throw std::invalid_argument("CovMatrix: matrix must be square");
  if (nugget != 0.0) matrix_.diagonal().array() += nugget;
  llt_.compute(matrix_);
  if (llt_.info() != Eigen::Success) {
    const long pivot = failing_pivot(matrix_);
    std::ostringstream os;
    os << "Cholesky factorization failed at pivot " << pivot << " of " << matrix_.rows()
       << " (covariance matrix not numerically positive definite)";
    throw FactorizationError(os.str(), pivot);
  }
}

double CovMatrix::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Eigen::MatrixXd CovMatrix::inverse() const {
  const DenormalGuard guard;
  const Eigen::Index n = size();
  // R^{-1} = L^{-T} L^{-1}, filled from the lower triangle so it is exactly symmetric.
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n, n);
  llt_.matrixL().solveInPlace(w);
  Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(n, n);
  inv.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose());
  inv.triangularView<Eigen::StrictlyUpper>() = inv.transpose();
  return inv;
}

Eigen::MatrixXd pairwise_distances(const PerturbedDesign& design) {
  const Eigen::Index n = design.size();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    d(j, j) = 0.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      d(i, j) = d(j, i) = distance(design.points, i, j);
    }
  }
  return d;
}

CovMatrix build_cov_matrix(const CovarianceModel& model, const Eigen::VectorXd& theta,
                           const PerturbedDesign& design, double nugget) {
  CovBundle b = build_cov_bundle(model, theta, design);
  return CovMatrix(std::move(b.r), nugget);
}

CovBundle build_cov_bundle(const CovarianceModel& model, const Eigen::VectorXd& theta,
                           const PerturbedDesign& design) {
  model.validate(theta);
  const Eigen::Index n = design.size();
  const std::size_t p = model.num_params();
  CovBundle b;
  b.r.resize(n, n);
  b.dr.assign(p, Eigen::MatrixXd(n, n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  std::vector<double> k(static_cast<std::size_t>(n));
  std::vector<double> grad(p * static_cast<std::size_t>(n));
  // Column j of the lower triangle, rows j..n-1, in one batch.
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto m = static_cast<std::size_t>(n - j);
    for (Eigen::Index i = j; i < n; ++i) dist[static_cast<std::size_t>(i - j)] = distance(design.points, i, j);
    model.evaluate_batch(theta, std::span<const double>(dist.data(), m), std::span<double>(k.data(), m),
                         std::span<double>(grad.data(), p * m));
    for (Eigen::Index i = j; i < n; ++i) {
      const auto c = static_cast<std::size_t>(i - j);
      b.r(i, j) = b.r(j, i) = k[c];
      for (std::size_t q = 0; q < p; ++q) b.dr[q](i, j) = b.dr[q](j, i) = grad[q * m + c];
    }
  }
  return b;
}

Eigen::MatrixXd cross_covariance(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                 const PerturbedDesign& design, const PointMatrix& locations) {
  if (locations.cols() != design.dim) throw std::invalid_argument("cross_covariance: dimension mismatch");
  model.validate(theta);
  const Eigen::Index n = design.size();
  Eigen::MatrixXd out(n, locations.rows());
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index m = 0; m < locations.rows(); ++m) {
    for (Eigen::Index i = 0; i < n; ++i) {
      dist[static_cast<std::size_t>(i)] = (design.points.row(i) - locations.row(m)).norm();
    }
    model.evaluate_values(theta, dist, std::span<double>(out.col(m).data(), static_cast<std::size_t>(n)));
  }
  return out;
}

Eigen::VectorXd simulate_gp(const CovMatrix& cov, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd z(cov.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return cov.llt().matrixL() * z;
}

GpDataset simulate_dataset(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                           PerturbedDesign design, std::uint64_t seed) {
  const CovMatrix cov = build_cov_matrix(model, theta0, design);
  GpDataset data;
  data.y = simulate_gp(cov, seed);
  data.design = std::move(design);
  data.theta0 = theta0;
  data.seed = seed;
  return data;
}

KrigingPredictor::KrigingPredictor(const CovarianceModel& model, Eigen::VectorXd theta,
                                   const PerturbedDesign& design, const Eigen::VectorXd& y)
    : model_(model),
      theta_(std::move(theta)),
      points_(design.points),
      cov_(build_cov_matrix(model, theta_, design)),
      alpha_(cov_.solve(y)),
      k0_(model.value(theta_, 0.0)) {}

KrigingPrediction KrigingPredictor::predict(std::span<const double> location) const {
  if (static_cast<Eigen::Index>(location.size()) != points_.cols()) {
    throw std::invalid_argument("krig_predict: location dimension mismatch");
  }
  const Eigen::Map<const Eigen::RowVectorXd> t(location.data(), static_cast<Eigen::Index>(location.size()));
  Eigen::VectorXd r(points_.rows());
  for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = model_.value(theta_, (points_.row(i) - t).norm());
  const Eigen::VectorXd w = cov_.llt().matrixL().solve(r);
  return {r.dot(alpha_), std::max(0.0, k0_ - w.squaredNorm())};
}

void KrigingPredictor::predict(const PointMatrix& locations, Eigen::VectorXd& mean,
                               Eigen::VectorXd& variance) const {
  const DenormalGuard guard;
  Eigen::MatrixXd r(points_.rows(), locations.rows());
  std::vector<double> dist(static_cast<std::size_t>(points_.rows()));
  for (Eigen::Index m = 0; m < locations.rows(); ++m) {
    for (Eigen::Index i = 0; i < points_.rows(); ++i) {
      dist[static_cast<std::size_t>(i)] = (points_.row(i) - locations.row(m)).norm();
    }
    model_.evaluate_values(theta_, dist, std::span<double>(r.col(m).data(), dist.size()));
  }
  mean = r.transpose() * alpha_;
  cov_.llt().matrixL().solveInPlace(r);
  variance = (k0_ - r.colwise().squaredNorm().array()).max(0.0).matrix().transpose();
}

KrigingPrediction krig_predict(const CovarianceModel& model, const Eigen::VectorXd& theta,
                               const GpDataset& data, std::span<const double> location) {
  return KrigingPredictor(model, theta, data.design, data.y).predict(location);
}

LooResult virtual_loo(const CovarianceModel& model, const Eigen::VectorXd& theta, const GpDataset& data) {
  if (data.size() < 2) throw std::invalid_argument("virtual_loo: need at least two observations");
  const CovMatrix cov = build_cov_matrix(model, theta, data.design);
  const Eigen::MatrixXd q = cov.inverse();
  const Eigen::VectorXd alpha = q * data.y;
  const Eigen::ArrayXd d = q.diagonal().array();
  LooResult out;
  out.error = (alpha.array() / d).matrix();
  out.mean = data.y - out.error;
  out.variance = d.inverse().matrix();
  return out;
}

}  // namespace gpgrid
