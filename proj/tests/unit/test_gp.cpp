#include <cmath>

#include <Eigen/LU>
#include <gtest/gtest.h>

#include "gpgrid/errors.hpp"
#include "gpgrid/gp.hpp"
#include "gpgrid/random.hpp"
#include "oracles.hpp"

using namespace gpgrid;

TEST(CovMatrixTest, InverseSolveAndLogDet) {
  const MaternModel m = MaternModel::joint();
  const PerturbedDesign d = sample_design(40, 1, 0.3, 4);
  const CovMatrix c = build_cov_matrix(m, Eigen::Vector2d(1.1, 1.5), d);
  const Eigen::MatrixXd inv = c.inverse();
  EXPECT_LT((inv * c.matrix() - Eigen::MatrixXd::Identity(40, 40)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_EQ(inv, inv.transpose());
  EXPECT_NEAR(c.log_det(), std::log(c.matrix().fullPivLu().determinant()), 1e-8);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(40, -1.0, 1.0);
  EXPECT_LT((c.matrix() * c.solve(b) - b).norm(), 1e-9);
}

TEST(CovMatrixTest, ReportsFailingPivotWithoutJitter) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Ones(3, 3);
  r(0, 0) = 2.0;
  try {
    CovMatrix c(r);
    FAIL() << "expected a factorization failure";
  } catch (const FactorizationError& e) {
    EXPECT_GE(e.pivot(), 1);
  }
  EXPECT_NO_THROW(CovMatrix(r, 0.5));
}

TEST(CovBundle, DerivativesMatchFiniteDifferences) {
  const MaternModel m = MaternModel::joint();
  const PerturbedDesign d = sample_design(12, 1, 0.4, 2);
  const Eigen::Vector2d th(0.9, 2.0);
  const CovBundle b = build_cov_bundle(m, th, d);
  ASSERT_EQ(b.dr.size(), 2u);
  for (int k = 0; k < 2; ++k) {
    const double h = 1e-5;
    Eigen::Vector2d up = th, dn = th;
    up[k] += h;
    dn[k] -= h;
    const Eigen::MatrixXd fd =
        (build_cov_matrix(m, up, d).matrix() - build_cov_matrix(m, dn, d).matrix()) / (2.0 * h);
    EXPECT_LT((fd - b.dr[k]).cwiseAbs().maxCoeff(), 1e-7);
  }
  EXPECT_EQ(b.r, build_cov_matrix(m, th, d).matrix());
}

TEST(PairwiseDistances, SymmetricWithZeroDiagonal) {
  const PerturbedDesign d = sample_design(16, 2, 0.2, 3);
  const Eigen::MatrixXd dist = pairwise_distances(d);
  EXPECT_EQ(dist, dist.transpose());
  EXPECT_EQ(dist.diagonal().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(dist(0, 5), (d.points.row(0) - d.points.row(5)).norm(), 1e-15);
}

TEST(VirtualLoo, EqualsBruteForceLoo) {
  Rng rng(7);
  const MaternModel m = MaternModel::joint();
  int instance = 0;
  for (double eps : {0.0, 0.45}) {
    for (int k = 0; k < 50; ++k, ++instance) {
      const int n = 5 + static_cast<int>(rng.uniform() * 26.0);
      const Eigen::Vector2d th(rng.uniform(0.2, 2.0), rng.uniform(0.5, 3.0));
      const GpDataset data = simulate_dataset(m, th, sample_design(n, 1, eps, derive_seed(1, instance)),
                                              derive_seed(2, instance));
      const LooResult v = virtual_loo(m, th, data);
      const oracle::BruteLoo b = oracle::brute_force_loo(m, th, data);
      EXPECT_LT((v.mean - b.mean).norm() / b.mean.norm(), 1e-8) << "instance " << instance;
      EXPECT_LT((v.variance - b.variance).norm() / b.variance.norm(), 1e-8) << "instance " << instance;
      EXPECT_LT((v.error - (data.y - b.mean)).norm() / v.error.norm(), 1e-8);
    }
  }
}

TEST(Kriging, InterpolatesAndMatchesExplicitFormula) {
  const MaternModel m = MaternModel::ell_only(1.5);
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 1.2);
  const GpDataset data = simulate_dataset(m, th, sample_design(25, 1, 0.3, 1), 2);
  const KrigingPredictor pred(m, th, data.design, data.y);
  for (Eigen::Index i = 0; i < 25; i += 6) {
    const double x = data.design.points(i, 0);
    const KrigingPrediction p = pred.predict(std::span<const double>(&x, 1));
    EXPECT_NEAR(p.mean, data.y[i], 1e-8);
    EXPECT_NEAR(p.variance, 0.0, 1e-8);
  }
  PointMatrix loc(3, 1);
  loc << 0.5, 7.3, 30.0;
  Eigen::VectorXd mean, var;
  pred.predict(loc, mean, var);
  const CovMatrix c = build_cov_matrix(m, th, data.design);
  const Eigen::MatrixXd r0 = cross_covariance(m, th, data.design, loc);
  for (int j = 0; j < 3; ++j) {
    const Eigen::VectorXd w = c.solve(Eigen::VectorXd(r0.col(j)));
    EXPECT_NEAR(mean[j], w.dot(data.y), 1e-10);
    EXPECT_NEAR(var[j], 1.0 - w.dot(r0.col(j)), 1e-10);
    const double x = loc(j, 0);
    EXPECT_NEAR(krig_predict(m, th, data, std::span<const double>(&x, 1)).mean, mean[j], 1e-12);
  }
  EXPECT_NEAR(var[2], 1.0, 1e-6);
}

TEST(Simulation, DeterministicWithCorrectCovariance) {
  const MaternModel m = MaternModel::ell_only(2.5);
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 0.8);
  const PerturbedDesign d = sample_design(4, 1, 0.2, 1);
  const CovMatrix c = build_cov_matrix(m, th, d);
  EXPECT_EQ(simulate_gp(c, 5), simulate_gp(c, 5));
  EXPECT_NE(simulate_gp(c, 5), simulate_gp(c, 6));
  const int draws = 40000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(4, 4);
  for (int s = 0; s < draws; ++s) {
    const Eigen::VectorXd y = simulate_gp(c, derive_seed(9, s));
    acc += y * y.transpose();
  }
  acc /= draws;
  // Entry (i, j) has variance (R_ii R_jj + R_ij^2) / draws <= 2 / draws.
  EXPECT_LT((acc - c.matrix()).cwiseAbs().maxCoeff(), 5.0 * std::sqrt(2.0 / draws));
}
