#include <cmath>

#include <gtest/gtest.h>

#include "gpgrid/estimators.hpp"
#include "gpgrid/gp.hpp"
#include "gpgrid/random.hpp"
#include "oracles.hpp"

using namespace gpgrid;

namespace {

GpDataset dataset(const CovarianceModel& m, const Eigen::VectorXd& th, int n, double eps, std::uint64_t s) {
  return simulate_dataset(m, th, sample_design(n, 1, eps, derive_seed(s, 0)), derive_seed(s, 1));
}

}  // namespace

TEST(EstimatorKindNames, RoundTrip) {
  EXPECT_EQ(estimator_from_string(to_string(EstimatorKind::kML)), EstimatorKind::kML);
  EXPECT_EQ(estimator_from_string(to_string(EstimatorKind::kCV)), EstimatorKind::kCV);
  EXPECT_THROW(estimator_from_string("reml"), std::invalid_argument);
}

TEST(NegLogLikelihood, MatchesDirectFormula) {
  const MaternModel m = MaternModel::joint();
  const Eigen::Vector2d th(0.8, 1.9);
  const GpDataset data = dataset(m, th, 30, 0.2, 3);
  const CovMatrix c = build_cov_matrix(m, th, data.design);
  const double direct = (c.log_det() + data.y.dot(c.solve(data.y))) / 30.0;
  EXPECT_NEAR(neg_log_likelihood(m, th, data).value, direct, 1e-12);
  EXPECT_EQ(evaluate_objective(EstimatorKind::kML, m, th, data).value, neg_log_likelihood(m, th, data).value);
}

TEST(CvCriterion, EqualsMeanSquaredBruteForceLooError) {
  const MaternModel m = MaternModel::joint();
  for (double eps : {0.0, 0.45}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Eigen::Vector2d th(0.5 + 0.1 * s, 0.8 + 0.2 * s);
      const GpDataset data = dataset(m, th, 12 + static_cast<int>(s), eps, s);
      const oracle::BruteLoo b = oracle::brute_force_loo(m, th, data);
      const double mse = (data.y - b.mean).squaredNorm() / data.size();
      EXPECT_NEAR(cv_criterion(m, th, data).value, mse, 1e-12 * std::max(1.0, mse));
    }
  }
}

TEST(Gradients, LikelihoodMatchesRichardson) {
  Rng rng(12);
  const MaternModel m = MaternModel::joint();
  for (int k = 0; k < 20; ++k) {
    const Eigen::Vector2d th(rng.uniform(0.3, 2.0), rng.uniform(0.5, 3.0));
    const GpDataset data = dataset(m, th, 20, rng.uniform(0.0, 0.45), 100 + k);
    const Eigen::Vector2d at(th[0] * rng.uniform(0.8, 1.2), th[1] * rng.uniform(0.8, 1.2));
    const Eigen::VectorXd g = neg_log_likelihood(m, at, data).gradient;
    const Eigen::VectorXd fd = oracle::richardson_gradient(
        [&](const Eigen::VectorXd& x) { return neg_log_likelihood(m, x, data).value; }, at, 1e-3);
    EXPECT_LT((g - fd).norm() / fd.norm(), 1e-5) << k;
  }
}

TEST(Gradients, CvMatchesRichardson) {
  Rng rng(13);
  const MaternModel m = MaternModel::joint();
  for (int k = 0; k < 20; ++k) {
    const Eigen::Vector2d th(rng.uniform(0.3, 2.0), rng.uniform(0.5, 3.0));
    const GpDataset data = dataset(m, th, 20, rng.uniform(0.0, 0.45), 200 + k);
    const Eigen::Vector2d at(th[0] * rng.uniform(0.8, 1.2), th[1] * rng.uniform(0.8, 1.2));
    const Eigen::VectorXd g = cv_criterion(m, at, data).gradient;
    const Eigen::VectorXd fd = oracle::richardson_gradient(
        [&](const Eigen::VectorXd& x) { return cv_criterion(m, x, data).value; }, at, 1e-3);
    EXPECT_LT((g - fd).norm() / fd.norm(), 1e-5) << k;
  }
}

TEST(Gradients, VarianceFamily) {
  const ScaledMaternModel m({1.0, 1.5});
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 1.7);
  const GpDataset data = dataset(m, th, 25, 0.3, 5);
  for (EstimatorKind k : {EstimatorKind::kML, EstimatorKind::kCV}) {
    const Eigen::VectorXd g = evaluate_objective(k, m, th, data).gradient;
    const Eigen::VectorXd fd = oracle::richardson_gradient(
        [&](const Eigen::VectorXd& x) { return evaluate_objective(k, m, x, data).value; }, th, 1e-3);
    EXPECT_NEAR(g[0], fd[0], 1e-7 * std::max(1.0, std::abs(fd[0])));
  }
}

TEST(Multistart, HaltonPointsInsideBox) {
  const ParamBox box(Eigen::Vector2d(0.1, 0.5), Eigen::Vector2d(3.0, 5.0));
  const auto pts = multistart_points(box, 8);
  ASSERT_EQ(pts.size(), 8u);
  EXPECT_NEAR(pts[0][0], 0.1 + 0.5 * 2.9, 1e-15);
  EXPECT_NEAR(pts[0][1], 0.5 + 4.5 / 3.0, 1e-15);
  for (const auto& p : pts) EXPECT_TRUE(box.interior(p));
}

TEST(Estimate, RecoversCorrelationLength) {
  const MaternModel m = MaternModel::ell_only(1.5);
  const ParamBox box(Eigen::VectorXd::Constant(1, 0.05), Eigen::VectorXd::Constant(1, 10.0));
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 1.0);
  const GpDataset data = dataset(m, th, 300, 0.25, 77);
  for (EstimatorKind k : {EstimatorKind::kML, EstimatorKind::kCV}) {
    const EstimateResult r = estimate(m, data, k, box);
    EXPECT_TRUE(r.converged);
    EXPECT_FALSE(r.boundary_hit);
    EXPECT_NEAR(r.theta_hat[0], 1.0, 0.25);
    EXPECT_GT(r.evaluations, 0);
    // The optimum is a stationary point of the objective.
    EXPECT_LT(std::abs(evaluate_objective(k, m, r.theta_hat, data).gradient[0]), 1e-5);
    EXPECT_LE(r.objective_at_opt, evaluate_objective(k, m, th, data).value + 1e-15);
  }
}

TEST(Estimate, DeterministicAndJoint) {
  const MaternModel m = MaternModel::joint();
  const ParamBox box(Eigen::Vector2d(0.05, 0.2), Eigen::Vector2d(10.0, 10.0));
  const GpDataset data = dataset(m, Eigen::Vector2d(0.8, 1.5), 120, 0.3, 8);
  const EstimateResult a = estimate(m, data, EstimatorKind::kML, box);
  const EstimateResult b = estimate(m, data, EstimatorKind::kML, box);
  EXPECT_EQ(a.theta_hat, b.theta_hat);
  EXPECT_EQ(a.evaluations, b.evaluations);
  EXPECT_TRUE(box.contains(a.theta_hat));
}

TEST(Estimate, FlagsBoundaryOptimum) {
  const MaternModel m = MaternModel::ell_only(1.5);
  const GpDataset data = dataset(m, Eigen::VectorXd::Constant(1, 3.0), 80, 0.0, 9);
  const ParamBox box(Eigen::VectorXd::Constant(1, 0.1), Eigen::VectorXd::Constant(1, 0.5));
  const EstimateResult r = estimate(m, data, EstimatorKind::kML, box);
  EXPECT_TRUE(r.boundary_hit);
  EXPECT_NEAR(r.theta_hat[0], 0.5, 1e-6);
}

TEST(Estimate, RejectsMismatchedBox) {
  const MaternModel m = MaternModel::ell_only(1.5);
  const GpDataset data = dataset(m, Eigen::VectorXd::Constant(1, 1.0), 10, 0.0, 1);
  const ParamBox box(Eigen::Vector2d(0.1, 0.1), Eigen::Vector2d(1.0, 1.0));
  EXPECT_THROW(estimate(m, data, EstimatorKind::kML, box), std::invalid_argument);
}

TEST(CvVariance, MeanStandardizedSquaredLooError) {
  const MaternModel m = MaternModel::ell_only(2.5);
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(1, 0.9);
  const GpDataset data = dataset(m, th, 200, 0.2, 4);
  const LooResult loo = virtual_loo(m, th, data);
  const double ref = (loo.error.array().square() / loo.variance.array()).mean();
  EXPECT_NEAR(cv_variance(m, th, data), ref, 1e-12);
  EXPECT_NEAR(ref, 1.0, 0.3);
}
