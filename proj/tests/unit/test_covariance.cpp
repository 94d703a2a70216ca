#include <cfloat>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <gtest/gtest.h>

#include "gpgrid/covariance.hpp"
#include "gpgrid/design.hpp"
#include "gpgrid/gp.hpp"
#include "oracles.hpp"

using namespace gpgrid;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST(Matern, NuHalfIsExponential) {
  for (int i = 0; i < 100; ++i) {
    const double t = 0.07 * i;
    for (double ell : {0.3, 1.0, 2.7}) {
      EXPECT_NEAR(matern({ell, 0.5}, t), std::exp(-std::sqrt(2.0) * t / ell), 1e-10);
    }
  }
}

TEST(Matern, PrintedSpotValues) {
  EXPECT_NEAR(matern({0.73, 2.5}, 1.0), 0.15, 0.01);
  EXPECT_NEAR(matern({0.7, 2.5}, 1.0), 0.13, 0.01);
  EXPECT_NEAR(matern({0.5, 2.5}, 1.0), 0.037, 0.004);
  EXPECT_NEAR(matern_dnu({0.73, 2.5}, 1.0), -3.7e-5, 3.7e-6);
  EXPECT_NEAR(matern_dnu({0.7, 2.5}, 1.0), -1.3e-3, 1.3e-4);
  EXPECT_NEAR(matern_dnu({0.5, 2.5}, 1.0), -5e-3, 5e-4);
}

TEST(Matern, AgreesWithIntegralOracle) {
  for (double ell : {0.3, 1.0, 2.7}) {
    for (double nu : {0.3, 0.5, 1.5, 2.5, 5.0, 8.0}) {
      for (double t : {0.05, 0.5, 1.0, 2.0, 4.0}) {
        const double ref = oracle::matern_integral(ell, nu, t);
        if (ref < 1e-280) continue;
        EXPECT_LT(rel_err(matern({ell, nu}, t), ref), 1e-9) << ell << ' ' << nu << ' ' << t;
      }
    }
  }
}

TEST(Matern, UnitAtZeroAndDecreasing) {
  for (double nu : {0.5, 1.5, 4.0}) {
    const MaternParams p{1.2, nu};
    EXPECT_EQ(matern(p, 0.0), 1.0);
    double prev = 1.0;
    for (int i = 1; i < 60; ++i) {
      const double v = matern(p, 0.1 * i);
      EXPECT_LT(v, prev);
      EXPECT_GE(v, 0.0);
      prev = v;
    }
  }
}

TEST(Matern, FlushesSubnormalsToZero) {
  for (double t : {50.0, 200.0, 1000.0}) {
    const double v = matern({0.3, 0.5}, t);
    EXPECT_TRUE(v == 0.0 || v >= DBL_MIN) << v;
  }
}

TEST(Matern, EllDerivativeMatchesRichardson) {
  for (double nu : {0.5, 1.5, 2.5, 5.0}) {
    for (double t : {0.3, 1.0, 3.0}) {
      const double ell = 0.9;
      const double fd = oracle::richardson_derivative([&](double l) { return matern({l, nu}, t); }, ell, 1e-3);
      EXPECT_LT(std::abs(matern_dell({ell, nu}, t) - fd), 1e-9 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Matern, NuDerivativeMatchesOracleDifferences) {
  for (double nu : {0.7, 1.5, 2.5, 5.0}) {
    for (double t : {0.3, 1.0, 2.5}) {
      const double ell = 1.1;
      const double fd =
          oracle::richardson_derivative([&](double v) { return oracle::matern_integral(ell, v, t); }, nu, 1e-2);
      EXPECT_LT(std::abs(matern_dnu({ell, nu}, t) - fd), 1e-7 * std::max(1e-3, std::abs(fd))) << nu << ' ' << t;
    }
  }
}

TEST(Matern, LagDerivativesMatchRichardson) {
  for (const MaternParams p : {MaternParams{1.0, 1.5}, MaternParams{0.5, 5.0}, MaternParams{2.7, 1.0}}) {
    for (double t : {0.4, 1.0, 2.0, 3.0}) {
      const MaternLagDerivs d = matern_lag_derivs(p, t);
      const auto dk = [&](double ell, double nu, double s) { return matern_lag_derivs({ell, nu}, s).dk_dt; };
      const auto d2 = [&](double ell, double nu, double s) { return matern_lag_derivs({ell, nu}, s).d2k_dt2; };
      const double h = 1e-3;
      const double tol = 1e-6;
      const auto near = [&](double got, double want) {
        EXPECT_LT(std::abs(got - want), tol * std::max(1e-2, std::abs(want))) << p.ell << ' ' << p.nu << ' ' << t;
      };
      near(d.dk_dt, oracle::richardson_derivative([&](double s) { return matern(p, s); }, t, h));
      near(d.d2k_dt2, oracle::richardson_derivative([&](double s) { return dk(p.ell, p.nu, s); }, t, h));
      near(d.d2k_dt_dell, oracle::richardson_derivative([&](double l) { return dk(l, p.nu, t); }, p.ell, h));
      near(d.d2k_dt_dnu, oracle::richardson_derivative([&](double v) { return dk(p.ell, v, t); }, p.nu, 1e-2));
      near(d.d3k_dt2_dell, oracle::richardson_derivative([&](double l) { return d2(l, p.nu, t); }, p.ell, h));
      near(d.d3k_dt2_dnu, oracle::richardson_derivative([&](double v) { return d2(p.ell, v, t); }, p.nu, 1e-2));
    }
  }
  EXPECT_THROW(matern_lag_derivs({1.0, 1.5}, 0.0), std::domain_error);
}

TEST(MaternModel, PackUnpackAndNames) {
  const MaternModel e = MaternModel::ell_only(2.5);
  const MaternModel v = MaternModel::nu_only(0.7);
  const MaternModel j = MaternModel::joint();
  EXPECT_EQ(e.num_params(), 1u);
  EXPECT_EQ(j.num_params(), 2u);
  EXPECT_EQ(e.param_names(), std::vector<std::string>{"ell"});
  EXPECT_EQ(v.param_names(), std::vector<std::string>{"nu"});
  EXPECT_EQ(e.unpack(Eigen::VectorXd::Constant(1, 0.4)).nu, 2.5);
  EXPECT_EQ(v.unpack(Eigen::VectorXd::Constant(1, 3.0)).ell, 0.7);
  EXPECT_EQ(j.pack({0.3, 4.0}), Eigen::Vector2d(0.3, 4.0));
  EXPECT_THROW(j.validate(Eigen::Vector2d(1.0, -1.0)), std::invalid_argument);
  EXPECT_THROW(e.validate(Eigen::Vector2d(1.0, 1.0)), std::invalid_argument);
}

TEST(MaternModel, BatchMatchesScalarPath) {
  const MaternModel j = MaternModel::joint();
  const Eigen::Vector2d th(0.8, 2.2);
  std::vector<double> r = {0.0, 1e-9, 0.2, 1.0, 3.5, 30.0, 400.0};
  const std::size_t m = r.size();
  std::vector<double> k(m), g(2 * m), kv(m);
  j.evaluate_batch(th, r, k, g);
  j.evaluate_values(th, r, kv);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> gi(2);
    const double v = j.value_and_gradient(th, r[i], gi);
    EXPECT_DOUBLE_EQ(k[i], v);
    EXPECT_DOUBLE_EQ(kv[i], j.value(th, r[i]));
    EXPECT_NEAR(g[i], gi[0], 1e-14);
    EXPECT_NEAR(g[m + i], gi[1], 1e-14);
  }
}

TEST(MaternModel, GradientMatchesRichardson) {
  const MaternModel j = MaternModel::joint();
  const Eigen::Vector2d th(1.3, 1.7);
  for (double t : {0.5, 1.0, 2.5}) {
    std::vector<double> g(2);
    j.value_and_gradient(th, t, g);
    const Eigen::VectorXd fd =
        oracle::richardson_gradient([&](const Eigen::VectorXd& x) { return j.value(x, t); }, th, 1e-3);
    EXPECT_NEAR(g[0], fd[0], 1e-8);
    EXPECT_NEAR(g[1], fd[1], 1e-8);
  }
}

TEST(MaternModel, CorrelationMatricesArePositiveDefinite) {
  for (double eps : {0.0, 0.25, 0.45}) {
    const PerturbedDesign d = sample_design(120, 1, eps, 11);
    for (const MaternParams p : {MaternParams{0.3, 0.5}, MaternParams{1.0, 1.5}, MaternParams{2.7, 1.0}}) {
      const MaternModel model(MaternFree::kBoth, p);
      EXPECT_NO_THROW(build_cov_matrix(model, model.pack(p), d));
    }
  }
}

TEST(ScaledMatern, ValueAndGradient) {
  const ScaledMaternModel m({0.9, 1.5});
  const Eigen::VectorXd s2 = Eigen::VectorXd::Constant(1, 2.5);
  std::vector<double> g(1);
  for (double t : {0.0, 0.4, 2.0}) {
    const double base = matern({0.9, 1.5}, t);
    EXPECT_DOUBLE_EQ(m.value(s2, t), 2.5 * base);
    EXPECT_DOUBLE_EQ(m.value_and_gradient(s2, t, g), 2.5 * base);
    EXPECT_DOUBLE_EQ(g[0], base);
  }
  EXPECT_FALSE(m.unit_variance());
  EXPECT_THROW(m.validate(Eigen::VectorXd::Constant(1, 0.0)), std::invalid_argument);
}

TEST(ParamBoxTest, ContainsInteriorProject) {
  const ParamBox b(Eigen::Vector2d(0.1, 0.5), Eigen::Vector2d(5.0, 4.0));
  EXPECT_TRUE(b.contains(Eigen::Vector2d(0.1, 2.0)));
  EXPECT_FALSE(b.interior(Eigen::Vector2d(0.1, 2.0)));
  EXPECT_TRUE(b.interior(Eigen::Vector2d(1.0, 2.0)));
  EXPECT_FALSE(b.contains(Eigen::Vector2d(6.0, 2.0)));
  EXPECT_EQ(b.project(Eigen::Vector2d(6.0, 0.0)), Eigen::Vector2d(5.0, 0.5));
  EXPECT_THROW(ParamBox(Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(2.0, 1.0)), std::invalid_argument);
}
