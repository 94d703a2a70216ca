#include "gpgrid/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "gpgrid/errors.hpp"
#include "gpgrid/fpenv.hpp"
#include "gpgrid/gp.hpp"
#include "gpgrid/parallel.hpp"
#include "gpgrid/random.hpp"

namespace gpgrid {

GaussRule gauss_legendre(int order) {
  if (order < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
  GaussRule g;
  g.nodes.resize(order);
  g.weights.resize(order);
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = 0.0;
      for (int k = 1; k <= order; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p2) / k;
      }
      dp = order * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    g.nodes[i] = -x;
    g.nodes[order - 1 - i] = x;
    g.weights[i] = g.weights[order - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return g;
}

Quadrature prediction_quadrature(const PerturbedDesign& design, int nodes_per_cell) {
  if (design.dim != 1) throw std::invalid_argument("prediction quadrature is implemented for d = 1");
  const GaussRule rule = gauss_legendre(nodes_per_cell);
  const Eigen::Index n = design.size();
  std::vector<double> pts(design.points.data(), design.points.data() + n);
  std::sort(pts.begin(), pts.end());
  std::vector<double> x;
  std::vector<double> w;
  const auto add_piece = [&](double a, double b) {
    const double half = 0.5 * (b - a);
    if (!(half > 0.0)) return;
    for (int k = 0; k < nodes_per_cell; ++k) {
      x.push_back(a + half * (rule.nodes[k] + 1.0));
      w.push_back(half * rule.weights[k]);
    }
  };
  auto it = pts.begin();
  for (Eigen::Index c = 0; c < n; ++c) {
    const double lo = static_cast<double>(c);
    const double hi = lo + 1.0;
    double a = lo;
    it = std::upper_bound(pts.begin(), pts.end(), lo);
    for (; it != pts.end() && *it < hi; ++it) {
      add_piece(a, *it);
      a = *it;
    }
    add_piece(a, hi);
  }
  Quadrature q;
  q.nodes = Eigen::Map<Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  q.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  return q;
}

namespace {

constexpr Eigen::Index kChunk = 2048;

PointMatrix as_points(const Eigen::VectorXd& t, Eigen::Index begin, Eigen::Index count) {
  PointMatrix p(count, 1);
  p.col(0) = t.segment(begin, count);
  return p;
}

}  // namespace

Eigen::VectorXd pred_error_integrand(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& theta0, const PerturbedDesign& design,
                                     const Eigen::VectorXd& t) {
  if (design.dim != 1) throw std::invalid_argument("pred_error_integrand: d = 1 only");
  const DenormalGuard guard;
  const bool same = theta == theta0;
  const CovMatrix r0 = build_cov_matrix(model, theta0, design);
  const double k00 = model.value(theta0, 0.0);
  std::optional<CovMatrix> rt;
  if (!same) rt.emplace(build_cov_matrix(model, theta, design));

  Eigen::VectorXd out(t.size());
  for (Eigen::Index b = 0; b < t.size(); b += kChunk) {
    const Eigen::Index m = std::min(kChunk, t.size() - b);
    const PointMatrix loc = as_points(t, b, m);
    Eigen::MatrixXd c0 = cross_covariance(model, theta0, design, loc);
    if (same) {
      r0.llt().matrixL().solveInPlace(c0);
      out.segment(b, m) = (k00 - c0.colwise().squaredNorm().array()).matrix().transpose();
    } else {
      const Eigen::MatrixXd w = rt->solve(cross_covariance(model, theta, design, loc));
      const Eigen::MatrixXd r0w = r0.matrix() * w;
      out.segment(b, m) =
          (k00 - 2.0 * (w.array() * c0.array()).colwise().sum() + (w.array() * r0w.array()).colwise().sum())
              .matrix()
              .transpose();
    }
  }
  return out.cwiseMax(0.0);
}

double expected_pred_error(const CovarianceModel& model, const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                           const PerturbedDesign& design, int nodes_per_cell) {
  const Quadrature q = prediction_quadrature(design, nodes_per_cell);
  const Eigen::VectorXd e = pred_error_integrand(model, theta, theta0, design, q.nodes);
  return q.weights.dot(e) / static_cast<double>(design.size());
}

double loo_mse_gap(const CovarianceModel& model, const Eigen::VectorXd& theta, const Eigen::VectorXd& theta0,
                   const PerturbedDesign& design) {
  if (design.size() < 2) throw std::invalid_argument("loo_mse_gap: need n >= 2");
  if (theta == theta0) return 0.0;
  const DenormalGuard guard;
  const CovMatrix r0 = build_cov_matrix(model, theta0, design);
  const auto loo_weights = [](const CovMatrix& c) {
    const Eigen::MatrixXd q = c.inverse();
    // Row i: the LOO error y_i - yhat_i as a linear form in y.
    return Eigen::MatrixXd(q.diagonal().cwiseInverse().asDiagonal() * q);
  };
  const Eigen::MatrixXd g = loo_weights(build_cov_matrix(model, theta, design)) - loo_weights(r0);
  const Eigen::MatrixXd gr = g * r0.matrix();
  return (gr.array() * g.array()).sum() / static_cast<double>(design.size());
}

PredictionImpact prediction_impact(const CovarianceModel& model, const Eigen::VectorXd& theta_hat,
                                   const Eigen::VectorXd& theta0, const PerturbedDesign& design,
                                   const Eigen::VectorXd& y, int nodes_per_cell) {
  const DenormalGuard guard;
  const Quadrature q = prediction_quadrature(design, nodes_per_cell);
  const double n = static_cast<double>(design.size());
  PredictionImpact out;
  out.theta_hat = theta_hat;
  out.converged = true;
  out.e_true = q.weights.dot(pred_error_integrand(model, theta0, theta0, design, q.nodes)) / n;
  if (theta_hat == theta0) {
    out.e_hat = out.e_true;
    return out;
  }
  const CovMatrix r0 = build_cov_matrix(model, theta0, design);
  const CovMatrix rh = build_cov_matrix(model, theta_hat, design);
  const Eigen::VectorXd a0 = r0.solve(y);
  const Eigen::VectorXd ah = rh.solve(y);
  double gap = 0.0;
  for (Eigen::Index b = 0; b < q.nodes.size(); b += kChunk) {
    const Eigen::Index m = std::min(kChunk, q.nodes.size() - b);
    const PointMatrix loc = as_points(q.nodes, b, m);
    const Eigen::VectorXd diff = cross_covariance(model, theta_hat, design, loc).transpose() * ah -
                                 cross_covariance(model, theta0, design, loc).transpose() * a0;
    gap += q.weights.segment(b, m).dot(diff.cwiseAbs2());
  }
  out.e_hat = out.e_true + gap / n;
  return out;
}

double ImpactStudy::median_abs_difference() const {
  if (replicates.empty()) throw std::logic_error("ImpactStudy: no replicates");
  std::vector<double> v;
  for (const auto& r : replicates) v.push_back(std::abs(r.difference()));
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 == 1 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

double ImpactStudy::mean_e_true() const {
  if (replicates.empty()) throw std::logic_error("ImpactStudy: no replicates");
  double s = 0.0;
  for (const auto& r : replicates) s += r.e_true;
  return s / static_cast<double>(replicates.size());
}

ImpactStudy estimation_impact_on_prediction(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                                            Eigen::Index n, double epsilon, EstimatorKind kind, const ParamBox& box,
                                            int n_replicates, std::uint64_t seed, const OptimizerBudget& budget,
                                            int threads) {
  if (n_replicates < 1) throw std::invalid_argument("estimation_impact_on_prediction: need replicates");
  std::vector<PredictionImpact> all(static_cast<std::size_t>(n_replicates));
  parallel_for(
      all.size(),
      [&](std::size_t r) {
        const PerturbedDesign design = sample_design(n, 1, epsilon, derive_seed(seed, 2 * r));
        const GpDataset data = simulate_dataset(model, theta0, design, derive_seed(seed, 2 * r + 1));
        const EstimateResult est = estimate(model, data, kind, box, budget);
        all[r] = prediction_impact(model, est.theta_hat, theta0, data.design, data.y);
        all[r].converged = est.converged;
      },
      threads);
  ImpactStudy study;
  study.n = n;
  study.epsilon = epsilon;
  study.kind = kind;
  for (auto& r : all) {
    if (r.converged) {
      study.replicates.push_back(std::move(r));
    } else {
      ++study.excluded;
    }
  }
  return study;
}

PredictionErrorReport prediction_error_report(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                                              Eigen::Index n, double epsilon, int n_replicates, std::uint64_t seed,
                                              int nodes_per_cell, int threads) {
  if (n_replicates < 1) throw std::invalid_argument("prediction_error_report: need replicates");
  const int reps = epsilon == 0.0 ? 1 : n_replicates;
  std::vector<double> e(static_cast<std::size_t>(reps));
  parallel_for(
      e.size(),
      [&](std::size_t r) {
        const PerturbedDesign design = sample_design(n, 1, epsilon, derive_seed(seed, r));
        e[r] = expected_pred_error(model, theta0, theta0, design, nodes_per_cell);
      },
      threads);
  PredictionErrorReport out;
  out.epsilon = epsilon;
  out.theta0 = theta0;
  out.n = n;
  out.n_replicates = reps;
  out.seed = seed;
  out.nodes_per_cell = nodes_per_cell;
  double s = 0.0;
  for (double v : e) s += v;
  out.e_mean = s / reps;
  if (reps >= 2) {
    double ss = 0.0;
    for (double v : e) ss += (v - out.e_mean) * (v - out.e_mean);
    out.e_stderr = std::sqrt(ss / (reps - 1) / reps);
  }
  return out;
}

void write_prediction_csv_header(std::ostream& os) { os << "epsilon,ell0,nu0,n,E_mean,E_stderr,replicates,seed\n"; }

void write_prediction_csv_row(std::ostream& os, const PredictionErrorReport& r, double ell0, double nu0) {
  os << std::setprecision(12) << r.epsilon << ',' << ell0 << ',' << nu0 << ',' << r.n << ',' << r.e_mean << ','
     << r.e_stderr << ',' << r.n_replicates << ',' << r.seed << '\n';
}

}  // namespace gpgrid
