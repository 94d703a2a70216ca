#include "gpgrid/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "gpgrid/errors.hpp"
#include "gpgrid/fpenv.hpp"

namespace gpgrid {

std::string_view to_string(EstimatorKind kind) { return kind == EstimatorKind::kML ? "ML" : "CV"; }

EstimatorKind estimator_from_string(std::string_view name) {
  if (name == "ML" || name == "ml") return EstimatorKind::kML;
  if (name == "CV" || name == "cv") return EstimatorKind::kCV;
  throw std::invalid_argument("unknown estimator '" + std::string(name) + "' (expected ML or CV)");
}

ObjectiveEval neg_log_likelihood(const CovarianceModel& model, const Eigen::VectorXd& theta,
                                 const GpDataset& data) {
  const DenormalGuard guard;
  const double n = static_cast<double>(data.size());
  CovBundle b = build_cov_bundle(model, theta, data.design);
  const CovMatrix cov(std::move(b.r));
  const Eigen::VectorXd alpha = cov.solve(data.y);
  ObjectiveEval out;
  out.kind = EstimatorKind::kML;
  out.theta = theta;
  out.value = (cov.log_det() + data.y.dot(alpha)) / n;
  const Eigen::MatrixXd q = cov.inverse();
  out.gradient.resize(static_cast<Eigen::Index>(b.dr.size()));
  for (std::size_t k = 0; k < b.dr.size(); ++k) {
    const double tr = (q.array() * b.dr[k].array()).sum();
    out.gradient[static_cast<Eigen::Index>(k)] = (tr - alpha.dot(b.dr[k] * alpha)) / n;
  }
  return out;
}

ObjectiveEval cv_criterion(const CovarianceModel& model, const Eigen::VectorXd& theta, const GpDataset& data) {
  const DenormalGuard guard;
  if (data.size() < 2) throw std::invalid_argument("cv_criterion: need at least two observations");
  const double n = static_cast<double>(data.size());
  CovBundle b = build_cov_bundle(model, theta, data.design);
  const CovMatrix cov(std::move(b.r));
  const Eigen::MatrixXd q = cov.inverse();
  const Eigen::VectorXd alpha = q * data.y;
  const Eigen::ArrayXd d = q.diagonal().array();
  const Eigen::ArrayXd err = alpha.array() / d;

  ObjectiveEval out;
  out.kind = EstimatorKind::kCV;
  out.theta = theta;
  out.value = err.square().sum() / n;

  // y^T M^k y = sum_i alpha_i^2 a_i / d_i^3 - (R^{-1} diag(d)^{-2} alpha)^T dR_k alpha,
  // with a = diag(R^{-1} dR_k R^{-1}).
  const Eigen::VectorXd u = q * (alpha.array() / d.square()).matrix();
  const Eigen::ArrayXd w = alpha.array().square() / d.cube();
  out.gradient.resize(static_cast<Eigen::Index>(b.dr.size()));
  for (std::size_t k = 0; k < b.dr.size(); ++k) {
    const Eigen::MatrixXd p = q * b.dr[k];
    const Eigen::ArrayXd a = (p.array() * q.array()).rowwise().sum();
    const double quad = (w * a).sum() - u.dot(b.dr[k] * alpha);
    out.gradient[static_cast<Eigen::Index>(k)] = 2.0 * quad / n;
  }
  return out;
}

ObjectiveEval evaluate_objective(EstimatorKind kind, const CovarianceModel& model, const Eigen::VectorXd& theta,
                                 const GpDataset& data) {
  return kind == EstimatorKind::kML ? neg_log_likelihood(model, theta, data) : cv_criterion(model, theta, data);
}

double cv_variance(const CovarianceModel& model, const Eigen::VectorXd& theta, const GpDataset& data) {
  const DenormalGuard guard;
  if (data.size() < 2) throw std::invalid_argument("cv_variance: need at least two observations");
  const CovMatrix cov = build_cov_matrix(model, theta, data.design);
  const Eigen::MatrixXd q = cov.inverse();
  const Eigen::VectorXd alpha = q * data.y;
  return (alpha.array().square() / q.diagonal().array()).sum() / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

namespace {

double radical_inverse(int index, int base) {
  double result = 0.0;
  double f = 1.0 / base;
  while (index > 0) {
    result += f * (index % base);
    index /= base;
    f /= base;
  }
  return result;
}

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19};

struct Point {
  double f = std::numeric_limits<double>::infinity();
  Eigen::VectorXd u;  // normalized coordinates in [0, 1]^p
  Eigen::VectorXd g;  // gradient in normalized coordinates
};

class NormalizedObjective {
 public:
  NormalizedObjective(EstimatorKind kind, const CovarianceModel& model, const GpDataset& data, const ParamBox& box)
      : kind_(kind), model_(model), data_(data), box_(box), width_(box.upper() - box.lower()) {}

  Eigen::VectorXd to_theta(const Eigen::VectorXd& u) const {
    return box_.project(box_.lower() + u.cwiseProduct(width_));
  }
  const Eigen::VectorXd& width() const { return width_; }

  // Infinite value when the covariance matrix cannot be factorized.
  Point operator()(const Eigen::VectorXd& u) {
    ++evaluations;
    Point p;
    p.u = u;
    try {
      const ObjectiveEval e = evaluate_objective(kind_, model_, to_theta(u), data_);
      if (std::isfinite(e.value) && e.gradient.allFinite()) {
        p.f = e.value;
        p.g = e.gradient.cwiseProduct(width_);
      }
    } catch (const NumericalError&) {
      // p.f stays infinite
    }
    if (!std::isfinite(p.f)) p.g = Eigen::VectorXd::Zero(u.size());
    return p;
  }

  int evaluations = 0;

 private:
  EstimatorKind kind_;
  const CovarianceModel& model_;
  const GpDataset& data_;
  const ParamBox& box_;
  Eigen::VectorXd width_;
};

Eigen::VectorXd clamp01(const Eigen::VectorXd& u) { return u.cwiseMax(0.0).cwiseMin(1.0); }

// Projected gradient in theta units; zero where a bound is active.
double projected_gradient_norm(const Point& p, const Eigen::VectorXd& width) {
  double m = 0.0;
  for (Eigen::Index k = 0; k < p.u.size(); ++k) {
    const bool blocked = (p.u[k] <= 0.0 && p.g[k] > 0.0) || (p.u[k] >= 1.0 && p.g[k] < 0.0);
    if (!blocked) m = std::max(m, std::abs(p.g[k] / width[k]));
  }
  return m;
}

struct LocalResult {
  Point best;
  bool converged = false;
  bool merged = false;
};

// A start whose iterate enters the neighbourhood of an optimum already found
// is stopped there; it would only reconverge to the same point.
constexpr double kMergeRadius = 1e-2;

bool near_known(const Eigen::VectorXd& u, const std::vector<Eigen::VectorXd>& known) {
  for (const Eigen::VectorXd& k : known) {
    if ((u - k).cwiseAbs().maxCoeff() < kMergeRadius) return true;
  }
  return false;
}

// Projected BFGS with backtracking along the projection arc.
LocalResult local_minimize(NormalizedObjective& obj, const Eigen::VectorXd& u0, const OptimizerBudget& budget,
                           const std::vector<Eigen::VectorXd>& known) {
  const Eigen::Index p = u0.size();
  LocalResult res;
  Point cur = obj(u0);
  res.best = cur;
  if (!std::isfinite(cur.f)) return res;

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(p, p);
  bool fresh = true;
  for (int it = 0; it < budget.max_iterations; ++it) {
    if (projected_gradient_norm(cur, obj.width()) <= budget.gradient_tolerance) {
      res.converged = true;
      break;
    }
    std::vector<bool> active(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k) {
      active[k] = (cur.u[k] <= 0.0 && cur.g[k] > 0.0) || (cur.u[k] >= 1.0 && cur.g[k] < 0.0);
    }
    Eigen::VectorXd dir = -(h * cur.g);
    for (Eigen::Index k = 0; k < p; ++k) {
      if (active[k]) dir[k] = 0.0;
    }
    if (dir.dot(cur.g) >= 0.0 || !dir.allFinite()) {
      h.setIdentity();
      fresh = true;
      dir = -cur.g;
      for (Eigen::Index k = 0; k < p; ++k) {
        if (active[k]) dir[k] = 0.0;
      }
    }
    double step = 1.0;
    const double dmax = dir.cwiseAbs().maxCoeff();
    if (fresh && dmax > 0.0) step = std::min(1.0, 0.1 / dmax);
    else if (dmax * step > 0.5) step = 0.5 / dmax;

    Point next;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd u_new = clamp01(cur.u + step * dir);
      if ((u_new - cur.u).cwiseAbs().maxCoeff() == 0.0) break;
      next = obj(u_new);
      if (std::isfinite(next.f) && next.f <= cur.f + 1e-4 * cur.g.dot(u_new - cur.u)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (fresh) break;  // steepest descent cannot make progress either
      h.setIdentity();
      fresh = true;
      continue;
    }
    const Eigen::VectorXd s = next.u - cur.u;
    const Eigen::VectorXd yv = next.g - cur.g;
    const double sy = s.dot(yv);
    const bool small_step = s.cwiseAbs().maxCoeff() <= budget.step_tolerance * (1.0 + cur.u.cwiseAbs().maxCoeff());
    cur = std::move(next);
    if (small_step) {
      res.converged = true;
      break;
    }
    if (near_known(cur.u, known)) {
      res.merged = true;
      break;
    }
    if (sy > 1e-14 * s.norm() * yv.norm()) {
      if (fresh) h *= sy / yv.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(p, p);
      h = (eye - rho * s * yv.transpose()) * h * (eye - rho * yv * s.transpose()) + rho * s * s.transpose();
      fresh = false;
    }
  }
  if (!res.converged) res.converged = projected_gradient_norm(cur, obj.width()) <= budget.gradient_tolerance;
  res.best = cur;
  return res;
}

bool lexicographically_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

std::vector<Eigen::VectorXd> multistart_points(const ParamBox& box, int count) {
  const Eigen::Index p = box.size();
  if (p > static_cast<Eigen::Index>(std::size(kPrimes))) throw std::invalid_argument("multistart: too many parameters");
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (int i = 1; i <= count; ++i) {
    Eigen::VectorXd u(p);
    for (Eigen::Index k = 0; k < p; ++k) u[k] = radical_inverse(i, kPrimes[k]);
    pts.push_back(box.lower() + u.cwiseProduct(box.upper() - box.lower()));
  }
  return pts;
}

EstimateResult estimate(const CovarianceModel& model, const GpDataset& data, EstimatorKind kind,
                        const ParamBox& box, const OptimizerBudget& budget) {
  if (static_cast<std::size_t>(box.size()) != model.num_params()) {
    throw std::invalid_argument("estimate: box dimension does not match the model");
  }
  if (data.size() < (kind == EstimatorKind::kCV ? 2 : 1)) throw std::invalid_argument("estimate: dataset too small");
  if (budget.starts < 1) throw std::invalid_argument("estimate: need at least one start");

  NormalizedObjective obj(kind, model, data, box);
  const Eigen::VectorXd width = box.upper() - box.lower();
  EstimateResult result;
  result.kind = kind;
  result.objective_at_opt = std::numeric_limits<double>::infinity();
  bool have = false;
  std::vector<Eigen::VectorXd> known;
  for (const Eigen::VectorXd& start : multistart_points(box, budget.starts)) {
    const LocalResult local = local_minimize(obj, (start - box.lower()).cwiseQuotient(width), budget, known);
    ++result.n_restarts_used;
    if (!std::isfinite(local.best.f)) continue;
    if (local.merged) continue;
    known.push_back(local.best.u);
    const Eigen::VectorXd theta = obj.to_theta(local.best.u);
    const double f = local.best.f;
    const double tie = 1e-12 * (1.0 + std::abs(f));
    bool better = !have || f < result.objective_at_opt - tie;
    if (have && !better && std::abs(f - result.objective_at_opt) <= tie) {
      better = lexicographically_less(theta, result.theta_hat);
    }
    if (better) {
      have = true;
      result.theta_hat = theta;
      result.objective_at_opt = f;
      result.converged = local.converged;
    }
  }
  result.evaluations = obj.evaluations;
  if (!have) {
    result.theta_hat = box.project(multistart_points(box, 1).front());
    result.converged = false;
    return result;
  }
  const Eigen::ArrayXd edge = 1e-6 * width.array();
  result.boundary_hit = ((result.theta_hat - box.lower()).array() <= edge).any() ||
                        ((box.upper() - result.theta_hat).array() <= edge).any();
  return result;
}

}  // namespace gpgrid
