#include "gpgrid/asymptotics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "json.hpp"

#include "gpgrid/errors.hpp"
#include "gpgrid/fpenv.hpp"
#include "gpgrid/gp.hpp"
#include "gpgrid/parallel.hpp"
#include "gpgrid/random.hpp"

namespace gpgrid {

std::string_view to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::kML: return "ML";
    case TraceKind::kCV1: return "CV1";
    case TraceKind::kCV2: return "CV2";
  }
  return "?";
}

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// sum_kl A_kl B_lk = Tr(A B).
double trace_of_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a.array() * b.transpose().array()).sum();
}

}  // namespace

TraceSet compute_traces(const CovarianceModel& model, const Eigen::VectorXd& theta0, const PerturbedDesign& design,
                        bool include_cv) {
  const DenormalGuard guard;
  const Eigen::Index n = design.size();
  if (include_cv && n < 2) throw std::invalid_argument("compute_traces: CV traces need n >= 2");
  const auto p = static_cast<Eigen::Index>(model.num_params());
  const double inv_n = 1.0 / static_cast<double>(n);

  CovBundle b = build_cov_bundle(model, theta0, design);
  const Eigen::MatrixXd q = CovMatrix(std::move(b.r)).inverse();

  std::vector<Eigen::MatrixXd> pq(static_cast<std::size_t>(p));  // R^{-1} dR_i
  for (Eigen::Index i = 0; i < p; ++i) pq[i].noalias() = q * b.dr[i];

  TraceSet out;
  out.ml.resize(p, p);
  if (include_cv) out.loo_variance = q.diagonal().cwiseInverse().mean();
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) out.ml(i, j) = out.ml(j, i) = 0.5 * inv_n * trace_of_product(pq[i], pq[j]);
  }
  if (!include_cv) return out;

  const Eigen::ArrayXd d = q.diagonal().array();
  const Eigen::ArrayXd d2inv = d.square().inverse();
  const Eigen::ArrayXd d3inv = d.cube().inverse();
  const Eigen::MatrixXd q_d2 = q.array().rowwise() * d2inv.transpose();  // R^{-1} diag(R^{-1})^{-2}

  std::vector<Eigen::MatrixXd> aq(static_cast<std::size_t>(p));  // R^{-1} dR_i R^{-1}
  std::vector<Eigen::ArrayXd> adiag(static_cast<std::size_t>(p));
  std::vector<Eigen::MatrixXd> t(static_cast<std::size_t>(p));  // {M^i + M^i'} R
  for (Eigen::Index i = 0; i < p; ++i) {
    aq[i].noalias() = pq[i] * q;
    adiag[i] = aq[i].diagonal().array();
    // M^i = R^{-1} Lambda_i R^{-1} - R^{-1} diag^{-2} A_i with Lambda_i = diag(a_i / d^3), so
    // {M^i + M^i'} R = 2 R^{-1} Lambda_i - R^{-1} diag^{-2} R^{-1} dR_i - A_i diag^{-2}.
    const Eigen::ArrayXd lambda = adiag[i] * d3inv;
    t[i] = 2.0 * (q.array().rowwise() * lambda.transpose()).matrix();
    t[i].noalias() -= q_d2 * pq[i];
    t[i] -= (aq[i].array().rowwise() * d2inv.transpose()).matrix();
  }

  out.cv1.resize(p, p);
  out.cv2.resize(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      out.cv1(i, j) = out.cv1(j, i) = 2.0 * inv_n * trace_of_product(t[i], t[j]);
      // Tr(M_CV2^{i,j}) = -8 sum a_i a_j / d^3 + 2 sum_k d_k^{-2} (P_i A_j)_kk + 6 sum a_i a_j / d^3.
      const double diag_term = -2.0 * (adiag[i] * adiag[j] * d3inv).sum();
      const double cross_ij = 2.0 * ((pq[i].array() * aq[j].array()).rowwise().sum() * d2inv).sum();
      const double cross_ji = 2.0 * ((pq[j].array() * aq[i].array()).rowwise().sum() * d2inv).sum();
      out.cv2(i, j) = out.cv2(j, i) = inv_n * (diag_term + 0.5 * (cross_ij + cross_ji));
    }
  }
  return out;
}

Eigen::MatrixXd trace_ml(const CovarianceModel& model, const Eigen::VectorXd& theta0, const PerturbedDesign& design) {
  return compute_traces(model, theta0, design, false).ml;
}

Eigen::MatrixXd trace_cv1(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                          const PerturbedDesign& design) {
  return compute_traces(model, theta0, design, true).cv1;
}

Eigen::MatrixXd trace_cv2(const CovarianceModel& model, const Eigen::VectorXd& theta0,
                          const PerturbedDesign& design) {
  return compute_traces(model, theta0, design, true).cv2;
}

CovCriteria criteria_of(const Eigen::MatrixXd& asym_cov) {
  CovCriteria c;
  c.v = asym_cov.diagonal();
  if (asym_cov.rows() >= 2) {
    c.c = asym_cov(0, 1);
    c.d = asym_cov.determinant();
  } else {
    c.d = asym_cov(0, 0);
  }
  return c;
}

Eigen::MatrixXd inverse_checked(const Eigen::MatrixXd& sigma, std::string_view what) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(sigma), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    std::ostringstream os;
    os << what << " is numerically singular (eigenvalues in [" << lo << ", " << hi
       << "]); the parameterization is not identifiable here";
    throw NumericalError(os.str());
  }
  return symmetrized(sigma.inverse());
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& s2, const Eigen::MatrixXd& s1, double reference) {
  const Eigen::MatrixXd inv = inverse_checked(s2, "Sigma_CV2");
  if (reference > 0.0) {
    const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(symmetrized(s2), Eigen::EigenvaluesOnly)
                          .eigenvalues()(0);
    if (!(lo > 1e-10 * reference)) {
      std::ostringstream os;
      os << "Sigma_CV2 is numerically singular (smallest eigenvalue " << lo << " against the scale " << reference
         << "); the parameterization is not identifiable by CV here";
      throw NumericalError(os.str());
    }
  }
  return symmetrized(inv * s1 * inv);
}

PerturbedDesign replicate_design(Eigen::Index n, double epsilon, std::uint64_t seed, int replicate, bool mirror) {
  PerturbedDesign d = sample_design(n, 1, epsilon, derive_seed(seed, static_cast<std::uint64_t>(replicate)));
  return mirror ? mirrored(d) : d;
}

namespace {

struct MeanSe {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd se;
};

// Mean and standard error of the mean, accumulated in replicate order.
MeanSe mean_and_se(const std::vector<Eigen::MatrixXd>& xs) {
  const auto r = static_cast<double>(xs.size());
  MeanSe out;
  out.mean = Eigen::MatrixXd::Zero(xs.front().rows(), xs.front().cols());
  for (const auto& x : xs) out.mean += x;
  out.mean /= r;
  out.se = Eigen::MatrixXd::Zero(out.mean.rows(), out.mean.cols());
  if (xs.size() >= 2) {
    for (const auto& x : xs) out.se.array() += (x - out.mean).array().square();
    out.se = (out.se.array() / (r - 1.0) / r).sqrt().matrix();
  }
  return out;
}

TraceEstimate make_estimate(TraceKind kind, const MeanSe& m, Eigen::Index n, int reps, double eps,
                            const Eigen::VectorXd& theta0) {
  TraceEstimate e;
  e.kind = kind;
  e.value = m.mean;
  e.std_error = m.se;
  e.n = n;
  e.n_replicates = reps;
  e.epsilon = eps;
  e.theta0 = theta0;
  return e;
}

void check_inputs(const CovarianceModel& model, const Eigen::VectorXd& theta0, Eigen::Index n, int reps) {
  model.validate(theta0);
  if (n < 2) throw std::invalid_argument("asymptotics: n must be at least 2");
  if (reps < 1) throw std::invalid_argument("asymptotics: need at least one replicate");
}

}  // namespace

AsymptoticReport asym_report(const CovarianceModel& model, const Eigen::VectorXd& theta0, double epsilon,
                             Eigen::Index n, int n_replicates, std::uint64_t seed, const ReportOptions& options) {
  check_inputs(model, theta0, n, n_replicates);
  // At epsilon = 0 every replicate is the same regular grid.
  const int reps = epsilon == 0.0 ? 1 : n_replicates;
  std::vector<TraceSet> sets(static_cast<std::size_t>(reps));
  parallel_for(
      sets.size(),
      [&](std::size_t r) {
        const PerturbedDesign design = replicate_design(n, epsilon, seed, static_cast<int>(r), options.mirrored);
        sets[r] = compute_traces(model, theta0, design, options.include_cv);
      },
      options.threads);

  AsymptoticReport rep;
  rep.model = model.name();
  rep.param_names = model.param_names();
  rep.theta0 = theta0;
  rep.epsilon = epsilon;
  rep.n = n;
  rep.n_replicates = reps;
  rep.seed = seed;
  rep.has_cv = options.include_cv;

  std::vector<Eigen::MatrixXd> ml;
  std::vector<Eigen::MatrixXd> cv1;
  std::vector<Eigen::MatrixXd> cv2;
  double loo_variance = 0.0;
  for (const auto& s : sets) {
    ml.push_back(s.ml);
    loo_variance += s.loo_variance / reps;
    if (options.include_cv) {
      cv1.push_back(s.cv1);
      cv2.push_back(s.cv2);
    }
  }
  rep.sigma_ml = make_estimate(TraceKind::kML, mean_and_se(ml), n, reps, epsilon, theta0);
  rep.asym_cov_ml = inverse_checked(rep.sigma_ml.value, "Sigma_ML");
  rep.ml = criteria_of(rep.asym_cov_ml);
  if (options.include_cv) {
    rep.sigma_cv1 = make_estimate(TraceKind::kCV1, mean_and_se(cv1), n, reps, epsilon, theta0);
    rep.sigma_cv2 = make_estimate(TraceKind::kCV2, mean_and_se(cv2), n, reps, epsilon, theta0);
    rep.asym_cov_cv =
        sandwich(rep.sigma_cv2.value, rep.sigma_cv1.value, loo_variance * rep.sigma_ml.value.norm());
    rep.cv = criteria_of(rep.asym_cov_cv);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Second derivative in epsilon
// ---------------------------------------------------------------------------

namespace {

struct TripleTraces {
  TraceSet plus;
  TraceSet mid;
  TraceSet minus;
};

TraceSet mean_set(const std::vector<const TraceSet*>& xs, bool cv) {
  TraceSet m;
  m.ml = Eigen::MatrixXd::Zero(xs.front()->ml.rows(), xs.front()->ml.cols());
  if (cv) m.cv1 = m.cv2 = m.ml;
  for (const TraceSet* x : xs) {
    m.ml += x->ml;
    m.loo_variance += x->loo_variance / static_cast<double>(xs.size());
    if (cv) {
      m.cv1 += x->cv1;
      m.cv2 += x->cv2;
    }
  }
  const auto r = static_cast<double>(xs.size());
  m.ml /= r;
  if (cv) {
    m.cv1 /= r;
    m.cv2 /= r;
  }
  return m;
}

struct Curv {
  Eigen::MatrixXd d2_ml;
  Eigen::VectorXd ratio_ml;
  Eigen::VectorXd ratio_cv;
};

Eigen::VectorXd second_diff_ratio(const Eigen::VectorXd& vp, const Eigen::VectorXd& v0, const Eigen::VectorXd& vm,
                                  double delta) {
  return ((vp + vm - 2.0 * v0).array() / (delta * delta) / v0.array()).matrix();
}

Curv curvature_of(const TraceSet& plus, const TraceSet& mid, const TraceSet& minus, double delta, bool cv) {
  Curv c;
  c.d2_ml = (plus.ml + minus.ml - 2.0 * mid.ml) / (delta * delta);
  const auto var_ml = [](const TraceSet& s) -> Eigen::VectorXd {
    return inverse_checked(s.ml, "Sigma_ML").diagonal();
  };
  c.ratio_ml = second_diff_ratio(var_ml(plus), var_ml(mid), var_ml(minus), delta);
  if (cv) {
    const auto var_cv = [](const TraceSet& s) -> Eigen::VectorXd {
      return sandwich(s.cv2, s.cv1, s.loo_variance * s.ml.norm()).diagonal();
    };
    c.ratio_cv = second_diff_ratio(var_cv(plus), var_cv(mid), var_cv(minus), delta);
  }
  return c;
}

}  // namespace

EpsCurvature eps_second_derivative(const CovarianceModel& model, const Eigen::VectorXd& theta0, Eigen::Index n,
                                   int n_replicates, std::uint64_t seed, double delta, double epsilon,
                                   const ReportOptions& options) {
  check_inputs(model, theta0, n, n_replicates);
  if (!(delta > 0.0) || !(epsilon >= 0.0) || !(epsilon + delta < 0.5)) {
    throw std::invalid_argument("eps_second_derivative: need delta > 0 and 0 <= epsilon < epsilon + delta < 1/2");
  }
  const bool cv = options.include_cv;
  std::vector<TripleTraces> reps(static_cast<std::size_t>(n_replicates));
  parallel_for(
      reps.size(),
      [&](std::size_t r) {
        const PerturbedDesign base = replicate_design(n, epsilon, seed, static_cast<int>(r), options.mirrored);
        const PerturbedDesign lower =
            epsilon >= delta ? with_epsilon(base, epsilon - delta) : mirrored(with_epsilon(base, delta - epsilon));
        reps[r].plus = compute_traces(model, theta0, with_epsilon(base, epsilon + delta), cv);
        reps[r].mid = compute_traces(model, theta0, base, cv);
        reps[r].minus = compute_traces(model, theta0, lower, cv);
      },
      options.threads);

  const auto collect = [&](auto member, std::size_t skip) {
    std::vector<const TraceSet*> xs;
    for (std::size_t r = 0; r < reps.size(); ++r) {
      if (r != skip) xs.push_back(&(reps[r].*member));
    }
    return mean_set(xs, cv);
  };
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  const TraceSet plus = collect(&TripleTraces::plus, kNone);
  const TraceSet mid = collect(&TripleTraces::mid, kNone);
  const TraceSet minus = collect(&TripleTraces::minus, kNone);
  const Curv full = curvature_of(plus, mid, minus, delta, cv);

  EpsCurvature out;
  out.epsilon = epsilon;
  out.delta = delta;
  out.n = n;
  out.n_replicates = n_replicates;
  out.theta0 = theta0;
  out.sigma_ml = mid.ml;
  out.d2_sigma_ml = full.d2_ml;
  out.var_ratio_ml = full.ratio_ml;
  out.has_cv = cv;
  if (cv) out.var_ratio_cv = full.ratio_cv;

  // Jackknife standard errors over replicates.
  const auto p = theta0.size();
  out.d2_sigma_ml_se = Eigen::MatrixXd::Zero(p, p);
  out.var_ratio_ml_se = Eigen::VectorXd::Zero(p);
  if (cv) out.var_ratio_cv_se = Eigen::VectorXd::Zero(p);
  if (n_replicates >= 2) {
    const auto r = static_cast<double>(n_replicates);
    std::vector<Curv> loo;
    for (std::size_t k = 0; k < reps.size(); ++k) {
      loo.push_back(curvature_of(collect(&TripleTraces::plus, k), collect(&TripleTraces::mid, k),
                                 collect(&TripleTraces::minus, k), delta, cv));
    }
    Eigen::MatrixXd m_d2 = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd m_ml = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd m_cv = Eigen::VectorXd::Zero(p);
    for (const Curv& c : loo) {
      m_d2 += c.d2_ml / r;
      m_ml += c.ratio_ml / r;
      if (cv) m_cv += c.ratio_cv / r;
    }
    for (const Curv& c : loo) {
      out.d2_sigma_ml_se.array() += (c.d2_ml - m_d2).array().square();
      out.var_ratio_ml_se.array() += (c.ratio_ml - m_ml).array().square();
      if (cv) out.var_ratio_cv_se.array() += (c.ratio_cv - m_cv).array().square();
    }
    const double f = (r - 1.0) / r;
    out.d2_sigma_ml_se = (out.d2_sigma_ml_se * f).cwiseSqrt();
    out.var_ratio_ml_se = (out.var_ratio_ml_se * f).cwiseSqrt();
    if (cv) out.var_ratio_cv_se = (out.var_ratio_cv_se * f).cwiseSqrt();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json trace_json(const TraceEstimate& e) {
  return {{"kind", std::string(to_string(e.kind))},
          {"value", matrix_json(e.value)},
          {"std_error", matrix_json(e.std_error)},
          {"n", e.n},
          {"n_replicates", e.n_replicates},
          {"epsilon", e.epsilon}};
}

nlohmann::json criteria_json(const CovCriteria& c) {
  return {{"V", vector_json(c.v)}, {"C", c.c}, {"D", c.d}};
}

}  // namespace

void write_report_json(std::ostream& os, const AsymptoticReport& r) {
  nlohmann::json j = {{"model", r.model},
                      {"param_names", r.param_names},
                      {"theta0", vector_json(r.theta0)},
                      {"epsilon", r.epsilon},
                      {"n", r.n},
                      {"n_replicates", r.n_replicates},
                      {"seed", r.seed},
                      {"sigma_ml", trace_json(r.sigma_ml)},
                      {"asym_cov_ml", matrix_json(r.asym_cov_ml)},
                      {"criteria_ml", criteria_json(r.ml)}};
  if (r.has_cv) {
    j["sigma_cv1"] = trace_json(r.sigma_cv1);
    j["sigma_cv2"] = trace_json(r.sigma_cv2);
    j["asym_cov_cv"] = matrix_json(r.asym_cov_cv);
    j["criteria_cv"] = criteria_json(r.cv);
  }
  os << std::setw(2) << j << '\n';
}

void write_curvature_json(std::ostream& os, const EpsCurvature& c) {
  nlohmann::json j = {{"epsilon", c.epsilon},
                      {"delta", c.delta},
                      {"n", c.n},
                      {"n_replicates", c.n_replicates},
                      {"theta0", vector_json(c.theta0)},
                      {"sigma_ml", matrix_json(c.sigma_ml)},
                      {"d2_sigma_ml", matrix_json(c.d2_sigma_ml)},
                      {"d2_sigma_ml_se", matrix_json(c.d2_sigma_ml_se)},
                      {"var_ratio_ml", vector_json(c.var_ratio_ml)},
                      {"var_ratio_ml_se", vector_json(c.var_ratio_ml_se)}};
  if (c.has_cv) {
    j["var_ratio_cv"] = vector_json(c.var_ratio_cv);
    j["var_ratio_cv_se"] = vector_json(c.var_ratio_cv_se);
  }
  os << std::setw(2) << j << '\n';
}

void write_report_csv_header(std::ostream& os, std::size_t num_params) {
  os << "epsilon,n,replicates,seed";
  for (std::size_t k = 0; k < num_params; ++k) os << ",theta0_" << k;
  for (const char* est : {"ml", "cv"}) {
    for (std::size_t k = 0; k < num_params; ++k) os << ",V_" << est << "_" << k;
    os << ",C_" << est << ",D_" << est;
  }
  os << '\n';
}

void write_report_csv_row(std::ostream& os, const AsymptoticReport& r) {
  os << std::setprecision(12) << r.epsilon << ',' << r.n << ',' << r.n_replicates << ',' << r.seed;
  for (Eigen::Index k = 0; k < r.theta0.size(); ++k) os << ',' << r.theta0[k];
  const auto put = [&](const CovCriteria& c, bool present) {
    for (Eigen::Index k = 0; k < r.theta0.size(); ++k) {
      os << ',';
      if (present) os << c.v[k];
    }
    os << ',';
    if (present) os << c.c;
    os << ',';
    if (present) os << c.d;
  };
  put(r.ml, true);
  put(r.cv, r.has_cv);
  os << '\n';
}

}  // namespace gpgrid
