#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gpgrid/asymptotics.hpp"
#include "gpgrid/covariance.hpp"
#include "gpgrid/design.hpp"
#include "gpgrid/estimators.hpp"
#include "gpgrid/experiments.hpp"
#include "gpgrid/gp.hpp"
#include "gpgrid/prediction.hpp"
#include "gpgrid/random.hpp"
#include "gpgrid/special.hpp"
#include "gpgrid/toeplitz.hpp"
#include "oracles.hpp"

using namespace gpgrid;

namespace {

constexpr std::uint64_t kSeed = 20240611;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

MaternModel one_param(char which, double ell, double nu) {
  return which == 'l' ? MaternModel(MaternFree::kEll, {ell, nu}) : MaternModel(MaternFree::kNu, {ell, nu});
}

Eigen::VectorXd one_theta(char which, double ell, double nu) { return scalar(which == 'l' ? ell : nu); }

std::vector<double> linspace(double a, double b, int k) {
  std::vector<double> v(k);
  for (int i = 0; i < k; ++i) v[i] = a + (b - a) * i / (k - 1);
  return v;
}

// ---------------------------------------------------------------------------

Outcome matern_spot_values() {
  Outcome o;
  struct Spot {
    double ell, nu, k, k_tol, dnu;
  };
  for (const Spot& s : {Spot{0.73, 2.5, 0.15, 0.01, -3.7e-5}, Spot{0.7, 2.5, 0.13, 0.01, -1.3e-3},
                        Spot{0.5, 2.5, 0.037, 0.004, -5e-3}}) {
    const double k = matern({s.ell, s.nu}, 1.0);
    const double d = matern_dnu({s.ell, s.nu}, 1.0);
    o.check(std::abs(k - s.k) <= s.k_tol, fmt("K(1) at ell=%g: %.5g", s.ell, k));
    o.check(rel(d, s.dnu) <= 0.10, fmt("dK/dnu(1) at ell=%g: %.4g", s.ell, d));
    o.note(fmt("ell=%g K=%.4f dnu=%.3g", s.ell, k, d));
  }
  return o;
}

Outcome special_functions() {
  Outcome o;
  std::mt19937_64 g(kSeed);
  std::uniform_real_distribution<double> unu(0.05, 12.0);
  std::uniform_real_distribution<double> ulogx(std::log(0.01), std::log(60.0));
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double nu = unu(g);
    const double x = std::exp(ulogx(g));
    worst = std::max(worst, rel(bessel_k(nu, x), oracle::bessel_k_integral(nu, x)));
  }
  o.check(worst <= 1e-9, "bessel_k vs quadrature");
  double worst_exp = 0.0;
  for (double ell : {0.5, 1.0, 3.0}) {
    for (int i = 1; i <= 100; ++i) {
      const double t = 0.05 * i;
      worst_exp = std::max(worst_exp, std::abs(matern({ell, 0.5}, t) - std::exp(-std::numbers::sqrt2 * t / ell)));
    }
  }
  o.check(worst_exp <= 1e-10, "nu = 1/2 closed form");
  o.note(fmt("max rel err %.2e over 200 pairs; nu=1/2 max abs err %.2e", worst, worst_exp));
  return o;
}

Outcome virtual_loo_equivalence() {
  Outcome o;
  std::mt19937_64 g(kSeed + 3);
  std::uniform_int_distribution<int> un(5, 30);
  std::uniform_real_distribution<double> uell(0.3, 1.5);
  std::uniform_real_distribution<double> unu(0.5, 3.0);
  const MaternModel model = MaternModel::joint();
  double worst = 0.0;
  double worst_cv = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double eps = i % 2 == 0 ? 0.0 : 0.45;
    const int n = un(g);
    const Eigen::Vector2d th(uell(g), unu(g));
    const GpDataset data = simulate_dataset(model, th, sample_design(n, 1, eps, derive_seed(kSeed, 2 * i)),
                                            derive_seed(kSeed, 2 * i + 1));
    const LooResult v = virtual_loo(model, th, data);
    const oracle::BruteLoo b = oracle::brute_force_loo(model, th, data);
    worst = std::max({worst, (v.mean - b.mean).norm() / b.mean.norm(),
                      (v.variance - b.variance).norm() / b.variance.norm()});
    const double mse = (data.y - b.mean).squaredNorm() / n;
    worst_cv = std::max(worst_cv, std::abs(cv_criterion(model, th, data).value - mse) / std::max(1.0, mse));
  }
  o.check(worst <= 1e-8, "virtual vs brute-force LOO");
  o.check(worst_cv <= 1e-12, "CV criterion vs mean squared LOO error");
  o.note(fmt("LOO rel err %.2e; CV err %.2e", worst, worst_cv));
  return o;
}

Outcome gradient_suites() {
  Outcome o;
  std::mt19937_64 g(kSeed + 4);
  std::uniform_int_distribution<int> un(10, 40);
  std::uniform_real_distribution<double> uell(0.3, 2.0);
  std::uniform_real_distribution<double> unu(0.6, 4.0);
  const MaternModel model = MaternModel::joint();
  double worst[2] = {0.0, 0.0};
  for (int kind = 0; kind < 2; ++kind) {
    const EstimatorKind ek = kind == 0 ? EstimatorKind::kML : EstimatorKind::kCV;
    for (int i = 0; i < 50; ++i) {
      const double eps = 0.45 * (i % 3) / 2.0;
      const Eigen::Vector2d th(uell(g), unu(g));
      const GpDataset data = simulate_dataset(
          model, Eigen::Vector2d(uell(g), unu(g)), sample_design(un(g), 1, eps, derive_seed(kSeed + kind, 2 * i)),
          derive_seed(kSeed + kind, 2 * i + 1));
      const Eigen::VectorXd an = evaluate_objective(ek, model, th, data).gradient;
      const Eigen::VectorXd fd = oracle::richardson_gradient(
          [&](const Eigen::VectorXd& t) { return evaluate_objective(ek, model, t, data).value; }, th);
      worst[kind] = std::max(worst[kind], (an - fd).norm() / fd.norm());
    }
  }
  o.check(worst[0] <= 1e-5, "ML gradient");
  o.check(worst[1] <= 1e-5, "CV gradient");
  o.note(fmt("max rel err ML %.2e, CV %.2e", worst[0], worst[1]));
  return o;
}

Outcome toeplitz_equivalence() {
  Outcome o;
  struct P {
    char which;
    double ell, nu;
  };
  const PerturbedDesign grid = sample_design(2048, 1, 0.0, kSeed);
  for (const P& p : {P{'l', 1.0, 1.5}, P{'n', 0.5, 2.5}, P{'l', 2.7, 1.0}, P{'l', 0.5, 5.0}}) {
    const MaternModel m = one_param(p.which, p.ell, p.nu);
    const Eigen::VectorXd th = one_theta(p.which, p.ell, p.nu);
    const ClosedFormSigmas c = closed_form_sigmas(build_spectra(m, th));
    const TraceSet t = compute_traces(m, th, grid);
    const double e_ml = rel(t.ml(0, 0), c.ml);
    const double e_cv1 = rel(t.cv1(0, 0), c.cv1);
    const double e_cv2 = rel(t.cv2(0, 0), c.cv2);
    const std::string at = fmt("(%g, %g)", p.ell, p.nu) + (p.which == 'l' ? " ell" : " nu");
    o.check(e_ml <= 0.01, "Sigma_ML " + at);
    o.check(e_cv1 <= 0.02, "Sigma_CV1 " + at);
    o.check(e_cv2 <= 0.02, "Sigma_CV2 " + at);
    o.note(at + fmt(": %.2e %.2e %.2e", e_ml, e_cv1, e_cv2));
  }
  const double s2 = 2.0;
  const ScaledMaternModel pv({1.0, 1.5});
  const ClosedFormSigmas c = closed_form_sigmas(build_spectra(pv, scalar(s2)));
  const TraceSet t = compute_traces(pv, scalar(s2), sample_design(256, 1, 0.0, kSeed));
  const double target = 1.0 / (2.0 * s2 * s2);
  o.check(rel(c.ml, target) <= 1e-12 && rel(t.ml(0, 0), target) <= 1e-12, "pure variance Sigma_ML");
  o.check(std::abs(c.cv2) <= 1e-10 && std::abs(t.cv2(0, 0)) <= 1e-10, "pure variance Sigma_CV2");
  o.note(fmt("pure variance: ml %.3g, cv2 closed %.1e trace %.1e", c.ml, c.cv2, t.cv2(0, 0)));
  return o;
}

Outcome eps_curvature_crosscheck() {
  Outcome o;
  ReportOptions opts;
  opts.include_cv = false;
  for (const auto& [ell, nu] : {std::pair{0.5, 5.0}, std::pair{2.7, 1.0}}) {
    const MaternModel m = one_param('l', ell, nu);
    const double cf = closed_form_var_ratio_ml(build_spectra(m, scalar(ell)));
    const EpsCurvature mc = eps_second_derivative(m, scalar(ell), 1024, 16, kSeed, 0.02, 0.0, opts);
    const double r = rel(mc.var_ratio_ml[0], cf);
    o.check(r <= 0.10, fmt("(%g, %g)", ell, nu));
    o.note(fmt("(%g, %g): ", ell, nu) +
           fmt("closed %.4g, MC %.4g +- %.2g", cf, mc.var_ratio_ml[0], mc.var_ratio_ml_se[0]));
  }
  return o;
}

Outcome sign_structure() {
  Outcome o;
  ReportOptions opts;
  opts.include_cv = false;
  struct Case {
    char which;
    double ell, nu;
    int sign;
  };
  for (const Case& c : {Case{'l', 0.5, 5.0, -1}, Case{'n', 0.5, 2.5, +1}, Case{'n', 0.7, 2.5, -1}}) {
    const MaternModel m = one_param(c.which, c.ell, c.nu);
    const Eigen::VectorXd th = one_theta(c.which, c.ell, c.nu);
    const double cf = closed_form_var_ratio_ml(build_spectra(m, th));
    const EpsCurvature mc = eps_second_derivative(m, th, 1024, 8, kSeed, 0.02, 0.0, opts);
    const std::string at = fmt("(%g, %g)", c.ell, c.nu) + (c.which == 'l' ? " ell" : " nu");
    o.check(c.sign * mc.var_ratio_ml[0] > 0.0 && c.sign * cf > 0.0, "sign at " + at);
    o.note(at + fmt(": MC %.3g +- %.2g, closed %.3g", mc.var_ratio_ml[0], mc.var_ratio_ml_se[0], cf));
  }
  return o;
}

Outcome global_ratios() {
  Outcome o;
  ReportOptions ml_only;
  ml_only.include_cv = false;
  const Eigen::Index n = 256;
  const int reps = 8;
  double min_ratio[2] = {1e300, 1e300};
  for (int w = 0; w < 2; ++w) {
    const char which = w == 0 ? 'l' : 'n';
    for (double ell : linspace(0.3, 3.0, 5)) {
      for (double nu : linspace(0.5, 5.0, 5)) {
        const MaternModel m = one_param(which, ell, nu);
        const Eigen::VectorXd th = one_theta(which, ell, nu);
        const double v0 = asym_report(m, th, 0.0, n, 1, kSeed, ml_only).asym_cov_ml(0, 0);
        const double v45 = asym_report(m, th, 0.45, n, reps, kSeed, ml_only).asym_cov_ml(0, 0);
        const double r = v0 / v45;
        min_ratio[w] = std::min(min_ratio[w], r);
        o.check(r > 1.0, fmt("ratio %.3g at (%g, %g)", r, ell, nu) + (w == 0 ? " ell" : " nu"));
      }
    }
  }
  o.note(fmt("5x5 grid min ratio ell %.3g, nu %.3g", min_ratio[0], min_ratio[1]));

  const MaternModel a = one_param('l', 0.5, 5.0);
  const double ra = asym_report(a, scalar(0.5), 0.0, 1024, 1, kSeed, ml_only).asym_cov_ml(0, 0) /
                    asym_report(a, scalar(0.5), 0.45, 1024, 16, kSeed, ml_only).asym_cov_ml(0, 0);
  o.check(ra >= 3.0 && ra <= 10.0, fmt("ratio at (0.5, 5) = %.3g", ra));
  const MaternModel b = one_param('l', 2.7, 1.0);
  const AsymptoticReport rb = asym_report(b, scalar(2.7), 0.45, 1024, 16, kSeed);
  const double cv_over_ml = rb.asym_cov_cv(0, 0) / rb.asym_cov_ml(0, 0);
  o.check(cv_over_ml >= 4.0 && cv_over_ml <= 12.0, fmt("V_CV/V_ML at (2.7, 1) = %.3g", cv_over_ml));
  o.note(fmt("ratio (0.5, 5) %.3g; V_CV/V_ML (2.7, 1) %.3g", ra, cv_over_ml));
  return o;
}

Outcome cv_moment_identities() {
  Outcome o;
  const MaternModel m = MaternModel::ell_only(1.5);
  const Eigen::VectorXd th = scalar(1.0);
  const Eigen::Index n = 64;
  const PerturbedDesign d = sample_design(n, 1, 0.3, kSeed);
  const CovMatrix r0 = build_cov_matrix(m, th, d);
  const TraceSet t = compute_traces(m, th, d);
  const int draws = 20000;
  const double h = 1e-4;
  std::vector<double> grad(draws), hess(draws);
  for (int k = 0; k < draws; ++k) {
    const GpDataset data{d, simulate_gp(r0, derive_seed(kSeed + 9, k)), th, 0};
    grad[k] = std::sqrt(static_cast<double>(n)) * cv_criterion(m, th, data).gradient[0];
    hess[k] = (cv_criterion(m, th + scalar(h), data).gradient[0] - cv_criterion(m, th - scalar(h), data).gradient[0]) /
              (2.0 * h);
  }
  const auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double gm = mean_of(grad);
  std::vector<double> sq(draws);
  for (int k = 0; k < draws; ++k) sq[k] = (grad[k] - gm) * (grad[k] - gm);
  const double cov = mean_of(sq) * draws / (draws - 1.0);
  double var_sq = 0.0;
  for (double s : sq) var_sq += (s - mean_of(sq)) * (s - mean_of(sq));
  const double cov_se = std::sqrt(var_sq / (draws - 1.0) / draws);
  const double hm = mean_of(hess);
  double var_h = 0.0;
  for (double x : hess) var_h += (x - hm) * (x - hm);
  const double h_se = std::sqrt(var_h / (draws - 1.0) / draws);
  o.check(std::abs(cov - t.cv1(0, 0)) <= 3.0 * cov_se, "covariance of sqrt(n) dCV");
  o.check(std::abs(hm - t.cv2(0, 0)) <= 3.0 * h_se, "mean Hessian of CV");
  o.note(fmt("cov %.5g vs trace %.5g (se %.2g)", cov, t.cv1(0, 0), cov_se));
  o.note(fmt("hessian %.5g vs trace %.5g (se %.2g)", hm, t.cv2(0, 0), h_se));
  return o;
}

Outcome asymptotic_normality() {
  Outcome o;
  const MaternModel m = MaternModel::ell_only(1.5);
  const ParamBox box(scalar(0.05), scalar(10.0));
  const auto studies =
      normality_study(m, scalar(1.0), 400, 0.25, 500, kSeed, {EstimatorKind::kML, EstimatorKind::kCV}, box);
  for (const auto& s : studies) {
    const bool ml = s.kind == EstimatorKind::kML;
    const double tol = ml ? 0.25 : 0.35;
    const std::string name = ml ? "ML" : "CV";
    o.check(std::abs(s.variance_ratio() - 1.0) <= tol, name + " variance ratio");
    if (ml) o.check(s.coverage90 >= 0.85 && s.coverage90 <= 0.95, "ML 90% coverage");
    o.note(name + fmt(": var ratio %.3f, coverage %.3f", s.variance_ratio(), s.coverage90) +
           fmt(", AD %.2f, excluded %.0f", s.ad_statistic, s.excluded));
  }
  return o;
}

Outcome prediction_properties() {
  Outcome o;
  const int reps = 16;
  double worst_ratio = 0.0;
  double worst_gap = 0.0;
  for (double ell : linspace(0.3, 3.0, 5)) {
    for (double nu : linspace(0.5, 5.0, 5)) {
      const MaternModel m = MaternModel::joint();
      const Eigen::Vector2d th(ell, nu);
      const double e0 = prediction_error_report(m, th, 100, 0.0, reps, kSeed).e_mean;
      const double e45 = prediction_error_report(m, th, 100, 0.45, reps, kSeed).e_mean;
      const double e45_50 = prediction_error_report(m, th, 50, 0.45, reps, kSeed).e_mean;
      const double e0_50 = prediction_error_report(m, th, 50, 0.0, reps, kSeed).e_mean;
      worst_ratio = std::max(worst_ratio, e0 / e45);
      worst_gap = std::max({worst_gap, std::abs(e45_50 - e45), std::abs(e0_50 - e0)});
      o.check(e0 / e45 < 1.0, fmt("E(0)/E(0.45) = %.3g at (%g, %g)", e0 / e45, ell, nu));
    }
  }
  o.check(worst_gap < 0.02, "E(n=50) vs E(n=100)");

  const MaternModel m = MaternModel::ell_only(1.5);
  const ParamBox box(scalar(0.05), scalar(10.0));
  const ImpactStudy small =
      estimation_impact_on_prediction(m, scalar(1.0), 100, 0.45, EstimatorKind::kML, box, 32, kSeed);
  const ImpactStudy large =
      estimation_impact_on_prediction(m, scalar(1.0), 400, 0.45, EstimatorKind::kML, box, 32, kSeed);
  o.check(large.median_abs_difference() < small.median_abs_difference(), "impact median shrinks with n");
  const double min_e = std::min(small.mean_e_true(), large.mean_e_true());
  o.check(min_e >= 0.005, "E bounded away from zero");
  o.note(fmt("max E(0)/E(0.45) %.3g; max |E50-E100| %.2e; min E %.3g", worst_ratio, worst_gap, min_e));
  o.note(fmt("impact median n=100 %.3g, n=400 %.3g", small.median_abs_difference(), large.median_abs_difference()));
  return o;
}

Outcome structural_invariants() {
  Outcome o;
  const MaternModel joint = MaternModel::joint();
  double worst_cv2 = 1e300;
  double worst_ml = 1e300;
  for (double ell : {0.5, 1.0, 2.0}) {
    for (double nu : {0.8, 1.5, 3.0}) {
      for (double eps : {0.0, 0.25, 0.45}) {
        for (int r = 0; r < 3; ++r) {
          const Eigen::Vector2d th(ell, nu);
          const TraceSet t = compute_traces(joint, th, sample_design(128, 1, eps, derive_seed(kSeed, r)));
          const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e2(0.5 * (t.cv2 + t.cv2.transpose()));
          const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(t.ml);
          const double s2 = e2.eigenvalues()(0) / e2.eigenvalues().cwiseAbs().maxCoeff();
          const double s1 = e1.eigenvalues()(0) / e1.eigenvalues().cwiseAbs().maxCoeff();
          worst_cv2 = std::min(worst_cv2, s2);
          worst_ml = std::min(worst_ml, s1);
        }
      }
    }
  }
  o.check(worst_cv2 >= -1e-10, "Sigma_CV2 PSD");
  o.check(worst_ml > 0.0, "Sigma_ML PD");
  o.note(fmt("min scaled eigenvalue cv2 %.3g, ml %.3g", worst_cv2, worst_ml));

  const MaternModel m = MaternModel::ell_only(1.5);
  const auto lambda_min = [&](const PerturbedDesign& d) {
    const Eigen::MatrixXd rm = build_cov_matrix(m, scalar(1.0), d).matrix();
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(rm, Eigen::EigenvaluesOnly).eigenvalues()(0);
  };
  // Alternating X_i = +1, -1 puts every other pair at the minimal spacing 1 - 2 eps.
  const auto paired = [](Eigen::Index n, double eps) {
    PointMatrix x(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = i % 2 == 0 ? 1.0 : -1.0;
    return make_design(grid_enumeration(static_cast<int>(n), 1), x, eps);
  };
  for (double eps : {0.0, 0.25, 0.45}) {
    const double floor200 = lambda_min(paired(200, eps));
    const double floor = lambda_min(paired(800, eps));
    double lo = 1e300;
    for (Eigen::Index n : {50, 200, 800}) {
      for (int r = 0; r < 100; ++r) {
        lo = std::min(lo, lambda_min(sample_design(n, 1, eps, derive_seed(kSeed + n, r))));
      }
    }
    o.check(floor > 0.0 && rel(floor200, floor) < 0.01, fmt("paired-design floor not converged at eps=%g", eps));
    o.check(lo >= floor * (1.0 - 1e-9), fmt("random design below the floor at eps=%g", eps));
    o.note(fmt("eps=%g: lambda_min random %.3g, paired floor %.3g", eps, lo, floor));
  }

  struct P {
    char which;
    double ell, nu;
  };
  double worst_z = 0.0;
  for (const P& p : {P{'l', 0.5, 5.0}, P{'l', 2.7, 1.0}, P{'n', 0.5, 2.5}}) {
    const MaternModel mm = one_param(p.which, p.ell, p.nu);
    const Eigen::VectorXd th = one_theta(p.which, p.ell, p.nu);
    for (double eps : {0.15, 0.3, 0.45}) {
      ReportOptions plus;
      ReportOptions minus;
      minus.mirrored = true;
      const AsymptoticReport a = asym_report(mm, th, eps, 256, 12, kSeed + 1, plus);
      const AsymptoticReport b = asym_report(mm, th, eps, 256, 12, kSeed + 2, minus);
      for (const auto& [x, y] : {std::pair{&a.sigma_ml, &b.sigma_ml}, std::pair{&a.sigma_cv1, &b.sigma_cv1},
                                 std::pair{&a.sigma_cv2, &b.sigma_cv2}}) {
        const double se = std::hypot(x->std_error(0, 0), y->std_error(0, 0));
        const double z = std::abs(x->value(0, 0) - y->value(0, 0)) / se;
        worst_z = std::max(worst_z, z);
      }
    }
  }
  o.check(worst_z <= 3.0, "evenness in eps");
  o.note(fmt("evenness max |z| %.2f", worst_z));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"Matern spot values", matern_spot_values},
      {"special functions", special_functions},
      {"virtual LOO equivalence", virtual_loo_equivalence},
      {"gradient suites", gradient_suites},
      {"Toeplitz vs random traces", toeplitz_equivalence},
      {"second eps-derivative cross-check", eps_curvature_crosscheck},
      {"local sign structure", sign_structure},
      {"global ratios", global_ratios},
      {"CV gradient moments", cv_moment_identities},
      {"asymptotic normality", asymptotic_normality},
      {"prediction properties", prediction_properties},
      {"structural invariants", structural_invariants},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && selected.count(id) == 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("exception: ") + e.what());
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-36s %s  [%.1f s] %s\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL", sec,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
