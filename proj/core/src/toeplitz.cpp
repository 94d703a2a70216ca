#include "gpgrid/toeplitz.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "gpgrid/errors.hpp"

namespace gpgrid {
namespace {

constexpr int kFitLags = 40;
constexpr double kMinSpectrum = 1e-12;

enum Column { kF = 0, kFTheta, kFt, kFtTheta, kFtt, kFttTheta, kColumns };

void require_scalar(const CovarianceModel& model) {
  if (model.num_params() != 1) {
    throw std::invalid_argument("toeplitz closed forms need a one-parameter family (p = 1)");
  }
}

}  // namespace

Eigen::MatrixXd covariance_sequences(const CovarianceModel& model, const Eigen::VectorXd& theta0, int n_max) {
  require_scalar(model);
  model.validate(theta0);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n_max + 1, kColumns);
  double g = 0.0;
  for (int i = 0; i <= n_max; ++i) {
    s(i, kF) = model.value_and_gradient(theta0, i, std::span<double>(&g, 1));
    s(i, kFTheta) = g;
    if (i == 0) continue;
    const LagDerivatives d = model.lag_derivatives(theta0, i);
    s(i, kFt) = d.dk_dt;
    s(i, kFtTheta) = d.d2k_dt_dtheta[0];
    s(i, kFtt) = d.d2k_dt2;
    s(i, kFttTheta) = d.d3k_dt2_dtheta[0];
  }
  return s;
}

DecayFit fit_decay(const CovarianceModel& model, const Eigen::VectorXd& theta0) {
  const Eigen::MatrixXd s = covariance_sequences(model, theta0, kFitLags);
  std::vector<double> xs;
  std::vector<double> ys;
  for (int i = 1; i <= kFitLags; ++i) {
    const double m = s.row(i).cwiseAbs().maxCoeff();
    if (m > 0.0) {
      xs.push_back(i);
      ys.push_back(std::log(m));
    }
  }
  if (xs.size() < 2) {
    // Everything beyond lag 1 underflows: any rate works.
    DecayFit fit;
    fit.rate = 700.0;
    fit.constant = std::max(1.0, s.cwiseAbs().maxCoeff()) * std::exp(fit.rate);
    return fit;
  }
  const auto k = static_cast<double>(xs.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / k;
    my += ys[i] / k;
  }
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  DecayFit fit;
  fit.rate = -sxy / sxx;
  if (!(fit.rate > 0.0)) {
    std::ostringstream os;
    os << "covariance sequences of " << model.name() << " show no exponential decay (fitted rate " << fit.rate
       << ")";
    throw NumericalError(os.str());
  }
  double log_c = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    log_c = std::max(log_c, ys[i] + fit.rate * xs[i]);
    fit.residual = std::max(fit.residual, std::abs(ys[i] - (my - fit.rate * (xs[i] - mx))));
  }
  fit.constant = std::exp(log_c);
  return fit;
}

int truncation_radius(const DecayFit& fit, double tol) {
  const double denom = 1.0 - std::exp(-fit.rate);
  // 2 C e^{-a (N + 1)} / denom < tol  <=>  N > log(2 C / (tol denom)) / a - 1
  const double n = std::log(2.0 * fit.constant / (tol * denom)) / fit.rate - 1.0;
  return std::max(kFitLags, static_cast<int>(std::floor(n)) + 1);
}

SpectralSequences build_spectra(const CovarianceModel& model, const Eigen::VectorXd& theta0, int m, int n_max) {
  require_scalar(model);
  if (m < 8) throw std::invalid_argument("build_spectra: grid size must be at least 8");
  SpectralSequences out;
  out.model = model.name();
  out.theta0 = theta0;
  out.m = m;
  out.decay = fit_decay(model, theta0);
  out.n_max = n_max > 0 ? n_max : truncation_radius(out.decay);
  const double q = std::exp(-out.decay.rate);
  out.tail_bound = 2.0 * out.decay.constant * std::pow(q, out.n_max + 1) / (1.0 - q);

  const Eigen::MatrixXd s = covariance_sequences(model, theta0, out.n_max);
  out.omega.resize(m);
  for (int k = 0; k < m; ++k) out.omega[k] = -std::numbers::pi + 2.0 * std::numbers::pi * k / m;

  // Even sequences: s_0 + 2 sum s_i cos(i w); odd ones: 2 sum s_i sin(i w).
  std::array<Eigen::ArrayXd*, kColumns> dst = {&out.f,    &out.f_theta, &out.f_t,
                                                &out.f_t_theta, &out.f_tt, &out.f_tt_theta};
  for (int c = 0; c < kColumns; ++c) *dst[c] = Eigen::ArrayXd::Constant(m, s(0, c));
  for (int c : {kFt, kFtTheta}) dst[c]->setZero();
  for (int k = 0; k < m; ++k) {
    const double w = out.omega[k];
    // Sum from the tail inwards so the small terms are not lost.
    for (int i = out.n_max; i >= 1; --i) {
      const double cs = 2.0 * std::cos(i * w);
      const double sn = 2.0 * std::sin(i * w);
      out.f[k] += s(i, kF) * cs;
      out.f_theta[k] += s(i, kFTheta) * cs;
      out.f_t[k] += s(i, kFt) * sn;
      out.f_t_theta[k] += s(i, kFtTheta) * sn;
      out.f_tt[k] += s(i, kFtt) * cs;
      out.f_tt_theta[k] += s(i, kFttTheta) * cs;
    }
  }
  return out;
}

double mean_value(std::span<const double> g) {
  if (g.empty()) throw std::invalid_argument("mean_value: empty sample");
  double sum = 0.0;
  double comp = 0.0;
  for (double v : g) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(g.size());
}

double mean_value(const Eigen::ArrayXd& g) {
  return mean_value(std::span<const double>(g.data(), static_cast<std::size_t>(g.size())));
}

double mean_value(const std::function<double(double)>& g, double rel_tol, int m0, int max_m) {
  const auto grid_mean = [&](int m) {
    std::vector<double> v(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) v[k] = g(-std::numbers::pi + 2.0 * std::numbers::pi * k / m);
    return mean_value(v);
  };
  double prev = grid_mean(m0);
  for (int m = 2 * m0; m <= max_m; m *= 2) {
    const double cur = grid_mean(m);
    if (std::abs(cur - prev) <= rel_tol * std::max(std::abs(cur), 1e-300)) return cur;
    prev = cur;
  }
  return prev;
}

namespace {

void check_spectrum(const SpectralSequences& s) {
  const double lo = s.f.minCoeff();
  if (!(lo > kMinSpectrum)) {
    std::ostringstream os;
    os << "spectral density of " << s.model << " is degenerate on the grid (min f = " << lo << ")";
    throw NumericalError(os.str());
  }
}

}  // namespace

ClosedFormSigmas closed_form_sigmas(const SpectralSequences& s) {
  check_spectrum(s);
  const Eigen::ArrayXd& f = s.f;
  const Eigen::ArrayXd& ft = s.f_theta;
  const double m1 = mean_value(f.inverse());
  const double m_t2 = mean_value(ft / f.square());
  const double m_t3 = mean_value(ft / f.cube());
  const double m_2 = mean_value(f.square().inverse());
  const double m_tt3 = mean_value(ft.square() / f.cube());
  const double m_tt4 = mean_value(ft.square() / f.square().square());

  ClosedFormSigmas out;
  out.ml = 0.5 * mean_value(ft.square() / f.square());
  out.cv1 = 8.0 * std::pow(m1, -6) * m_t2 * m_t2 * m_2 + 8.0 * std::pow(m1, -4) * m_tt4 -
            16.0 * std::pow(m1, -5) * m_t2 * m_t3;
  out.cv2 = 2.0 * std::pow(m1, -3) * (m_tt3 * m1 - m_t2 * m_t2);
  // Cauchy-Schwarz makes the bracket non-negative; allow rounding noise.
  const double scale = 2.0 * std::pow(m1, -3) * m_tt3 * m1;
  if (out.cv2 < -1e-12 * std::max(1.0, std::abs(scale))) {
    std::ostringstream os;
    os << "closed-form Sigma_CV2 is negative (" << out.cv2 << ")";
    throw NumericalError(os.str());
  }
  out.cv2 = std::max(out.cv2, 0.0);
  return out;
}

double closed_form_d2_sigma_ml(const SpectralSequences& s) {
  check_spectrum(s);
  const Eigen::ArrayXd& f = s.f;
  const Eigen::ArrayXd& fth = s.f_theta;
  const Eigen::ArrayXd& ft = s.f_t;
  const Eigen::ArrayXd& ftth = s.f_t_theta;
  const Eigen::ArrayXd& ftt = s.f_tt;
  const Eigen::ArrayXd& fttth = s.f_tt_theta;
  const Eigen::ArrayXd f2 = f.square();
  const Eigen::ArrayXd f3 = f2 * f;
  const double m_inv = mean_value(f.inverse());
  const double m_th_f2 = mean_value(fth / f2);
  const double m_th2_f3 = mean_value(fth.square() / f3);
  constexpr double a = 2.0 / 3.0;
  constexpr double b = 4.0 / 3.0;
  return a * m_th_f2 * mean_value(ft.square() * fth / f2)       //
         - b * m_inv * mean_value(ftth * ft * fth / f2)         //
         - b * m_th_f2 * mean_value(ftth * ft / f)              //
         + a * m_inv * mean_value(ft.square() * fth.square() / f3)  //
         + a * m_th2_f3 * mean_value(ft.square() / f)           //
         - a * mean_value(ftt * fth.square() / f3)              //
         + a * m_inv * mean_value(ftth.square() / f)            //
         + a * mean_value(fttth * fth / f2);
}

double closed_form_var_ratio_ml(const SpectralSequences& s) {
  return -closed_form_d2_sigma_ml(s) / closed_form_sigmas(s).ml;
}

void write_spectra_json(std::ostream& os, const SpectralSequences& s, bool include_samples) {
  nlohmann::json j = {{"model", s.model},
                      {"theta0", std::vector<double>(s.theta0.data(), s.theta0.data() + s.theta0.size())},
                      {"m", s.m},
                      {"n_max", s.n_max},
                      {"decay_rate", s.decay.rate},
                      {"decay_constant", s.decay.constant},
                      {"tail_bound", s.tail_bound}};
  try {
    const ClosedFormSigmas c = closed_form_sigmas(s);
    j["sigma_ml"] = c.ml;
    j["sigma_cv1"] = c.cv1;
    j["sigma_cv2"] = c.cv2;
    j["d2_sigma_ml"] = closed_form_d2_sigma_ml(s);
    j["var_ratio_ml"] = closed_form_var_ratio_ml(s);
  } catch (const NumericalError& e) {
    j["error"] = e.what();
  }
  if (include_samples) {
    const auto vec = [](const Eigen::ArrayXd& a) { return std::vector<double>(a.data(), a.data() + a.size()); };
    j["omega"] = vec(s.omega);
    j["f"] = vec(s.f);
    j["f_theta"] = vec(s.f_theta);
    j["f_t"] = vec(s.f_t);
    j["f_t_theta"] = vec(s.f_t_theta);
    j["f_tt"] = vec(s.f_tt);
    j["f_tt_theta"] = vec(s.f_tt_theta);
  }
  os << std::setw(2) << j << '\n';
}

}  // namespace gpgrid
