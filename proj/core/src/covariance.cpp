#include "gpgrid/covariance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "gpgrid/special.hpp"

namespace gpgrid {

// ---------------------------------------------------------------------------
// ParamBox
// ---------------------------------------------------------------------------

ParamBox::ParamBox(Eigen::VectorXd lower, Eigen::VectorXd upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() < 1 || lower_.size() != upper_.size()) {
    throw std::invalid_argument("ParamBox: bounds must be non-empty and of equal length");
  }
  for (Eigen::Index k = 0; k < lower_.size(); ++k) {
    if (!(lower_[k] < upper_[k])) {
      throw std::invalid_argument("ParamBox: lower bound must be below upper bound");
    }
  }
}

bool ParamBox::contains(const Eigen::VectorXd& theta) const {
  if (theta.size() != size()) return false;
  return (theta.array() >= lower_.array()).all() && (theta.array() <= upper_.array()).all();
}

bool ParamBox::interior(const Eigen::VectorXd& theta, double rel_margin) const {
  if (theta.size() != size()) return false;
  const Eigen::ArrayXd margin = rel_margin * (upper_ - lower_).array();
  return (theta.array() > lower_.array() + margin).all() && (theta.array() < upper_.array() - margin).all();
}

Eigen::VectorXd ParamBox::project(const Eigen::VectorXd& theta) const {
  return theta.cwiseMax(lower_).cwiseMin(upper_);
}

void MaternParams::validate() const {
  if (!(ell > 0.0) || !std::isfinite(ell) || !(nu > 0.0) || !std::isfinite(nu)) {
    std::ostringstream os;
    os << "Matern parameters must be positive, got ell=" << ell << " nu=" << nu;
    throw std::invalid_argument(os.str());
  }
}

// ---------------------------------------------------------------------------
// Matern kernel internals
// ---------------------------------------------------------------------------

namespace {

constexpr double kZeroLag = 1e-8;
constexpr double kLogUnderflow = -700.0;

// a = c z^nu K_nu(z), b = c z^nu K_{nu-1}(z), c = 1 / (Gamma(nu) 2^{nu-1}).
struct MaternTerms {
  double a;
  double b;
};

double log_norm(double nu) { return -std::lgamma(nu) - (nu - 1.0) * std::numbers::ln2; }

// log_c = log_norm(nu), hoisted out of loops over lags.
MaternTerms matern_terms(double nu, double log_c, double z) {
  const double log_base = log_c + nu * std::log(z) - z;
  if (log_base + 0.5 * std::log(std::numbers::pi / (2.0 * z)) < kLogUnderflow) return {0.0, 0.0};
  double k_nu = 0.0;
  double k_num1 = 0.0;
  if (nu >= 1.0) {
    const BesselKPair pr = detail::bessel_k_pair_scaled(nu - 1.0, z);
    k_num1 = pr.k_nu;
    k_nu = pr.k_nu1;
  } else {
    k_nu = detail::bessel_k_pair_scaled(nu, z).k_nu;
    k_num1 = detail::bessel_k_pair_scaled(1.0 - nu, z).k_nu;
  }
  // Subnormal entries would stall the dense algebra downstream.
  const auto flush = [](double v) { return v < std::numeric_limits<double>::min() ? 0.0 : v; };
  const double e = std::exp(log_base);
  return {flush(e * k_nu), flush(e * k_num1)};
}

MaternTerms matern_terms(double nu, double z) { return matern_terms(nu, log_norm(nu), z); }

double scaled_lag(const MaternParams& p, double r) { return 2.0 * std::sqrt(p.nu) * r / p.ell; }

double nu_step(double nu) { return std::min(1e-4 * std::max(1.0, nu), 0.25 * nu); }

// Orders nu + h, nu - h, nu + h/2, nu - h/2 of the Richardson stencil in nu,
// with their lag scalings 2 sqrt(nu)/ell and normalization constants.
struct NuStencil {
  double h;
  std::array<double, 4> nu;
  std::array<double, 4> alpha;
  std::array<double, 4> log_c;

  NuStencil(double ell, double nu0) : h(nu_step(nu0)) {
    nu = {nu0 + h, nu0 - h, nu0 + 0.5 * h, nu0 - 0.5 * h};
    for (std::size_t q = 0; q < 4; ++q) {
      alpha[q] = 2.0 * std::sqrt(nu[q]) / ell;
      log_c[q] = log_norm(nu[q]);
    }
  }

  [[nodiscard]] double dvalue(double r) const {
    std::array<double, 4> f{};
    for (std::size_t q = 0; q < 4; ++q) f[q] = matern_terms(nu[q], log_c[q], alpha[q] * r).a;
    const double coarse = (f[0] - f[1]) / (2.0 * h);
    const double fine = (f[2] - f[3]) / h;
    return (4.0 * fine - coarse) / 3.0;
  }
};

// Richardson-extrapolated central difference of f in nu; f returns an array.
template <std::size_t N, typename F>
std::array<double, N> richardson_dnu(double nu, F&& f) {
  const double h = nu_step(nu);
  const auto central = [&](double step) {
    const std::array<double, N> up = f(nu + step);
    const std::array<double, N> dn = f(nu - step);
    std::array<double, N> d{};
    for (std::size_t i = 0; i < N; ++i) d[i] = (up[i] - dn[i]) / (2.0 * step);
    return d;
  };
  const std::array<double, N> coarse = central(h);
  const std::array<double, N> fine = central(0.5 * h);
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = (4.0 * fine[i] - coarse[i]) / 3.0;
  return out;
}

// (K, dK/dt, d2K/dt2) at fixed ell, t; used for the nu-derivatives.
std::array<double, 3> value_and_lag(double ell, double nu, double t) {
  const double s = t > 0.0 ? 1.0 : -1.0;
  const double alpha = 2.0 * std::sqrt(nu) / ell;
  const double z = alpha * std::abs(t);
  const MaternTerms m = matern_terms(nu, z);
  const double h1 = -m.b;
  const double h2 = m.a - (2.0 * nu - 1.0) * m.b / z;
  return {m.a, s * alpha * h1, alpha * alpha * h2};
}

}  // namespace

double matern(const MaternParams& p, double r) {
  p.validate();
  r = std::abs(r);
  if (r < kZeroLag) return 1.0;
  return matern_terms(p.nu, scaled_lag(p, r)).a;
}

double matern(const MaternParams& p, std::span<const double> lag) {
  double sq = 0.0;
  for (double v : lag) sq += v * v;
  return matern(p, std::sqrt(sq));
}

double matern_dell(const MaternParams& p, double r) {
  p.validate();
  r = std::abs(r);
  if (r < kZeroLag) return 0.0;
  const double z = scaled_lag(p, r);
  return matern_terms(p.nu, z).b * z / p.ell;
}

double matern_dnu(const MaternParams& p, double r) {
  p.validate();
  r = std::abs(r);
  if (r < kZeroLag) return 0.0;
  return NuStencil(p.ell, p.nu).dvalue(r);
}

MaternLagDerivs matern_lag_derivs(const MaternParams& p, double t) {
  p.validate();
  if (t == 0.0) throw std::domain_error("matern_lag_derivs: lag must be nonzero");
  const double s = t > 0.0 ? 1.0 : -1.0;
  const double nu = p.nu;
  const double alpha = 2.0 * std::sqrt(nu) / p.ell;
  const double z = alpha * std::abs(t);
  const MaternTerms m = matern_terms(nu, z);
  const double c = 2.0 * nu - 1.0;
  const double h1 = -m.b;
  const double h2 = m.a - c * m.b / z;
  const double h3 = -m.b + c * m.a / z - 2.0 * (nu - 1.0) * c * m.b / (z * z);

  MaternLagDerivs out{};
  out.dk_dt = s * alpha * h1;
  out.d2k_dt2 = alpha * alpha * h2;
  out.d2k_dt_dell = -s * (alpha / p.ell) * (h1 + z * h2);
  out.d3k_dt2_dell = -(alpha * alpha / p.ell) * (2.0 * h2 + z * h3);
  const auto dnu = richardson_dnu<3>(nu, [&](double v) { return value_and_lag(p.ell, v, t); });
  out.d2k_dt_dnu = dnu[1];
  out.d3k_dt2_dnu = dnu[2];
  return out;
}

void CovarianceModel::evaluate_batch(const Eigen::VectorXd& theta, std::span<const double> r, std::span<double> k,
                                     std::span<double> grad) const {
  const std::size_t p = num_params();
  const std::size_t m = r.size();
  std::vector<double> g(p);
  for (std::size_t i = 0; i < m; ++i) {
    k[i] = value_and_gradient(theta, r[i], g);
    for (std::size_t q = 0; q < p; ++q) grad[q * m + i] = g[q];
  }
}

void CovarianceModel::evaluate_values(const Eigen::VectorXd& theta, std::span<const double> r,
                                      std::span<double> k) const {
  for (std::size_t i = 0; i < r.size(); ++i) k[i] = value(theta, r[i]);
}

// ---------------------------------------------------------------------------
// MaternModel
// ---------------------------------------------------------------------------

MaternModel::MaternModel(MaternFree free, MaternParams fixed) : free_(free), fixed_(fixed) {
  fixed_.validate();
}

MaternParams MaternModel::unpack(const Eigen::VectorXd& theta) const {
  if (static_cast<std::size_t>(theta.size()) != num_params()) {
    throw std::invalid_argument("MaternModel: parameter vector has wrong length");
  }
  switch (free_) {
    case MaternFree::kEll: return {theta[0], fixed_.nu};
    case MaternFree::kNu: return {fixed_.ell, theta[0]};
    case MaternFree::kBoth: return {theta[0], theta[1]};
  }
  return fixed_;
}

Eigen::VectorXd MaternModel::pack(const MaternParams& p) const {
  switch (free_) {
    case MaternFree::kEll: return Eigen::VectorXd::Constant(1, p.ell);
    case MaternFree::kNu: return Eigen::VectorXd::Constant(1, p.nu);
    case MaternFree::kBoth: return Eigen::Vector2d(p.ell, p.nu);
  }
  return {};
}

std::size_t MaternModel::num_params() const { return free_ == MaternFree::kBoth ? 2 : 1; }

std::string MaternModel::name() const {
  std::ostringstream os;
  switch (free_) {
    case MaternFree::kEll: os << "matern(ell; nu=" << fixed_.nu << ")"; break;
    case MaternFree::kNu: os << "matern(nu; ell=" << fixed_.ell << ")"; break;
    case MaternFree::kBoth: os << "matern(ell, nu)"; break;
  }
  return os.str();
}

std::vector<std::string> MaternModel::param_names() const {
  switch (free_) {
    case MaternFree::kEll: return {"ell"};
    case MaternFree::kNu: return {"nu"};
    case MaternFree::kBoth: return {"ell", "nu"};
  }
  return {};
}

void MaternModel::validate(const Eigen::VectorXd& theta) const { unpack(theta).validate(); }

double MaternModel::value(const Eigen::VectorXd& theta, double r) const {
  return matern(unpack(theta), r);
}

double MaternModel::value_and_gradient(const Eigen::VectorXd& theta, double r, std::span<double> grad) const {
  const MaternParams p = unpack(theta);
  r = std::abs(r);
  if (r < kZeroLag) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 1.0;
  }
  const double z = scaled_lag(p, r);
  const MaternTerms m = matern_terms(p.nu, z);
  const auto dnu = [&] { return matern_dnu(p, r); };
  switch (free_) {
    case MaternFree::kEll: grad[0] = m.b * z / p.ell; break;
    case MaternFree::kNu: grad[0] = m.a == 0.0 ? 0.0 : dnu(); break;
    case MaternFree::kBoth:
      grad[0] = m.b * z / p.ell;
      grad[1] = m.a == 0.0 ? 0.0 : dnu();
      break;
  }
  return m.a;
}

void MaternModel::evaluate_batch(const Eigen::VectorXd& theta, std::span<const double> r, std::span<double> k,
                                 std::span<double> grad) const {
  const MaternParams p = unpack(theta);
  p.validate();
  const std::size_t m = r.size();
  const double alpha = 2.0 * std::sqrt(p.nu) / p.ell;
  const double lc = log_norm(p.nu);
  double* g_ell = free_ == MaternFree::kNu ? nullptr : grad.data();
  double* g_nu = free_ == MaternFree::kEll ? nullptr : grad.data() + (free_ == MaternFree::kBoth ? m : 0);
  const NuStencil stencil(p.ell, p.nu);
  for (std::size_t i = 0; i < m; ++i) {
    const double ri = std::abs(r[i]);
    if (ri < kZeroLag) {
      k[i] = 1.0;
      if (g_ell) g_ell[i] = 0.0;
      if (g_nu) g_nu[i] = 0.0;
      continue;
    }
    const double z = alpha * ri;
    const MaternTerms t = matern_terms(p.nu, lc, z);
    k[i] = t.a;
    if (g_ell) g_ell[i] = t.b * z / p.ell;
    if (g_nu) g_nu[i] = t.a == 0.0 ? 0.0 : stencil.dvalue(ri);
  }
}

void MaternModel::evaluate_values(const Eigen::VectorXd& theta, std::span<const double> r,
                                  std::span<double> k) const {
  const MaternParams p = unpack(theta);
  p.validate();
  const double alpha = 2.0 * std::sqrt(p.nu) / p.ell;
  const double lc = log_norm(p.nu);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double ri = std::abs(r[i]);
    k[i] = ri < kZeroLag ? 1.0 : matern_terms(p.nu, lc, alpha * ri).a;
  }
}

LagDerivatives MaternModel::lag_derivatives(const Eigen::VectorXd& theta, double t) const {
  const MaternLagDerivs d = matern_lag_derivs(unpack(theta), t);
  LagDerivatives out;
  out.dk_dt = d.dk_dt;
  out.d2k_dt2 = d.d2k_dt2;
  switch (free_) {
    case MaternFree::kEll:
      out.d2k_dt_dtheta = Eigen::VectorXd::Constant(1, d.d2k_dt_dell);
      out.d3k_dt2_dtheta = Eigen::VectorXd::Constant(1, d.d3k_dt2_dell);
      break;
    case MaternFree::kNu:
      out.d2k_dt_dtheta = Eigen::VectorXd::Constant(1, d.d2k_dt_dnu);
      out.d3k_dt2_dtheta = Eigen::VectorXd::Constant(1, d.d3k_dt2_dnu);
      break;
    case MaternFree::kBoth:
      out.d2k_dt_dtheta = Eigen::Vector2d(d.d2k_dt_dell, d.d2k_dt_dnu);
      out.d3k_dt2_dtheta = Eigen::Vector2d(d.d3k_dt2_dell, d.d3k_dt2_dnu);
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// ScaledMaternModel
// ---------------------------------------------------------------------------

std::string ScaledMaternModel::name() const {
  std::ostringstream os;
  os << "sigma2 * matern(ell=" << base_.ell << ", nu=" << base_.nu << ")";
  return os.str();
}

void ScaledMaternModel::validate(const Eigen::VectorXd& theta) const {
  if (theta.size() != 1 || !(theta[0] > 0.0) || !std::isfinite(theta[0])) {
    throw std::invalid_argument("ScaledMaternModel: variance must be positive");
  }
}

double ScaledMaternModel::value(const Eigen::VectorXd& theta, double r) const {
  return theta[0] * matern(base_, r);
}

double ScaledMaternModel::value_and_gradient(const Eigen::VectorXd& theta, double r,
                                             std::span<double> grad) const {
  const double k = matern(base_, r);
  grad[0] = k;
  return theta[0] * k;
}

void ScaledMaternModel::evaluate_batch(const Eigen::VectorXd& theta, std::span<const double> r,
                                       std::span<double> k, std::span<double> grad) const {
  validate(theta);
  const double alpha = 2.0 * std::sqrt(base_.nu) / base_.ell;
  const double lc = log_norm(base_.nu);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double ri = std::abs(r[i]);
    const double kt = ri < kZeroLag ? 1.0 : matern_terms(base_.nu, lc, alpha * ri).a;
    grad[i] = kt;
    k[i] = theta[0] * kt;
  }
}

LagDerivatives ScaledMaternModel::lag_derivatives(const Eigen::VectorXd& theta, double t) const {
  const MaternLagDerivs d = matern_lag_derivs(base_, t);
  LagDerivatives out;
  out.dk_dt = theta[0] * d.dk_dt;
  out.d2k_dt2 = theta[0] * d.d2k_dt2;
  out.d2k_dt_dtheta = Eigen::VectorXd::Constant(1, d.dk_dt);
  out.d3k_dt2_dtheta = Eigen::VectorXd::Constant(1, d.d2k_dt2);
  return out;
}

}  // namespace gpgrid
