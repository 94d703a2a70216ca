#include "gpgrid/special.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gpgrid {
namespace {

constexpr double kEps = 1.0e-16;
constexpr int kMaxIter = 10000;
constexpr double kSeriesSwitch = 2.0;

// Taylor coefficients of 1/Gamma(z) = sum_k c_k z^k (Abramowitz & Stegun 6.1.34).
constexpr std::array<double, 26> kRecipGamma = {
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
};

struct TemmeGammas {
  double gam1;  // (1/G(1-mu) - 1/G(1+mu)) / (2 mu)
  double gam2;  // (1/G(1-mu) + 1/G(1+mu)) / 2
  double gampl; // 1/G(1+mu)
  double gammi; // 1/G(1-mu)
};

// |mu| <= 1/2. Even/odd splitting of the reciprocal gamma series avoids the
// cancellation in gam1 at small mu.
TemmeGammas temme_gammas(double mu) {
  const double mu2 = mu * mu;
  double gam1 = 0.0;
  double gam2 = 0.0;
  double pw = 1.0;
  for (std::size_t k = 0; k + 1 < kRecipGamma.size(); k += 2) {
    gam2 += kRecipGamma[k] * pw;        // c_1, c_3, ... times mu^{0,2,...}
    gam1 -= kRecipGamma[k + 1] * pw;    // c_2, c_4, ... times mu^{0,2,...}
    pw *= mu2;
  }
  return {gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1};
}

// K_mu(x), K_{mu+1}(x) scaled by e^x for |mu| <= 1/2, x < 2.
BesselKPair temme_series(double mu, double x) {
  const double mu2 = mu * mu;
  const double x2 = 0.5 * x;
  const double pimu = std::numbers::pi * mu;
  const double fact = std::abs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
  double d = -std::log(x2);
  double e = mu * d;
  const double fact2 = std::abs(e) < kEps ? 1.0 : std::sinh(e) / e;
  const TemmeGammas g = temme_gammas(mu);
  double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
  double sum = ff;
  e = std::exp(e);
  double p = 0.5 * e / g.gampl;
  double q = 0.5 / (e * g.gammi);
  double c = 1.0;
  d = x2 * x2;
  double sum1 = p;
  int i = 1;
  for (; i <= kMaxIter; ++i) {
    const double di = i;
    ff = (di * ff + p + q) / (di * di - mu2);
    c *= d / di;
    p /= di - mu;
    q /= di + mu;
    const double del = c * ff;
    sum += del;
    const double del1 = c * (p - di * ff);
    sum1 += del1;
    if (std::abs(del) < std::abs(sum) * kEps) break;
  }
  if (i > kMaxIter) throw std::runtime_error("bessel_k: Temme series did not converge");
  const double scale = std::exp(x);
  return {sum * scale, sum1 * (2.0 / x) * scale};
}

// Steed's method for CF2 (Temme's normalisation), x >= 2.
BesselKPair steed_cf2(double mu, double x) {
  const double mu2 = mu * mu;
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25 - mu2;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  int i = 2;
  for (; i <= kMaxIter; ++i) {
    a -= 2.0 * (i - 1);
    c = -a * c / i;
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < kEps) break;
  }
  if (i > kMaxIter) throw std::runtime_error("bessel_k: continued fraction did not converge");
  h *= a1;
  const double kmu = std::sqrt(std::numbers::pi / (2.0 * x)) / s;
  const double kmu1 = kmu * (mu + x + 0.5 - h) / x;
  return {kmu, kmu1};
}

void check_domain(double nu, double x) {
  if (!(nu > 0.0) || !std::isfinite(nu)) {
    throw std::domain_error("bessel_k: order must be positive and finite, got " + std::to_string(nu));
  }
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::domain_error("bessel_k: argument must be positive and finite, got " + std::to_string(x));
  }
}

}  // namespace

namespace detail {

BesselKPair bessel_k_pair_scaled(double nu, double x) {
  const int nl = static_cast<int>(nu + 0.5);
  const double mu = nu - nl;
  BesselKPair k = x < kSeriesSwitch ? temme_series(mu, x) : steed_cf2(mu, x);
  const double two_over_x = 2.0 / x;
  for (int i = 1; i <= nl; ++i) {
    const double next = (mu + i) * two_over_x * k.k_nu1 + k.k_nu;
    k.k_nu = k.k_nu1;
    k.k_nu1 = next;
  }
  return k;
}

}  // namespace detail

double bessel_k_scaled(double nu, double x) {
  check_domain(nu, x);
  const double v = detail::bessel_k_pair_scaled(nu, x).k_nu;
  if (!std::isfinite(v)) throw std::range_error("bessel_k_scaled: overflow");
  return v;
}

double bessel_k(double nu, double x) {
  const double scaled = bessel_k_scaled(nu, x);
  const double log_value = std::log(scaled) - x;
  if (log_value < std::log(std::numeric_limits<double>::min())) {
    throw std::range_error("bessel_k: result underflows (x = " + std::to_string(x) + ")");
  }
  if (log_value > std::log(std::numeric_limits<double>::max())) {
    throw std::range_error("bessel_k: result overflows");
  }
  return scaled * std::exp(-x);
}

}  // namespace gpgrid
