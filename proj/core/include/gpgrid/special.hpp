#ifndef GPGRID_SPECIAL_HPP
#define GPGRID_SPECIAL_HPP

namespace gpgrid {

/// Modified Bessel function of the second kind K_nu(x) for real order nu > 0
/// and argument x > 0.
///
/// Uses Temme's series for x < 2 and Steed's continued fraction (CF2) for
/// x >= 2 on the reduced order |mu| <= 1/2, followed by upward recurrence in
/// the order. Throws std::domain_error for nu <= 0 or x <= 0 and
/// std::range_error when the result is not representable as a double.
double bessel_k(double nu, double x);

/// e^x K_nu(x). Same domain as bessel_k but never underflows for large x.
double bessel_k_scaled(double nu, double x);

/// Pair of exponentially scaled values e^x K_nu(x), e^x K_{nu+1}(x).
struct BesselKPair {
  double k_nu;
  double k_nu1;
};

namespace detail {

/// Scaled K_nu and K_{nu+1} for nu >= 0 (order 0 allowed) and x > 0.
/// No argument validation.
BesselKPair bessel_k_pair_scaled(double nu, double x);

}  // namespace detail

}  // namespace gpgrid

#endif  // GPGRID_SPECIAL_HPP
