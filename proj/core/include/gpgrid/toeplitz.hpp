#ifndef GPGRID_TOEPLITZ_HPP
#define GPGRID_TOEPLITZ_HPP

#include <functional>
#include <iosfwd>
#include <span>
#include <string>

#include <Eigen/Core>

#include "gpgrid/covariance.hpp"

namespace gpgrid {

/// Exponential envelope |s_i| <= C exp(-a |i|) fitted on i = 1..40.
struct DecayFit {
  double rate = 0.0;      // a
  double constant = 0.0;  // C
  double residual = 0.0;  // max abs residual of the log-linear fit
};

/// Transforms of the covariance sequences of a one-parameter family on Z,
/// sampled on omega_k = -pi + 2 pi k / m. With s_hat(w) = sum_i s_i e^{i i w}:
///   f        <- K(i)                     even, >= 0
///   f_theta  <- dK/dtheta(i)             even
///   i f_t    <- dK/dt(i) 1{i != 0}       f_t odd (stored as the real factor)
///   i f_t_theta <- d2K/dt dtheta(i) 1{i != 0}
///   f_tt     <- d2K/dt2(i) 1{i != 0}     even
///   f_tt_theta <- d3K/dt2 dtheta(i) 1{i != 0}
struct SpectralSequences {
  std::string model;
  Eigen::VectorXd theta0;
  int m = 0;
  int n_max = 0;
  DecayFit decay;
  double tail_bound = 0.0;
  Eigen::ArrayXd omega;
  Eigen::ArrayXd f;
  Eigen::ArrayXd f_theta;
  Eigen::ArrayXd f_t;
  Eigen::ArrayXd f_t_theta;
  Eigen::ArrayXd f_tt;
  Eigen::ArrayXd f_tt_theta;
};

/// Raw sequences s_i for i = 0..n_max, one column per transform above.
Eigen::MatrixXd covariance_sequences(const CovarianceModel& model, const Eigen::VectorXd& theta0, int n_max);

/// Log-linear fit of max_k |s_{i,k}| over i = 1..40 (nonzero entries only).
/// Throws NumericalError if the fitted rate is not positive.
DecayFit fit_decay(const CovarianceModel& model, const Eigen::VectorXd& theta0);

/// Smallest N >= 40 with 2 C e^{-a (N + 1)} / (1 - e^{-a}) < tol.
int truncation_radius(const DecayFit& fit, double tol = 1e-14);

/// Requires a one-parameter model. `n_max` = 0 picks the radius from the
/// decay fit.
SpectralSequences build_spectra(const CovarianceModel& model, const Eigen::VectorXd& theta0, int m = 8192,
                                int n_max = 0);

/// Mean of a sampled periodic function on the uniform grid.
double mean_value(std::span<const double> g);
double mean_value(const Eigen::ArrayXd& g);

/// Mean of g over [-pi, pi] on uniform grids of m0, 2 m0, ... points until
/// the relative change drops below rel_tol.
double mean_value(const std::function<double(double)>& g, double rel_tol = 1e-10, int m0 = 64,
                  int max_m = 1 << 22);

struct ClosedFormSigmas {
  double ml = 0.0;
  double cv1 = 0.0;
  double cv2 = 0.0;

  /// Asymptotic variances 1 / Sigma_ML and Sigma_CV1 / Sigma_CV2^2.
  [[nodiscard]] double var_ml() const { return 1.0 / ml; }
  [[nodiscard]] double var_cv() const { return cv1 / (cv2 * cv2); }
};

/// Sigma_ML, Sigma_CV1, Sigma_CV2 of the regular grid in d = 1. Throws
/// NumericalError if min f <= 1e-12 or if Sigma_CV2 comes out negative.
ClosedFormSigmas closed_form_sigmas(const SpectralSequences& s);

/// d2 Sigma_ML / d eps2 at eps = 0.
double closed_form_d2_sigma_ml(const SpectralSequences& s);

/// Var''(0) / Var(0) for Var = 1 / Sigma_ML, using Sigma'(0) = 0:
/// -Sigma''(0) / Sigma(0).
double closed_form_var_ratio_ml(const SpectralSequences& s);

void write_spectra_json(std::ostream& os, const SpectralSequences& s, bool include_samples = false);

}  // namespace gpgrid

#endif  // GPGRID_TOEPLITZ_HPP
