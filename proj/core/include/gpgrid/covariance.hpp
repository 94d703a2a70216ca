#ifndef GPGRID_COVARIANCE_HPP
#define GPGRID_COVARIANCE_HPP

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gpgrid {

/// Compact parameter domain [lower, upper] (componentwise).
class ParamBox {
 public:
  ParamBox(Eigen::VectorXd lower, Eigen::VectorXd upper);

  [[nodiscard]] Eigen::Index size() const { return lower_.size(); }
  [[nodiscard]] const Eigen::VectorXd& lower() const { return lower_; }
  [[nodiscard]] const Eigen::VectorXd& upper() const { return upper_; }

  [[nodiscard]] bool contains(const Eigen::VectorXd& theta) const;
  /// Strictly inside, with a relative margin of `rel_margin` of the box width.
  [[nodiscard]] bool interior(const Eigen::VectorXd& theta, double rel_margin = 0.0) const;
  [[nodiscard]] Eigen::VectorXd project(const Eigen::VectorXd& theta) const;

 private:
  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
};

struct MaternParams {
  double ell = 1.0;
  double nu = 1.5;

  void validate() const;
};

/// Lag derivatives of a one-dimensional stationary covariance at t != 0.
/// The theta-derivatives are ordered as the model's parameter vector.
struct LagDerivatives {
  double dk_dt = 0.0;
  double d2k_dt2 = 0.0;
  Eigen::VectorXd d2k_dt_dtheta;
  Eigen::VectorXd d3k_dt2_dtheta;
};

/// Stationary isotropic covariance family K_theta(t) = k_theta(|t|).
///
/// Implementations must be thread-safe (all methods const and free of
/// mutable state).
class CovarianceModel {
 public:
  virtual ~CovarianceModel() = default;

  [[nodiscard]] virtual std::size_t num_params() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual std::vector<std::string> param_names() const = 0;
  /// True when K_theta(0) = 1 for every theta (a correlation family).
  [[nodiscard]] virtual bool unit_variance() const = 0;

  /// Throws std::invalid_argument if theta is outside the family's domain.
  virtual void validate(const Eigen::VectorXd& theta) const = 0;

  /// K_theta at Euclidean distance r >= 0.
  [[nodiscard]] virtual double value(const Eigen::VectorXd& theta, double r) const = 0;

  /// K_theta(r), writing dK/dtheta_k into grad (size num_params()).
  virtual double value_and_gradient(const Eigen::VectorXd& theta, double r,
                                    std::span<double> grad) const = 0;

  /// Values K_theta(r_i) and their gradients for many distances at once.
  /// `grad` is parameter-major: grad[k * r.size() + i] = dK/dtheta_k(r_i).
  virtual void evaluate_batch(const Eigen::VectorXd& theta, std::span<const double> r, std::span<double> k,
                              std::span<double> grad) const;

  /// Values only; the default loops over value().
  virtual void evaluate_values(const Eigen::VectorXd& theta, std::span<const double> r, std::span<double> k) const;

  /// Lag derivatives in d = 1. Throws std::domain_error at t = 0.
  [[nodiscard]] virtual LagDerivatives lag_derivatives(const Eigen::VectorXd& theta, double t) const = 0;
};

// ---------------------------------------------------------------------------
// Matern family
// ---------------------------------------------------------------------------

/// K_{ell,nu}(t) = (2 sqrt(nu) |t| / ell)^nu K_nu(2 sqrt(nu) |t| / ell) / (Gamma(nu) 2^{nu-1}).
double matern(const MaternParams& p, double r);
double matern(const MaternParams& p, std::span<const double> lag);

/// dK/dnu by Richardson-extrapolated central differences in nu.
double matern_dnu(const MaternParams& p, double r);

/// dK/dell, analytic.
double matern_dell(const MaternParams& p, double r);

struct MaternLagDerivs {
  double dk_dt;
  double d2k_dt2;
  double d2k_dt_dell;
  double d2k_dt_dnu;
  double d3k_dt2_dell;
  double d3k_dt2_dnu;
};

/// All lag derivatives needed by the d = 1 spectral closed forms.
/// Throws std::domain_error for t == 0.
MaternLagDerivs matern_lag_derivs(const MaternParams& p, double t);

enum class MaternFree { kEll, kNu, kBoth };

/// Matern family with either one parameter free (the other held fixed) or both.
/// The parameter vector is (ell), (nu) or (ell, nu) accordingly.
class MaternModel final : public CovarianceModel {
 public:
  MaternModel(MaternFree free, MaternParams fixed = {});

  static MaternModel ell_only(double nu) { return {MaternFree::kEll, {1.0, nu}}; }
  static MaternModel nu_only(double ell) { return {MaternFree::kNu, {ell, 1.0}}; }
  static MaternModel joint() { return {MaternFree::kBoth, {}}; }

  [[nodiscard]] MaternFree free() const { return free_; }
  [[nodiscard]] MaternParams unpack(const Eigen::VectorXd& theta) const;
  [[nodiscard]] Eigen::VectorXd pack(const MaternParams& p) const;

  [[nodiscard]] std::size_t num_params() const override;
  [[nodiscard]] std::string name() const override;
  [[nodiscard]] std::vector<std::string> param_names() const override;
  [[nodiscard]] bool unit_variance() const override { return true; }
  void validate(const Eigen::VectorXd& theta) const override;
  [[nodiscard]] double value(const Eigen::VectorXd& theta, double r) const override;
  double value_and_gradient(const Eigen::VectorXd& theta, double r, std::span<double> grad) const override;
  void evaluate_batch(const Eigen::VectorXd& theta, std::span<const double> r, std::span<double> k,
                      std::span<double> grad) const override;
  void evaluate_values(const Eigen::VectorXd& theta, std::span<const double> r, std::span<double> k) const override;
  [[nodiscard]] LagDerivatives lag_derivatives(const Eigen::VectorXd& theta, double t) const override;

 private:
  MaternFree free_;
  MaternParams fixed_;
};

/// Pure-variance family sigma2 * K(t) with K a fixed Matern correlation.
/// The single parameter is sigma2. Used for degenerate-case checks.
class ScaledMaternModel final : public CovarianceModel {
 public:
  explicit ScaledMaternModel(MaternParams base) : base_(base) { base_.validate(); }

  [[nodiscard]] const MaternParams& base() const { return base_; }

  [[nodiscard]] std::size_t num_params() const override { return 1; }
  [[nodiscard]] std::string name() const override;
  [[nodiscard]] std::vector<std::string> param_names() const override { return {"sigma2"}; }
  [[nodiscard]] bool unit_variance() const override { return false; }
  void validate(const Eigen::VectorXd& theta) const override;
  [[nodiscard]] double value(const Eigen::VectorXd& theta, double r) const override;
  double value_and_gradient(const Eigen::VectorXd& theta, double r, std::span<double> grad) const override;
  void evaluate_batch(const Eigen::VectorXd& theta, std::span<const double> r, std::span<double> k,
                      std::span<double> grad) const override;
  [[nodiscard]] LagDerivatives lag_derivatives(const Eigen::VectorXd& theta, double t) const override;

 private:
  MaternParams base_;
};

}  // namespace gpgrid

#endif  // GPGRID_COVARIANCE_HPP
