#ifndef GPGRID_ERRORS_HPP
#define GPGRID_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gpgrid {

/// Numerical breakdown in dense linear algebra (failed factorization,
/// singular asymptotic matrix, degenerate spectrum).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cholesky factorization hit a non-positive pivot.
class FactorizationError : public NumericalError {
 public:
  FactorizationError(const std::string& what, long pivot) : NumericalError(what), pivot_(pivot) {}

  /// Zero-based index of the first non-positive pivot.
  [[nodiscard]] long pivot() const { return pivot_; }

 private:
  long pivot_;
};

}  // namespace gpgrid

#endif  // GPGRID_ERRORS_HPP
