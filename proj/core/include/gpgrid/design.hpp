#ifndef GPGRID_DESIGN_HPP
#define GPGRID_DESIGN_HPP

#include <cstdint>
#include <iosfwd>

#include <Eigen/Core>

namespace gpgrid {

/// Row-major integer grid points, one point per row.
using GridPoints = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Real points, one per row.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// First N^d points of the nested-shell enumeration of {1..N}^d.
///
/// Shell M holds the points of {1..M}^d whose largest coordinate equals M, in
/// lexicographic order, so every prefix of length M^d is exactly {1..M}^d.
/// Throws std::overflow_error when N^d does not fit the index range.
GridPoints grid_enumeration(int side, int dim);

/// Smallest N with N^d >= n.
int grid_side_for(std::int64_t n, int dim);

enum class PerturbationLaw { kUniform };

/// Observation points v_i + epsilon * X_i on the perturbed regular grid.
struct PerturbedDesign {
  int dim = 1;
  int grid_side = 0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  GridPoints grid;            // v_i
  PointMatrix perturbations;  // X_i in [-1, 1]^d
  PointMatrix points;         // v_i + epsilon X_i

  [[nodiscard]] Eigen::Index size() const { return points.rows(); }
};

/// Draws X_i iid from `law` on [-1, 1]^d with the given seed and forms the
/// first n points. Deterministic in (n, d, epsilon, seed); the perturbations
/// do not depend on epsilon, so designs at different epsilon with the same
/// seed share their random numbers. Throws std::invalid_argument unless
/// 0 <= epsilon < 1/2.
PerturbedDesign sample_design(std::int64_t n, int dim, double epsilon, std::uint64_t seed,
                              PerturbationLaw law = PerturbationLaw::kUniform);

/// Design with explicit grid points and perturbations (tests, replays).
PerturbedDesign make_design(GridPoints grid, PointMatrix perturbations, double epsilon);

/// Same perturbations, different epsilon.
PerturbedDesign with_epsilon(const PerturbedDesign& design, double epsilon);

/// Design built from -X_i: the law of the design at -epsilon.
PerturbedDesign mirrored(const PerturbedDesign& design);

/// Minimum sup-norm distance between points with distinct grid anchors.
double min_sup_spacing(const PerturbedDesign& design);

/// CSV with columns index, v1..vd, x1..xd, p1..pd.
void write_design_csv(std::ostream& os, const PerturbedDesign& design);

}  // namespace gpgrid

#endif  // GPGRID_DESIGN_HPP
