#include "gpgrid/design.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "gpgrid/random.hpp"

namespace gpgrid {
namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0) || !(epsilon < 0.5)) {
    throw std::invalid_argument(
        "epsilon must lie in [0, 1/2): the minimal spacing 1 - 2 epsilon of the perturbed grid must stay positive");
  }
}

std::int64_t checked_power(std::int64_t base, int exponent) {
  std::int64_t out = 1;
  for (int k = 0; k < exponent; ++k) {
    if (out > std::numeric_limits<Eigen::Index>::max() / base) {
      throw std::overflow_error("grid size N^d exceeds the index range");
    }
    out *= base;
  }
  return out;
}

}  // namespace

GridPoints grid_enumeration(int side, int dim) {
  if (side < 1 || dim < 1) throw std::invalid_argument("grid_enumeration: side and dimension must be >= 1");
  const std::int64_t total = checked_power(side, dim);
  GridPoints out(total, dim);
  Eigen::Index row = 0;
  std::vector<int> v(dim);
  for (int shell = 1; shell <= side; ++shell) {
    // Lexicographic sweep over {1..shell}^d keeping points that touch the shell.
    std::fill(v.begin(), v.end(), 1);
    while (true) {
      bool on_shell = false;
      for (int c : v) on_shell = on_shell || c == shell;
      if (on_shell) {
        for (int k = 0; k < dim; ++k) out(row, k) = v[k];
        ++row;
      }
      int k = dim - 1;
      while (k >= 0 && v[k] == shell) {
        v[k] = 1;
        --k;
      }
      if (k < 0) break;
      ++v[k];
    }
  }
  return out;
}

int grid_side_for(std::int64_t n, int dim) {
  if (n < 1 || dim < 1) throw std::invalid_argument("grid_side_for: n and dimension must be >= 1");
  int side = std::max(1, static_cast<int>(std::floor(std::pow(static_cast<double>(n), 1.0 / dim))) - 1);
  while (checked_power(side, dim) < n) ++side;
  return side;
}

PerturbedDesign make_design(GridPoints grid, PointMatrix perturbations, double epsilon) {
  check_epsilon(epsilon);
  if (grid.rows() != perturbations.rows() || grid.cols() != perturbations.cols() || grid.cols() < 1) {
    throw std::invalid_argument("make_design: grid and perturbations must have equal non-empty shape");
  }
  if ((perturbations.array().abs() > 1.0).any()) {
    throw std::invalid_argument("make_design: perturbations must lie in [-1, 1]^d");
  }
  PerturbedDesign d;
  d.dim = static_cast<int>(grid.cols());
  d.grid_side = grid.size() == 0 ? 0 : grid.maxCoeff();
  d.epsilon = epsilon;
  d.grid = std::move(grid);
  d.perturbations = std::move(perturbations);
  d.points = d.grid.cast<double>() + epsilon * d.perturbations;
  return d;
}

PerturbedDesign sample_design(std::int64_t n, int dim, double epsilon, std::uint64_t seed, PerturbationLaw law) {
  check_epsilon(epsilon);
  const int side = grid_side_for(n, dim);
  GridPoints grid = grid_enumeration(side, dim).topRows(n);
  PointMatrix x(n, dim);
  Rng rng(seed);
  switch (law) {
    case PerturbationLaw::kUniform:
      for (Eigen::Index i = 0; i < n; ++i) {
        for (int k = 0; k < dim; ++k) x(i, k) = rng.uniform(-1.0, 1.0);
      }
      break;
  }
  PerturbedDesign d = make_design(std::move(grid), std::move(x), epsilon);
  d.grid_side = side;
  d.seed = seed;
  return d;
}

PerturbedDesign with_epsilon(const PerturbedDesign& design, double epsilon) {
  check_epsilon(epsilon);
  PerturbedDesign d = design;
  d.epsilon = epsilon;
  d.points = d.grid.cast<double>() + epsilon * d.perturbations;
  return d;
}

PerturbedDesign mirrored(const PerturbedDesign& design) {
  PerturbedDesign d = design;
  d.perturbations = -design.perturbations;
  d.points = d.grid.cast<double>() + d.epsilon * d.perturbations;
  return d;
}

double min_sup_spacing(const PerturbedDesign& design) {
  double best = std::numeric_limits<double>::infinity();
  const Eigen::Index n = design.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if ((design.grid.row(i).array() == design.grid.row(j).array()).all()) continue;
      best = std::min(best, (design.points.row(i) - design.points.row(j)).cwiseAbs().maxCoeff());
    }
  }
  return best;
}

void write_design_csv(std::ostream& os, const PerturbedDesign& design) {
  os << "index";
  for (int k = 1; k <= design.dim; ++k) os << ",v" << k;
  for (int k = 1; k <= design.dim; ++k) os << ",x" << k;
  for (int k = 1; k <= design.dim; ++k) os << ",p" << k;
  os << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < design.size(); ++i) {
    os << i;
    for (int k = 0; k < design.dim; ++k) os << ',' << design.grid(i, k);
    for (int k = 0; k < design.dim; ++k) os << ',' << design.perturbations(i, k);
    for (int k = 0; k < design.dim; ++k) os << ',' << design.points(i, k);
    os << '\n';
  }
}

}  // namespace gpgrid
