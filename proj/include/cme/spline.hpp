#pragma once

#include <Eigen/Dense>
#include <vector>

namespace cme {

//! Clamped B-spline basis on [lo, hi]. The full basis has
//! interior_knots.size() + degree + 1 functions and sums to one everywhere
//! on the interval (the first function can absorb a constant).
struct SplineBasis {
  int degree = 3;
  std::vector<double> interior_knots;
  double lo = 0.0;
  double hi = 1.0;

  int df() const { return static_cast<int>(interior_knots.size()) + degree + 1; }
  std::vector<double> knot_vector() const;
};

//! Knots at equally spaced quantiles of x. basis_df follows the usual
//! "no intercept" count, so degree 3 with basis_df 6 places three interior
//! knots at the quartiles and yields a 7-function intercept-inclusive basis.
SplineBasis quantile_spline(const Eigen::VectorXd& x, int degree = 3, int basis_df = 6);

//! Cox-de Boor evaluation, one row per x and df() columns. Values outside
//! [lo, hi] are clamped to the nearest boundary.
Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x, const SplineBasis& basis);

}  // namespace cme
