#include "cme/spline.hpp"

#include <algorithm>

#include "cme/errors.hpp"
#include "cme/stats.hpp"

namespace cme {

std::vector<double> SplineBasis::knot_vector() const {
  std::vector<double> t;
  t.reserve(interior_knots.size() + 2 * (degree + 1));
  t.insert(t.end(), degree + 1, lo);
  t.insert(t.end(), interior_knots.begin(), interior_knots.end());
  t.insert(t.end(), degree + 1, hi);
  return t;
}

SplineBasis quantile_spline(const Eigen::VectorXd& x, int degree, int basis_df) {
  require(degree >= 0, "spline degree must be >= 0");
  require(basis_df >= degree, "spline df must be at least the degree");
  require(x.size() >= 1, "spline needs data");
  SplineBasis b;
  b.degree = degree;
  b.lo = x.minCoeff();
  b.hi = x.maxCoeff();
  const int n_interior = basis_df - degree;
  std::vector<double> probs;
  for (int j = 1; j <= n_interior; ++j) probs.push_back(static_cast<double>(j) / (n_interior + 1));
  std::vector<double> v(x.data(), x.data() + x.size());
  b.interior_knots = quantiles(std::move(v), probs);
  return b;
}

Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x, const SplineBasis& basis) {
  const int p = basis.degree;
  const std::vector<double> t = basis.knot_vector();
  const int m = basis.df();
  require(basis.hi >= basis.lo, "spline boundary must satisfy lo <= hi");
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(x.size(), m);
  if (basis.hi == basis.lo) {
    B.col(0).setOnes();
    return B;
  }
  std::vector<double> N(p + 1), left(p + 1), right(p + 1);
  for (Eigen::Index r = 0; r < x.size(); ++r) {
    const double u = std::clamp(x(r), basis.lo, basis.hi);
    // last span with t[span] <= u < t[span+1]; the right boundary uses the last nonempty span
    int span;
    if (u >= basis.hi) {
      span = m - 1;
      while (span > p && t[span] >= t[span + 1]) --span;
    } else {
      span = static_cast<int>(std::upper_bound(t.begin(), t.end(), u) - t.begin()) - 1;
      span = std::clamp(span, p, m - 1);
    }
    N[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = u - t[span + 1 - j];
      right[j] = t[span + j] - u;
      double saved = 0.0;
      for (int k = 0; k < j; ++k) {
        const double denom = right[k + 1] + left[j - k];
        const double temp = denom != 0.0 ? N[k] / denom : 0.0;
        N[k] = saved + right[k + 1] * temp;
        saved = left[j - k] * temp;
      }
      N[j] = saved;
    }
    for (int j = 0; j <= p; ++j) B(r, span - p + j) = N[j];
  }
  return B;
}

}  // namespace cme
