#include "cme/curve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cme/errors.hpp"
#include "cme/stats.hpp"

namespace cme {

bool CmeCurve::has_flag(const std::string& f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

void CmeCurve::add_flag(const std::string& f) {
  if (!has_flag(f)) flags.push_back(f);
}

void CmeCurve::validate() const {
  const auto k = grid.size();
  if (theta.size() != k || se.size() != k || ci_lo.size() != k || ci_hi.size() != k ||
      uci_lo.size() != k || uci_hi.size() != k)
    fail(ErrorCode::InvariantViolation, "curve vectors differ in length");
  for (Eigen::Index j = 1; j < k; ++j)
    if (!(grid(j) > grid(j - 1))) fail(ErrorCode::InvariantViolation, "grid not strictly increasing");
  for (Eigen::Index j = 0; j < k; ++j) {
    if (se(j) < 0) fail(ErrorCode::InvariantViolation, "negative standard error");
    if (std::isnan(theta(j))) continue;
    if (!(uci_lo(j) <= ci_lo(j) && ci_lo(j) <= ci_hi(j) && ci_hi(j) <= uci_hi(j)))
      fail(ErrorCode::InvariantViolation, "uniform band does not contain pointwise band at grid point " +
                                              std::to_string(j));
  }
}

CmeCurve make_curve(const Eigen::VectorXd& grid, const Eigen::VectorXd& theta,
                    const Eigen::VectorXd& se, const std::string& tag) {
  CmeCurve c;
  c.grid = grid;
  c.theta = theta;
  c.se = se;
  const double inf = std::numeric_limits<double>::infinity();
  c.ci_lo = Eigen::VectorXd::Constant(grid.size(), -inf);
  c.ci_hi = Eigen::VectorXd::Constant(grid.size(), inf);
  c.uci_lo = c.ci_lo;
  c.uci_hi = c.ci_hi;
  c.estimator_tag = tag;
  return c;
}

Eigen::VectorXd default_grid(const Eigen::VectorXd& x, int n) {
  require(x.size() > 0, "grid needs data");
  return linspace(x.minCoeff(), x.maxCoeff(), n);
}

}  // namespace cme
