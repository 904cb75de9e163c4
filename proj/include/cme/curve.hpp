#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

namespace cme {

//! Estimated CME on a grid with pointwise (ci) and uniform (uci) bands.
struct CmeCurve {
  Eigen::VectorXd grid;
  Eigen::VectorXd theta;
  Eigen::VectorXd se;
  Eigen::VectorXd ci_lo, ci_hi;
  Eigen::VectorXd uci_lo, uci_hi;
  std::string estimator_tag;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> flags;

  int size() const { return static_cast<int>(grid.size()); }
  bool has_flag(const std::string& f) const;
  void add_flag(const std::string& f);
  //! Throws InvariantViolation on a non-increasing grid, negative se or
  //! a uniform band that does not contain the pointwise band.
  void validate() const;
};

//! Curve with point estimates only; bands set to +-infinity around theta.
CmeCurve make_curve(const Eigen::VectorXd& grid, const Eigen::VectorXd& theta,
                    const Eigen::VectorXd& se, const std::string& tag);

//! Default evaluation grid: n equally spaced points over [min x, max x].
Eigen::VectorXd default_grid(const Eigen::VectorXd& x, int n = 50);

}  // namespace cme
