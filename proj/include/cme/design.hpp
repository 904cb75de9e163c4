#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cme/spline.hpp"

namespace cme {

struct Dataset;

//! Frozen recipe for the basis expansion psi(V): one block per variable
//! (spline block without its first function, or the raw column for 0/1
//! variables) plus optional products of every pair of blocks. Knots are
//! fixed when the spec is built, so applying it to resampled rows reuses them.
struct DesignSpec {
  struct Block {
    std::string name;
    bool binary = false;
    bool raw = false;
    SplineBasis basis;
  };
  std::vector<Block> blocks;
  bool interactions = false;
  bool intercept = true;
};

struct DesignMatrix {
  Eigen::MatrixXd X;               // includes the intercept column when has_intercept
  std::vector<std::string> names;  // one per column
  bool has_intercept = true;

  //! Columns without the intercept.
  Eigen::MatrixXd slopes() const { return has_intercept ? Eigen::MatrixXd(X.rightCols(X.cols() - 1)) : X; }
};

//! expanded: spline blocks (degree, basis_df); otherwise raw columns.
DesignSpec fit_design(const Eigen::MatrixXd& V, const std::vector<std::string>& names,
                      bool interactions, bool expanded = true, int degree = 3, int basis_df = 6);
DesignMatrix apply_design(const DesignSpec& spec, const Eigen::MatrixXd& V);

DesignMatrix expand_design(const Dataset& ds, bool include_interactions);

std::vector<std::string> covariate_names(const Dataset& ds);

}  // namespace cme
