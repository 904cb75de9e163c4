#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cme/spline.hpp"

namespace cme {

struct SignalVector;

enum class SmootherMethod { bspline, loess };
const char* to_string(SmootherMethod m);
SmootherMethod parse_smoother(const std::string& s);

struct SmootherSpec {
  SmootherMethod method = SmootherMethod::bspline;
  int degree = 3;
  int df = 6;
  std::optional<SplineBasis> basis;  // frozen knots; otherwise quantiles of x
  std::optional<double> span;        // loess; chosen by cv_span when empty
  std::vector<double> span_grid{0.2, 0.35, 0.5, 0.75, 1.0};
  int cv_folds = 10;
  std::uint64_t seed = 0;
  int discrete_max_levels = 5;  // at most this many distinct x values: group means
  bool uniform_kernel = false;  // loess weights 1 inside the window instead of tricube
  void validate() const;
};

//! A fitted projection written as a linear smoother,
//!   theta(grid_j) = sum_i L(j, i) s_i,
//! where s is the signal (or residualized outcome). u holds the score
//! residuals used by the variance formulas. For the spline path the
//! components of the Jacobian form are kept as well.
struct ProjectorState {
  enum class Kind { series, local, groups };
  Kind kind = Kind::series;
  Eigen::VectorXd grid;
  Eigen::VectorXd theta;
  Eigen::MatrixXd L;  // grid x n
  Eigen::VectorXd u;  // n
  // series only
  Eigen::MatrixXd Q;       // n x m regressors q_i
  Eigen::MatrixXd P_grid;  // grid x m
  Eigen::VectorXd beta;
  Eigen::MatrixXd J;
  bool ridge_used = false;
  SplineBasis basis;
  // loess only
  double span = 0.0;
  int n() const { return static_cast<int>(u.size()); }
};

struct Projection {
  Eigen::VectorXd grid;
  Eigen::VectorXd theta;
  ProjectorState state;
};

//! Least-squares projection of a signal on functions of x. With few distinct
//! x values the grid is replaced by those values and theta is the group mean.
Projection project_signal(const Eigen::VectorXd& lambda, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& grid, const SmootherSpec& spec);
Projection project_signal(const SignalVector& signal, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& grid, const SmootherSpec& spec);

//! Varying-coefficient fit of y_tilde on d_tilde * p(x).
Projection project_residuals(const Eigen::VectorXd& y_tilde, const Eigen::VectorXd& d_tilde,
                             const Eigen::VectorXd& x, const Eigen::VectorXd& grid,
                             const SmootherSpec& spec);

//! Out-of-fold MSE of the loess smoother for every span in span_grid
//! (infinite when a held-out point has too few neighbours).
std::vector<double> span_cv_errors(const Eigen::VectorXd& target, const std::optional<Eigen::VectorXd>& d_tilde,
                                   const Eigen::VectorXd& x, const std::vector<double>& span_grid,
                                   int cv_folds, std::uint64_t seed);
//! Span with the smallest out-of-fold MSE; ties go to the smaller span.
//! d_tilde present: residual problem, otherwise signal problem.
double cv_span(const Eigen::VectorXd& target, const std::optional<Eigen::VectorXd>& d_tilde,
               const Eigen::VectorXd& x, const std::vector<double>& span_grid, int cv_folds,
               std::uint64_t seed);

//! Tricube kernel (1 - |u|^3)^3 on |u| < 1.
double tricube(double u);

}  // namespace cme
