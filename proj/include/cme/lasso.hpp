#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "cme/linear.hpp"

namespace cme {

enum class Family { gaussian, binomial };

//! Sweeps stop when the largest curvature-weighted squared coefficient
//! change falls below tol times the null deviance per row.
constexpr double kLassoTol = 1e-7;

struct LassoOptions {
  int n_lambda = 100;
  double lambda_min_ratio = 1e-3;
  int k_cv = 10;
  std::uint64_t seed = 0;
  double tol = kLassoTol;
};

//! Penalized fits along a descending lambda sequence. Objectives:
//!   gaussian  (1/2n) sum (y - b0 - x'b)^2 + lambda |b|_1
//!   binomial  -(1/n) loglik(b0, b)        + lambda |b|_1
//! Columns are centered and scaled to unit (population) variance before
//! penalization; the intercept is never penalized. coefs holds one column per
//! lambda in the original scale, intercept in row 0.
struct LassoPath {
  Family family = Family::gaussian;
  Eigen::VectorXd lambdas;
  Eigen::MatrixXd coefs;
  Eigen::VectorXd cv_mse;  // empty when no cross-validation was run
  double lambda_min = 0.0;
  int index_min = -1;

  Eigen::VectorXd coef_min() const { return coefs.col(index_min); }
  int nonzeros(int index) const;
};

//! Smallest lambda with an all-zero solution.
double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family);
Eigen::VectorXd default_lambdas(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                                const LassoOptions& opt = {});

//! Path without cross-validation.
LassoPath lasso_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                     const Eigen::VectorXd& lambdas, double tol = kLassoTol);

//! Path plus k-fold cross-validation (MSE or mean binomial deviance).
//! lambda_min is the smallest lambda attaining the minimum. On the default
//! grid the path ends 10 lambdas after the last improvement of the CV loss;
//! an explicit lambda sequence is always run to the end.
LassoPath lasso_cd(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                   const std::optional<Eigen::VectorXd>& lambdas = std::nullopt,
                   const LassoOptions& opt = {});

struct LassoSingleFit {
  Eigen::VectorXd coef;           // intercept first
  std::vector<double> objective;  // penalized objective after every sweep
};

//! One lambda from a cold start with plain cyclic sweeps; for diagnostics.
LassoSingleFit lasso_single(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                            double lambda, double tol = kLassoTol);

//! Penalized objective evaluated at an original-scale coefficient vector.
double lasso_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                       double lambda, const Eigen::VectorXd& coef);

//! Nonzero slopes as column indices of X.
std::vector<int> selected_columns(const Eigen::VectorXd& coef_with_intercept);

//! Unpenalized OLS or logit on [1, X_selected]; unselected slopes are 0.
LinearFit post_selection_refit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const std::vector<int>& selected, Family family);

//! b0 + X b.
Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& X, const Eigen::VectorXd& coef_with_intercept);

}  // namespace cme
