#pragma once

#include <Eigen/Dense>
#include <vector>

namespace cme {

struct LinearFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;       // HC1 for least squares, inverse information for logit
  std::vector<int> selected;  // columns with a free coefficient
  Eigen::VectorXd residuals;  // y - X coef (response scale for logit)
  bool ridge_used = false;
  bool converged = true;
  bool separated = false;
  int iterations = 0;

  Eigen::VectorXd se() const { return vcov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

//! Weighted least squares. Rank-deficient X'WX gets one retry with a ridge of
//! 1e-10 * trace / dim; SingularDesign is thrown when that fails as well.
//! When with_vcov is false the HC1 sandwich is skipped.
LinearFit wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
              bool with_vcov = true);
LinearFit ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool with_vcov = true);

//! Solves the symmetric system A b = r with the same ridge fallback as wls.
//! Returns false when A is singular even after the ridge.
bool solve_spd(const Eigen::MatrixXd& A, const Eigen::MatrixXd& rhs, Eigen::MatrixXd& out,
               bool* ridge_used = nullptr);

constexpr double kLogitScoreTol = 1e-8;
constexpr int kLogitMaxIter = 100;
constexpr double kSeparationBound = 30.0;

//! Logistic regression by Newton-Raphson / IRLS with step halving.
//! Convergence: sup-norm of the log-likelihood gradient below 1e-8, at most
//! 100 iterations. Separation (|coef| > 30) stops the iterations and clips
//! the coefficients. A fit that reproduces every label to within 1e-6 is
//! also flagged as separated. Both conditions are flags on the fit.
LinearFit logit_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& d);

//! Log-likelihood gradient X'(d - p).
Eigen::VectorXd logit_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& d,
                            const Eigen::VectorXd& coef);

Eigen::VectorXd logistic(const Eigen::VectorXd& eta);

}  // namespace cme
