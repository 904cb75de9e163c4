#include "cme/linear.hpp"

#include <cmath>

#include "cme/errors.hpp"
#include "cme/stats.hpp"

namespace cme {

namespace {

constexpr double kRidgeScale = 1e-10;
constexpr double kMinRcond = 1e-13;

double ridge_for(const Eigen::MatrixXd& A) {
  const double tr = A.trace();
  const double r = kRidgeScale * tr / static_cast<double>(A.rows());
  return r > 0 ? r : kRidgeScale;
}

}  // namespace

bool solve_spd(const Eigen::MatrixXd& A, const Eigen::MatrixXd& rhs, Eigen::MatrixXd& out,
               bool* ridge_used) {
  if (ridge_used) *ridge_used = false;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success && llt.rcond() > kMinRcond) {
    out = llt.solve(rhs);
    if (out.allFinite()) return true;
  }
  if (ridge_used) *ridge_used = true;
  Eigen::MatrixXd Ar = A;
  Ar.diagonal().array() += ridge_for(A);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(Ar);
  if (ldlt.info() != Eigen::Success) return false;
  out = ldlt.solve(rhs);
  return out.allFinite();
}

LinearFit wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
              bool with_vcov) {
  const Eigen::Index n = X.rows(), p = X.cols();
  require(y.size() == n && w.size() == n, "wls: X, y, w differ in length");
  require((w.array() >= 0.0).all(), "wls: weights must be nonnegative");
  require(p >= 1, "wls: design has no columns");

  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd Xw = X.array().colwise() * sw.array();
  const Eigen::VectorXd yw = y.cwiseProduct(sw);

  LinearFit fit;
  Eigen::MatrixXd A = Xw.transpose() * Xw;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  if (n >= p && qr.rank() == p) {
    fit.coef = qr.solve(yw);
  } else {
    Eigen::MatrixXd sol;
    bool ridge = false;
    if (!solve_spd(A, Xw.transpose() * yw, sol, &ridge))
      fail(ErrorCode::SingularDesign, "X'WX singular after ridge fallback");
    fit.coef = sol.col(0);
    fit.ridge_used = true;
  }
  if (!fit.coef.allFinite()) fail(ErrorCode::SingularDesign, "non-finite coefficients");
  fit.residuals = y - X * fit.coef;
  fit.selected.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) fit.selected[j] = static_cast<int>(j);

  if (with_vcov) {
    Eigen::MatrixXd bread;
    bool ridge = false;
    if (!solve_spd(A, Eigen::MatrixXd::Identity(p, p), bread, &ridge))
      fail(ErrorCode::SingularDesign, "X'WX singular after ridge fallback");
    const Eigen::MatrixXd M = X.array().colwise() * (w.array() * fit.residuals.array());
    const Eigen::MatrixXd meat = M.transpose() * M;
    const Eigen::Index n_eff = (w.array() > 0.0).count();
    const double dof = n_eff > p ? static_cast<double>(n_eff) / static_cast<double>(n_eff - p) : 1.0;
    fit.vcov = dof * bread * meat * bread;
    fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose());
  }
  return fit;
}

LinearFit ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, bool with_vcov) {
  return wls(X, y, Eigen::VectorXd::Ones(X.rows()), with_vcov);
}

Eigen::VectorXd logistic(const Eigen::VectorXd& eta) {
  Eigen::VectorXd p(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) p(i) = cme::logistic(eta(i));
  return p;
}

Eigen::VectorXd logit_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& d,
                            const Eigen::VectorXd& coef) {
  return X.transpose() * (d - logistic(X * coef));
}

namespace {

double bernoulli_loglik(const Eigen::VectorXd& d, const Eigen::VectorXd& eta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double e = eta(i);
    // log(1 + exp(e)) evaluated stably
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += d(i) * e - softplus;
  }
  return ll;
}

}  // namespace

LinearFit logit_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& d) {
  const Eigen::Index n = X.rows(), p = X.cols();
  require(d.size() == n, "logit: X and d differ in length");
  for (Eigen::Index i = 0; i < n; ++i)
    require(d(i) == 0.0 || d(i) == 1.0, "logit: response must be 0/1");
  if ((d.array() == d(0)).all()) fail(ErrorCode::DegenerateTarget, "logit: constant response");

  LinearFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);
  fit.converged = false;
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  double ll = bernoulli_loglik(d, eta);
  Eigen::MatrixXd H;
  for (int it = 0; it < kLogitMaxIter; ++it) {
    const Eigen::VectorXd prob = logistic(eta);
    const Eigen::VectorXd g = X.transpose() * (d - prob);
    const Eigen::VectorXd wt = prob.array() * (1.0 - prob.array());
    H = X.transpose() * (X.array().colwise() * wt.array()).matrix();
    fit.iterations = it;
    if (g.lpNorm<Eigen::Infinity>() < kLogitScoreTol) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd step;
    bool ridge = false;
    if (!solve_spd(H, g, step, &ridge)) break;
    fit.ridge_used = fit.ridge_used || ridge;
    double scale = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      const Eigen::VectorXd trial = fit.coef + scale * step.col(0);
      const Eigen::VectorXd trial_eta = X * trial;
      const double trial_ll = bernoulli_loglik(d, trial_eta);
      if (trial_ll >= ll) {
        improved = trial_ll > ll || scale == 1.0;
        fit.coef = trial;
        eta = trial_eta;
        ll = trial_ll;
        break;
      }
      scale *= 0.5;
    }
    if (fit.coef.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      fit.separated = true;
      break;
    }
    if (!improved) break;
  }
  if (fit.separated) {
    fit.coef = fit.coef.cwiseMax(-kSeparationBound).cwiseMin(kSeparationBound);
    eta = X * fit.coef;
  }
  const Eigen::VectorXd prob = logistic(eta);
  if (!fit.separated && ((d - prob).array().abs() < 1e-6).all()) fit.separated = true;
  if (!fit.converged && !fit.separated) {
    fit.converged = logit_score(X, d, fit.coef).lpNorm<Eigen::Infinity>() < kLogitScoreTol;
  }
  fit.residuals = d - prob;
  fit.selected.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) fit.selected[j] = static_cast<int>(j);
  const Eigen::VectorXd wt = prob.array() * (1.0 - prob.array());
  H = X.transpose() * (X.array().colwise() * wt.array()).matrix();
  Eigen::MatrixXd inv;
  if (solve_spd(H, Eigen::MatrixXd::Identity(p, p), inv))
    fit.vcov = 0.5 * (inv + inv.transpose());
  else
    fit.vcov = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::infinity());
  return fit;
}

}  // namespace cme
