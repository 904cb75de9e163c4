#include "cme/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "cme/dataset.hpp"
#include "cme/errors.hpp"
#include "cme/stats.hpp"

namespace cme {

namespace {

constexpr double kMinWeight = 1e-5;
constexpr int kMaxOuter = 100;
constexpr int kMaxSweeps = 100000;
// CV stops descending the default grid after this many lambdas without improvement
constexpr int kCvPatience = 10;

double soft(double z, double g) {
  if (z > g) return z - g;
  if (z < -g) return z + g;
  return 0.0;
}

struct Standardized {
  Eigen::MatrixXd Xs;
  Eigen::VectorXd center, scale;
  std::vector<int> usable;
};

Standardized standardize(const Eigen::MatrixXd& X) {
  Standardized s;
  const Eigen::Index n = X.rows(), p = X.cols();
  s.center = X.colwise().mean().transpose();
  s.scale = Eigen::VectorXd::Ones(p);
  s.Xs = X.rowwise() - s.center.transpose();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double v = std::sqrt(s.Xs.col(j).squaredNorm() / static_cast<double>(n));
    if (v > 1e-12 * (1.0 + std::abs(s.center(j)))) {
      s.scale(j) = v;
      s.Xs.col(j) /= v;
      s.usable.push_back(static_cast<int>(j));
    } else {
      s.Xs.col(j).setZero();
    }
  }
  return s;
}

void check_family_target(const Eigen::VectorXd& y, Family family) {
  if (family == Family::binomial)
    for (Eigen::Index i = 0; i < y.size(); ++i)
      require(y(i) == 0.0 || y(i) == 1.0, "binomial lasso needs a 0/1 response");
}

double softplus(double e) { return e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)); }

//! Coordinate descent state in the standardized scale.
class Solver {
 public:
  Solver(const Standardized& s, const Eigen::VectorXd& y, Family family, double tol)
      : s_(s), y_(y), family_(family), tol_(tol), n_(static_cast<double>(y.size())) {
    const Eigen::Index p = s.Xs.cols();
    beta_ = Eigen::VectorXd::Zero(p);
    in_strong_.assign(p, 0);
    const double ybar = y.mean();
    if (family == Family::gaussian) {
      b0_ = ybar;
    } else {
      const double m = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
      b0_ = std::log(m / (1.0 - m));
    }
    eta_ = Eigen::VectorXd::Constant(y.size(), b0_);
    const double v = family == Family::gaussian ? (y.array() - ybar).square().mean() : ybar * (1.0 - ybar);
    scale_ = v > 0.0 ? v : 1.0;
    if (family == Family::gaussian) {
      const Eigen::VectorXd centered = y.array() - ybar;
      grad_ = s.Xs.transpose() * centered / n_;
      gram_.resize(p);
    }
  }

  void fit(double lambda, double prev_lambda) {
    const Eigen::VectorXd g = gradient();
    for (int j : s_.usable)
      if (beta_(j) != 0.0 || std::abs(g(j)) >= 2.0 * lambda - prev_lambda) add_strong(j);
    for (int round = 0; round < 100; ++round) {
      if (family_ == Family::gaussian)
        solve_gaussian(lambda);
      else
        solve_binomial(lambda);
      const Eigen::VectorXd gr = gradient();
      bool violated = false;
      for (int j : s_.usable)
        if (!in_strong_[j] && std::abs(gr(j)) > lambda * (1.0 + 1e-9)) {
          add_strong(j);
          violated = true;
        }
      if (!violated) break;
    }
  }

  //! Plain cyclic sweeps over every usable column, recording the objective.
  void fit_cold(double lambda, std::vector<double>& trace) {
    for (int j : s_.usable) add_strong(j);
    trace.push_back(objective(lambda));
    if (family_ == Family::gaussian) {
      Eigen::VectorXd r = y_ - eta_;
      for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        const double change = sweep_gaussian(strong_, lambda, r);
        eta_ = y_ - r;
        trace.push_back(objective(lambda));
        if (change < tol_) break;
      }
    } else {
      for (int outer = 0; outer < kMaxOuter; ++outer) {
        const double change = outer_binomial(lambda);
        trace.push_back(objective(lambda));
        if (change < tol_) break;
      }
    }
  }

  double objective(double lambda) const {
    double loss = 0.0;
    if (family_ == Family::gaussian) {
      loss = 0.5 * (y_ - eta_).squaredNorm() / n_;
    } else {
      for (Eigen::Index i = 0; i < y_.size(); ++i) loss -= y_(i) * eta_(i) - softplus(eta_(i));
      loss /= n_;
    }
    return loss + lambda * beta_.lpNorm<1>();
  }

  //! Coefficients in the original scale, intercept first.
  Eigen::VectorXd original_coef() const {
    const Eigen::Index p = beta_.size();
    Eigen::VectorXd out(p + 1);
    double b0 = b0_;
    for (Eigen::Index j = 0; j < p; ++j) {
      out(j + 1) = beta_(j) / s_.scale(j);
      b0 -= out(j + 1) * s_.center(j);
    }
    out(0) = b0;
    return out;
  }

 private:
  void add_strong(int j) {
    if (!in_strong_[j]) {
      in_strong_[j] = 1;
      strong_.push_back(j);
      if (family_ == Family::gaussian) pending_.push_back(j);
    }
  }

  //! Gram columns of newly strong features, computed in one product.
  void flush_gram() {
    if (pending_.empty()) return;
    Eigen::MatrixXd cols(s_.Xs.rows(), pending_.size());
    for (std::size_t k = 0; k < pending_.size(); ++k) cols.col(k) = s_.Xs.col(pending_[k]);
    const Eigen::MatrixXd G = s_.Xs.transpose() * cols / n_;
    for (std::size_t k = 0; k < pending_.size(); ++k) gram_[pending_[k]] = G.col(k);
    pending_.clear();
  }

  Eigen::VectorXd gradient() const {
    if (family_ == Family::gaussian) return grad_;
    Eigen::VectorXd resid(y_.size());
    if (family_ == Family::gaussian) {
      resid = y_ - eta_;
    } else {
      for (Eigen::Index i = 0; i < y_.size(); ++i) resid(i) = y_(i) - cme::logistic(eta_(i));
    }
    return s_.Xs.transpose() * resid / n_;
  }

  double sweep_gaussian(const std::vector<int>& cols, double lambda, Eigen::VectorXd& r) {
    double max_change = 0.0;
    for (int j : cols) {
      const double old = beta_(j);
      const double rho = s_.Xs.col(j).dot(r) / n_ + old;
      const double nw = soft(rho, lambda);
      if (nw != old) {
        r.noalias() -= (nw - old) * s_.Xs.col(j);
        beta_(j) = nw;
        max_change = std::max(max_change, (nw - old) * (nw - old));
      }
    }
    return max_change / scale_;
  }

  //! Covariance-mode sweep: grad_ holds X_j'r / n for every column and is
  //! updated with the Gram column of each coefficient that moves.
  double sweep_covariance(const std::vector<int>& cols, double lambda) {
    double max_change = 0.0;
    for (int j : cols) {
      const double old = beta_(j);
      const double gjj = gram_[j](j);
      const double nw = soft(grad_(j) + gjj * old, lambda) / gjj;
      if (nw != old) {
        grad_.noalias() -= (nw - old) * gram_[j];
        beta_(j) = nw;
        max_change = std::max(max_change, gjj * (nw - old) * (nw - old));
      }
    }
    return max_change / scale_;
  }

  void solve_gaussian(double lambda) {
    flush_gram();
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
      if (sweep_covariance(strong_, lambda) < tol_) break;
      std::vector<int> active;
      for (int j : strong_)
        if (beta_(j) != 0.0) active.push_back(j);
      for (int inner = 0; inner < kMaxSweeps; ++inner)
        if (sweep_covariance(active, lambda) < tol_) break;
    }
  }

  //! One proximal-Newton step: weighted least-squares approximation solved by
  //! coordinate descent, followed by step halving if the objective went up.
  double outer_binomial(double lambda) {
    const Eigen::Index n = y_.size();
    Eigen::VectorXd w(n), rr(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = cme::logistic(eta_(i));
      w(i) = std::max(p * (1.0 - p), kMinWeight);
      rr(i) = (y_(i) - p) / w(i);
    }
    const double sw = w.sum();
    std::vector<double> xwx(beta_.size(), 0.0);
    for (int j : strong_) xwx[j] = s_.Xs.col(j).cwiseAbs2().dot(w) / n_;

    const double old_obj = objective(lambda);
    const double old_b0 = b0_;
    const Eigen::VectorXd old_beta = beta_;
    const Eigen::VectorXd old_eta = eta_;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
      double max_change = 0.0;
      const double d0 = rr.dot(w) / sw;
      b0_ += d0;
      rr.array() -= d0;
      max_change = sw / n_ * d0 * d0;
      for (int j : strong_) {
        if (xwx[j] <= 0.0) continue;
        const double old = beta_(j);
        const double rho = s_.Xs.col(j).cwiseProduct(w).dot(rr) / n_ + xwx[j] * old;
        const double nw = soft(rho, lambda) / xwx[j];
        if (nw != old) {
          rr.noalias() -= (nw - old) * s_.Xs.col(j);
          beta_(j) = nw;
          max_change = std::max(max_change, xwx[j] * (nw - old) * (nw - old));
        }
      }
      if (max_change / scale_ < tol_) break;
    }
    eta_ = Eigen::VectorXd::Constant(n, b0_);
    for (int j : strong_)
      if (beta_(j) != 0.0) eta_.noalias() += beta_(j) * s_.Xs.col(j);

    const double new_b0 = b0_;
    const Eigen::VectorXd new_beta = beta_;
    const Eigen::VectorXd new_eta = eta_;
    double t = 1.0;
    while (objective(lambda) > old_obj + 1e-12 * std::abs(old_obj) && t > 1e-6) {
      t *= 0.5;
      b0_ = old_b0 + t * (new_b0 - old_b0);
      beta_ = old_beta + t * (new_beta - old_beta);
      eta_ = old_eta + t * (new_eta - old_eta);
    }
    double change = sw / n_ * (b0_ - old_b0) * (b0_ - old_b0);
    for (int j : strong_) change = std::max(change, xwx[j] * (beta_(j) - old_beta(j)) * (beta_(j) - old_beta(j)));
    return change / scale_;
  }

  void solve_binomial(double lambda) {
    for (int outer = 0; outer < kMaxOuter; ++outer)
      if (outer_binomial(lambda) < tol_) break;
  }

  const Standardized& s_;
  const Eigen::VectorXd& y_;
  Family family_;
  double tol_;
  double n_;
  double scale_ = 1.0;  // null deviance per row; convergence is relative to it
  double b0_ = 0.0;
  Eigen::VectorXd beta_;
  Eigen::VectorXd eta_;
  std::vector<int> strong_;
  std::vector<char> in_strong_;
  Eigen::VectorXd grad_;               // gaussian path only
  std::vector<Eigen::VectorXd> gram_;  // gaussian path only, filled for strong columns
  std::vector<int> pending_;
};

LassoPath run_path(const Standardized& s, const Eigen::VectorXd& y, Family family,
                   const Eigen::VectorXd& lambdas, double tol) {
  LassoPath path;
  path.family = family;
  path.lambdas = lambdas;
  path.coefs.resize(s.Xs.cols() + 1, lambdas.size());
  Solver solver(s, y, family, tol);
  double prev = lambdas.size() > 0 ? lambdas(0) : 0.0;
  for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
    solver.fit(lambdas(k), std::max(prev, lambdas(k)));
    path.coefs.col(k) = solver.original_coef();
    prev = lambdas(k);
  }
  return path;
}

void check_lambdas(const Eigen::VectorXd& lambdas) {
  require(lambdas.size() >= 1, "empty lambda sequence");
  for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
    require(lambdas(k) >= 0.0 && std::isfinite(lambdas(k)), "lambdas must be finite and >= 0");
    if (k > 0) require(lambdas(k) <= lambdas(k - 1), "lambdas must be non-increasing");
  }
}

}  // namespace

int LassoPath::nonzeros(int index) const {
  int c = 0;
  for (Eigen::Index j = 1; j < coefs.rows(); ++j)
    if (coefs(j, index) != 0.0) ++c;
  return c;
}

double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family) {
  require(X.rows() == y.size(), "lasso: X and y differ in length");
  check_family_target(y, family);
  const Standardized s = standardize(X);
  const Eigen::VectorXd centered = y.array() - y.mean();
  if (s.Xs.cols() == 0) return 0.0;
  return (s.Xs.transpose() * centered).cwiseAbs().maxCoeff() / static_cast<double>(y.size());
}

Eigen::VectorXd default_lambdas(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                                const LassoOptions& opt) {
  double lmax = lambda_max(X, y, family);
  if (!(lmax > 0.0)) lmax = 1e-8;
  const int L = std::max(1, opt.n_lambda);
  Eigen::VectorXd out(L);
  for (int k = 0; k < L; ++k) {
    const double t = L == 1 ? 0.0 : static_cast<double>(k) / (L - 1);
    out(k) = lmax * std::pow(opt.lambda_min_ratio, t);
  }
  return out;
}

LassoPath lasso_path(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                     const Eigen::VectorXd& lambdas, double tol) {
  require(X.rows() == y.size() && y.size() > 0, "lasso: X and y differ in length");
  check_family_target(y, family);
  check_lambdas(lambdas);
  const Standardized s = standardize(X);
  LassoPath path = run_path(s, y, family, lambdas, tol);
  path.index_min = static_cast<int>(lambdas.size()) - 1;
  path.lambda_min = lambdas(path.index_min);
  return path;
}

namespace {

//! Held-out part of one CV fold and a warm-started solver on its complement.
struct CvFold {
  Standardized s;
  Eigen::VectorXd ytr;
  Eigen::MatrixXd Xte;
  Eigen::VectorXd yte;
  std::optional<double> constant_logit;  // binomial training target without variation
  std::unique_ptr<Solver> solver;
};

double held_out_loss(const CvFold& f, Family family, const Eigen::VectorXd& coef) {
  const Eigen::VectorXd eta = linear_predictor(f.Xte, coef);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < f.yte.size(); ++i) {
    if (family == Family::gaussian) {
      const double e = f.yte(i) - eta(i);
      acc += e * e;
    } else {
      const double p = std::clamp(cme::logistic(eta(i)), 1e-12, 1.0 - 1e-12);
      acc += -2.0 * (f.yte(i) * std::log(p) + (1.0 - f.yte(i)) * std::log(1.0 - p));
    }
  }
  return acc;
}

}  // namespace

LassoPath lasso_cd(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                   const std::optional<Eigen::VectorXd>& lambdas, const LassoOptions& opt) {
  const Eigen::Index n = X.rows(), p = X.cols();
  require(y.size() == n, "lasso: X and y differ in length");
  require(opt.k_cv >= 2 && opt.k_cv <= n, "lasso: need 2 <= k_cv <= n");
  check_family_target(y, family);
  const Eigen::VectorXd lam = lambdas ? *lambdas : default_lambdas(X, y, family, opt);
  check_lambdas(lam);

  const Standardized s = standardize(X);
  Solver full(s, y, family, opt.tol);

  const FoldAssignment folds = assign_folds(static_cast<int>(n), opt.k_cv, opt.seed);
  std::vector<CvFold> cv(opt.k_cv);
  for (int k = 0; k < opt.k_cv; ++k) {
    const auto train = folds.train_rows(k);
    const auto test = folds.test_rows(k);
    Eigen::MatrixXd Xtr(train.size(), p);
    CvFold& f = cv[k];
    f.ytr.resize(train.size());
    f.Xte.resize(test.size(), p);
    f.yte.resize(test.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      Xtr.row(i) = X.row(train[i]);
      f.ytr(i) = y(train[i]);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      f.Xte.row(i) = X.row(test[i]);
      f.yte(i) = y(test[i]);
    }
    if (family == Family::binomial && (f.ytr.array() == f.ytr(0)).all()) {
      const double m = std::clamp(f.ytr(0), 1e-6, 1.0 - 1e-6);
      f.constant_logit = std::log(m / (1.0 - m));
    } else {
      f.s = standardize(Xtr);
      f.solver = std::make_unique<Solver>(f.s, f.ytr, family, opt.tol);
    }
  }

  LassoPath path;
  path.family = family;
  path.coefs.resize(p + 1, lam.size());
  Eigen::VectorXd loss = Eigen::VectorXd::Zero(lam.size());
  Eigen::Index used = lam.size();
  int best = 0;
  double prev = lam(0);
  for (Eigen::Index l = 0; l < lam.size(); ++l) {
    const double guard = std::max(prev, lam(l));
    full.fit(lam(l), guard);
    path.coefs.col(l) = full.original_coef();
    for (CvFold& f : cv) {
      Eigen::VectorXd coef;
      if (f.constant_logit) {
        coef = Eigen::VectorXd::Zero(p + 1);
        coef(0) = *f.constant_logit;
      } else {
        f.solver->fit(lam(l), guard);
        coef = f.solver->original_coef();
      }
      loss(l) += held_out_loss(f, family, coef);
    }
    prev = lam(l);
    if (l > 0 && loss(l) <= loss(best)) best = static_cast<int>(l);
    if (!lambdas && l - best >= kCvPatience) {
      used = l + 1;
      break;
    }
  }
  path.lambdas = lam.head(used);
  path.coefs = path.coefs.leftCols(used).eval();
  path.cv_mse = loss.head(used) / static_cast<double>(n);
  path.index_min = best;
  path.lambda_min = lam(best);
  return path;
}

LassoSingleFit lasso_single(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                            double lambda, double tol) {
  require(X.rows() == y.size(), "lasso: X and y differ in length");
  check_family_target(y, family);
  const Standardized s = standardize(X);
  Solver solver(s, y, family, tol);
  LassoSingleFit out;
  solver.fit_cold(lambda, out.objective);
  out.coef = solver.original_coef();
  return out;
}

double lasso_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Family family,
                       double lambda, const Eigen::VectorXd& coef) {
  const Standardized s = standardize(X);
  const Eigen::VectorXd eta = linear_predictor(X, coef);
  const double n = static_cast<double>(y.size());
  double loss = 0.0;
  if (family == Family::gaussian) {
    loss = 0.5 * (y - eta).squaredNorm() / n;
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) loss -= y(i) * eta(i) - softplus(eta(i));
    loss /= n;
  }
  double pen = 0.0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) pen += std::abs(coef(j + 1)) * s.scale(j);
  return loss + lambda * pen;
}

std::vector<int> selected_columns(const Eigen::VectorXd& coef_with_intercept) {
  std::vector<int> sel;
  for (Eigen::Index j = 1; j < coef_with_intercept.size(); ++j)
    if (coef_with_intercept(j) != 0.0) sel.push_back(static_cast<int>(j - 1));
  return sel;
}

LinearFit post_selection_refit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const std::vector<int>& selected, Family family) {
  const Eigen::Index n = X.rows(), p = X.cols();
  Eigen::MatrixXd D(n, selected.size() + 1);
  D.col(0).setOnes();
  for (std::size_t k = 0; k < selected.size(); ++k) {
    require(selected[k] >= 0 && selected[k] < p, "selected column out of range");
    D.col(k + 1) = X.col(selected[k]);
  }
  LinearFit sub = family == Family::gaussian ? ols(D, y) : logit_irls(D, y);
  LinearFit fit = sub;
  fit.coef = Eigen::VectorXd::Zero(p + 1);
  fit.vcov = Eigen::MatrixXd::Zero(p + 1, p + 1);
  std::vector<int> map(selected.size() + 1);
  map[0] = 0;
  for (std::size_t k = 0; k < selected.size(); ++k) map[k + 1] = selected[k] + 1;
  for (std::size_t a = 0; a < map.size(); ++a) {
    fit.coef(map[a]) = sub.coef(a);
    for (std::size_t b = 0; b < map.size(); ++b) fit.vcov(map[a], map[b]) = sub.vcov(a, b);
  }
  fit.selected = map;
  fit.residuals = sub.residuals;
  return fit;
}

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& X, const Eigen::VectorXd& coef) {
  require(coef.size() == X.cols() + 1, "coefficient length must be columns + 1");
  return (X * coef.tail(X.cols())).array() + coef(0);
}

}  // namespace cme
