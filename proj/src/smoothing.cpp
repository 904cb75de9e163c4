#include "cme/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cme/dataset.hpp"
#include "cme/errors.hpp"
#include "cme/linear.hpp"
#include "cme/parallel.hpp"
#include "cme/signals.hpp"
#include "cme/stats.hpp"

namespace cme {

const char* to_string(SmootherMethod m) { return m == SmootherMethod::bspline ? "bspline" : "loess"; }

SmootherMethod parse_smoother(const std::string& s) {
  if (s == "bspline") return SmootherMethod::bspline;
  if (s == "loess") return SmootherMethod::loess;
  fail(ErrorCode::InvalidArgument, "unknown smoother '" + s + "'");
}

void SmootherSpec::validate() const {
  require(degree >= 1, "spline degree must be at least 1");
  require(df >= degree, "spline df must be at least the degree");
  if (span) require(*span > 0.0 && *span <= 1.0, "span must lie in (0, 1]");
  for (double s : span_grid) require(s > 0.0 && s <= 1.0, "span grid values must lie in (0, 1]");
  require(cv_folds >= 2, "cv folds must be at least 2");
}

double tricube(double u) {
  const double a = std::abs(u);
  if (a >= 1.0) return 0.0;
  const double t = 1.0 - a * a * a;
  return t * t * t;
}

namespace {

constexpr double kResidualVarFloor = 1e-10;

void check_residual_variance(const Eigen::VectorXd& d_tilde) {
  const double m = d_tilde.mean();
  const double v = (d_tilde.array() - m).square().mean();
  if (!(v >= kResidualVarFloor))
    fail(ErrorCode::DegenerateTreatmentResiduals, "variance of treatment residuals is " + std::to_string(v));
}

// Local-linear fits in a window of half-width span * range(x) around x0.
// Signal problem: s on {1, x - x0}. Residual problem: s on {dt, (x - x0) dt}.
class LocalFitter {
 public:
  LocalFitter(const Eigen::VectorXd& x, const Eigen::VectorXd& s, const Eigen::VectorXd* dt, double span,
              bool uniform)
      : x_(x), s_(s), dt_(dt), uniform_(uniform) {
    order_.resize(x.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::sort(order_.begin(), order_.end(), [&](int a, int b) { return x_(a) < x_(b); });
    sorted_.resize(order_.size());
    for (std::size_t k = 0; k < order_.size(); ++k) sorted_[k] = x_(order_[k]);
    const double range = sorted_.empty() ? 0.0 : sorted_.back() - sorted_.front();
    width_ = span * range;
  }

  // Returns false when fewer than three neighbours carry weight or the local
  // system is singular. On success, theta and (optionally) the weights of
  // the equivalent kernel are filled.
  bool fit(double x0, double& theta, std::vector<std::pair<int, double>>* ell = nullptr) const {
    auto first = std::lower_bound(sorted_.begin(), sorted_.end(), x0 - width_);
    auto last = std::upper_bound(sorted_.begin(), sorted_.end(), x0 + width_);
    std::vector<std::pair<int, double>> w;
    w.reserve(last - first);
    for (auto it = first; it != last; ++it) {
      const int i = order_[it - sorted_.begin()];
      const double u = width_ > 0 ? (x_(i) - x0) / width_ : 0.0;
      const double wi = uniform_ ? (std::abs(u) <= 1.0 ? 1.0 : 0.0) : tricube(u);
      if (wi > 0.0) w.emplace_back(i, wi);
    }
    if (w.size() < 3) return false;
    double a = 0, b = 0, c = 0;
    for (auto [i, wi] : w) {
      const double dx = x_(i) - x0;
      const double g = dt_ ? (*dt_)(i) * (*dt_)(i) : 1.0;
      a += wi * g;
      b += wi * g * dx;
      c += wi * g * dx * dx;
    }
    const double det = a * c - b * b;
    if (!(a > 0) || !(det > 1e-12 * std::max(a * c, std::numeric_limits<double>::min()))) return false;
    theta = 0.0;
    if (ell) ell->clear();
    for (auto [i, wi] : w) {
      const double dx = x_(i) - x0;
      const double g = dt_ ? (*dt_)(i) : 1.0;
      const double l = wi * g * (c - dx * b) / det;
      theta += l * s_(i);
      if (ell) ell->emplace_back(i, l);
    }
    return true;
  }

 private:
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& s_;
  const Eigen::VectorXd* dt_;
  bool uniform_;
  std::vector<int> order_;
  std::vector<double> sorted_;
  double width_ = 0.0;
};

Projection finish(ProjectorState st) {
  Projection p;
  p.grid = st.grid;
  p.theta = st.theta;
  p.state = std::move(st);
  return p;
}

Projection project_groups(const Eigen::VectorXd& s, const Eigen::VectorXd* dt, const Eigen::VectorXd& x,
                          const std::vector<double>& levels) {
  const int n = static_cast<int>(x.size());
  const int k = static_cast<int>(levels.size());
  ProjectorState st;
  st.kind = ProjectorState::Kind::groups;
  st.grid = Eigen::Map<const Eigen::VectorXd>(levels.data(), k);
  st.theta = Eigen::VectorXd::Zero(k);
  st.L = Eigen::MatrixXd::Zero(k, n);
  std::vector<int> group(n);
  Eigen::VectorXd denom = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < n; ++i) {
    group[i] = static_cast<int>(std::lower_bound(levels.begin(), levels.end(), x(i)) - levels.begin());
    denom(group[i]) += dt ? (*dt)(i) * (*dt)(i) : 1.0;
  }
  for (int j = 0; j < k; ++j)
    if (!(denom(j) > 0))
      fail(ErrorCode::DegenerateTreatmentResiduals, "no treatment residual variation at x = " +
                                                        std::to_string(levels[j]));
  for (int i = 0; i < n; ++i) {
    const double l = (dt ? (*dt)(i) : 1.0) / denom(group[i]);
    st.L(group[i], i) = l;
    st.theta(group[i]) += l * s(i);
  }
  st.u.resize(n);
  for (int i = 0; i < n; ++i) st.u(i) = s(i) - st.theta(group[i]) * (dt ? (*dt)(i) : 1.0);
  return finish(std::move(st));
}

Projection project_series(const Eigen::VectorXd& s, const Eigen::VectorXd* dt, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& grid, const SmootherSpec& spec) {
  const int n = static_cast<int>(x.size());
  ProjectorState st;
  st.kind = ProjectorState::Kind::series;
  st.grid = grid;
  st.basis = spec.basis ? *spec.basis : quantile_spline(x, spec.degree, spec.df);
  const Eigen::MatrixXd P = bspline_basis(x, st.basis);
  if (n <= P.cols())
    fail(ErrorCode::DegenerateSample, "projection needs more observations than basis functions");
  st.Q = dt ? Eigen::MatrixXd(dt->asDiagonal() * P) : P;
  st.P_grid = bspline_basis(grid, st.basis);
  st.J = st.Q.transpose() * st.Q / n;
  Eigen::MatrixXd rhs(st.Q.cols(), 1 + n);
  rhs.col(0) = st.Q.transpose() * s / n;
  rhs.rightCols(n) = st.Q.transpose() / n;
  Eigen::MatrixXd sol;
  if (!solve_spd(st.J, rhs, sol, &st.ridge_used))
    fail(ErrorCode::SingularJacobian, "projection Jacobian is singular");
  st.beta = sol.col(0);
  st.L = st.P_grid * sol.rightCols(n);
  st.theta = st.P_grid * st.beta;
  st.u = s - st.Q * st.beta;
  return finish(std::move(st));
}

Projection project_local(const Eigen::VectorXd& s, const Eigen::VectorXd* dt, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& grid, const SmootherSpec& spec) {
  const int n = static_cast<int>(x.size());
  const double span = spec.span ? *spec.span
                                : cv_span(s, dt ? std::optional<Eigen::VectorXd>(*dt) : std::nullopt, x,
                                          spec.span_grid, spec.cv_folds, spec.seed);
  LocalFitter fitter(x, s, dt, span, spec.uniform_kernel);
  ProjectorState st;
  st.kind = ProjectorState::Kind::local;
  st.span = span;
  st.grid = grid;
  const int k = static_cast<int>(grid.size());
  st.theta.resize(k);
  st.L = Eigen::MatrixXd::Zero(k, n);
  std::vector<char> ok(k, 1);
  parallel_for(k, [&](int j) {
    std::vector<std::pair<int, double>> ell;
    double th = 0.0;
    if (!fitter.fit(grid(j), th, &ell)) {
      ok[j] = 0;
      return;
    }
    st.theta(j) = th;
    for (auto [i, l] : ell) st.L(j, i) = l;
  });
  for (int j = 0; j < k; ++j)
    if (!ok[j])
      fail(ErrorCode::InsufficientLocalData, "fewer than 3 neighbours at grid point " + std::to_string(grid(j)));
  st.u.resize(n);
  std::vector<char> ok_u(n, 1);
  parallel_for(n, [&](int i) {
    double th = 0.0;
    if (!fitter.fit(x(i), th)) {
      ok_u[i] = 0;
      return;
    }
    st.u(i) = s(i) - th * (dt ? (*dt)(i) : 1.0);
  });
  for (int i = 0; i < n; ++i)
    if (!ok_u[i]) fail(ErrorCode::InsufficientLocalData, "fewer than 3 neighbours at an observation");
  return finish(std::move(st));
}

Projection project_any(const Eigen::VectorXd& s, const Eigen::VectorXd* dt, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& grid, const SmootherSpec& spec) {
  spec.validate();
  require(s.size() == x.size(), "signal and moderator lengths differ");
  require(x.size() > 0, "empty projection sample");
  if (!s.allFinite()) fail(ErrorCode::InvariantViolation, "non-finite signal entries");
  if (dt) {
    require(dt->size() == x.size(), "residual and moderator lengths differ");
    check_residual_variance(*dt);
  }
  const auto levels = unique_values(x);
  if (static_cast<int>(levels.size()) <= spec.discrete_max_levels) return project_groups(s, dt, x, levels);
  require(grid.size() > 0, "empty evaluation grid");
  if (spec.method == SmootherMethod::bspline) return project_series(s, dt, x, grid, spec);
  return project_local(s, dt, x, grid, spec);
}

}  // namespace

Projection project_signal(const Eigen::VectorXd& lambda, const Eigen::VectorXd& x, const Eigen::VectorXd& grid,
                          const SmootherSpec& spec) {
  return project_any(lambda, nullptr, x, grid, spec);
}

Projection project_signal(const SignalVector& signal, const Eigen::VectorXd& x, const Eigen::VectorXd& grid,
                          const SmootherSpec& spec) {
  if (signal.kind == SignalKind::plrm_residuals)
    return project_residuals(signal.y_tilde, signal.d_tilde, x, grid, spec);
  return project_signal(signal.lambda, x, grid, spec);
}

Projection project_residuals(const Eigen::VectorXd& y_tilde, const Eigen::VectorXd& d_tilde,
                             const Eigen::VectorXd& x, const Eigen::VectorXd& grid, const SmootherSpec& spec) {
  return project_any(y_tilde, &d_tilde, x, grid, spec);
}

std::vector<double> span_cv_errors(const Eigen::VectorXd& target, const std::optional<Eigen::VectorXd>& d_tilde,
                                   const Eigen::VectorXd& x, const std::vector<double>& span_grid, int cv_folds,
                                   std::uint64_t seed) {
  require(!span_grid.empty(), "empty span grid");
  const int n = static_cast<int>(x.size());
  const auto folds = assign_folds(n, cv_folds, seed);
  std::vector<double> err(span_grid.size(), 0.0);
  for (int f = 0; f < cv_folds; ++f) {
    const auto tr = folds.train_rows(f);
    const auto te = folds.test_rows(f);
    Eigen::VectorXd xt(tr.size()), st(tr.size()), dtt(tr.size());
    for (std::size_t a = 0; a < tr.size(); ++a) {
      xt(a) = x(tr[a]);
      st(a) = target(tr[a]);
      if (d_tilde) dtt(a) = (*d_tilde)(tr[a]);
    }
    for (std::size_t g = 0; g < span_grid.size(); ++g) {
      if (!std::isfinite(err[g])) continue;
      LocalFitter fitter(xt, st, d_tilde ? &dtt : nullptr, span_grid[g], false);
      double sse = 0.0;
      bool ok = true;
      for (int i : te) {
        double th = 0.0;
        if (!fitter.fit(x(i), th)) {
          ok = false;
          break;
        }
        const double pred = d_tilde ? th * (*d_tilde)(i) : th;
        sse += (target(i) - pred) * (target(i) - pred);
      }
      err[g] = ok ? err[g] + sse / te.size() / cv_folds : std::numeric_limits<double>::infinity();
    }
  }
  return err;
}

double cv_span(const Eigen::VectorXd& target, const std::optional<Eigen::VectorXd>& d_tilde,
               const Eigen::VectorXd& x, const std::vector<double>& span_grid, int cv_folds, std::uint64_t seed) {
  std::vector<double> grid = span_grid;
  std::sort(grid.begin(), grid.end());
  if (grid.size() == 1) return grid[0];
  const auto err = span_cv_errors(target, d_tilde, x, grid, cv_folds, seed);
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (err[g] < err[best]) best = g;
  if (!std::isfinite(err[best]))
    fail(ErrorCode::InsufficientLocalData, "no span in the grid leaves three neighbours at every point");
  return grid[best];
}

}  // namespace cme
