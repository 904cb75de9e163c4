#include <map>
#include <cmath>

#include "cme/linear.hpp"
#include "cme/rng.hpp"
#include "cme/signals.hpp"
#include "cme/smoothing.hpp"
#include "cme/spline.hpp"
#include "cme/stats.hpp"
#include "support.hpp"

using namespace cme;

namespace {

Eigen::VectorXd uniform_x(int n, Rng& rng, double lo = -2, double hi = 2) {
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x(i) = rng.uniform(lo, hi);
  return x;
}

SmootherSpec loess(double span) {
  SmootherSpec s;
  s.method = SmootherMethod::loess;
  s.span = span;
  return s;
}

}  // namespace

TEST_CASE("spline projection reproduces an in-span signal") {
  Rng rng(1);
  const Eigen::VectorXd x = uniform_x(400, rng);
  const SplineBasis basis = quantile_spline(x, 3, 6);
  Eigen::VectorXd beta(basis.df());
  for (int j = 0; j < beta.size(); ++j) beta(j) = rng.normal();
  const Eigen::VectorXd lambda = bspline_basis(x, basis) * beta;
  const Eigen::VectorXd grid = linspace(-1.9, 1.9, 30);
  const Projection p = project_signal(lambda, x, grid, {});
  const Eigen::VectorXd truth = bspline_basis(grid, basis) * beta;
  CHECK((p.theta - truth).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(p.state.u.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("constant signals stay constant") {
  Rng rng(2);
  const Eigen::VectorXd x = uniform_x(300, rng);
  const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(300, 3.25);
  const Eigen::VectorXd grid = linspace(-1.5, 1.5, 10);
  CHECK((project_signal(lambda, x, grid, {}).theta.array() - 3.25).abs().maxCoeff() < 1e-10);
  CHECK((project_signal(lambda, x, grid, loess(0.5)).theta.array() - 3.25).abs().maxCoeff() < 1e-10);
}

TEST_CASE("spline fit of a quadratic signal") {
  Rng rng(3);
  const int n = 2000;
  const Eigen::VectorXd x = uniform_x(n, rng);
  Eigen::VectorXd lambda(n);
  for (int i = 0; i < n; ++i) lambda(i) = 1 - x(i) * x(i) + rng.normal();
  const Eigen::VectorXd grid = linspace(-1.9, 1.9, 50);
  const Projection p = project_signal(lambda, x, grid, {});
  const double rmse = std::sqrt((p.theta.array() - (1 - grid.array().square())).square().mean());
  CHECK(rmse < 0.1);
}

TEST_CASE("spline projection is linear in the signal") {
  Rng rng(4);
  const int n = 250;
  const Eigen::VectorXd x = uniform_x(n, rng);
  Eigen::VectorXd a(n), b(n);
  for (int i = 0; i < n; ++i) {
    a(i) = rng.normal();
    b(i) = std::sin(x(i)) + rng.normal();
  }
  const Eigen::VectorXd grid = linspace(-2, 2, 17);
  const auto pa = project_signal(a, x, grid, {}).theta;
  const auto pb = project_signal(b, x, grid, {}).theta;
  const auto pc = project_signal(Eigen::VectorXd(2.5 * a - 0.75 * b), x, grid, {}).theta;
  CHECK((pc - (2.5 * pa - 0.75 * pb)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("loess with full span and flat weights is global OLS") {
  Rng rng(5);
  const int n = 20;
  const Eigen::VectorXd x = uniform_x(n, rng, 0, 1);
  Eigen::VectorXd lambda(n);
  for (int i = 0; i < n; ++i) lambda(i) = 2 * x(i) * x(i) + rng.normal();
  SmootherSpec s = loess(1.0);
  s.uniform_kernel = true;
  const Eigen::VectorXd grid = linspace(x.minCoeff(), x.maxCoeff(), 7);
  const Projection p = project_signal(lambda, x, grid, s);
  for (int j = 0; j < grid.size(); ++j) {
    Eigen::MatrixXd X(n, 2);
    X.col(0).setOnes();
    X.col(1) = x.array() - grid(j);
    const LinearFit f = ols(X, lambda, false);
    CHECK(std::abs(p.theta(j) - f.coef(0)) < 1e-10);
  }
}

TEST_CASE("discrete moderator uses group means") {
  Rng rng(6);
  const int n = 120;
  Eigen::VectorXd x(n), lambda(n);
  for (int i = 0; i < n; ++i) {
    x(i) = static_cast<double>(i % 4);
    lambda(i) = x(i) + rng.normal();
  }
  const Projection p = project_signal(lambda, x, linspace(0, 3, 50), {});
  REQUIRE(p.grid.size() == 4);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, 4);
  for (int i = 0; i < n; ++i) G(i, static_cast<int>(x(i))) = 1.0;
  const LinearFit f = ols(G, lambda, false);
  for (int j = 0; j < 4; ++j) {
    CHECK(p.grid(j) == j);
    CHECK(std::abs(p.theta(j) - f.coef(j)) < 1e-12);
  }
  CHECK(p.state.kind == ProjectorState::Kind::groups);
}

TEST_CASE("residual projection") {
  Rng rng(7);
  const int n = 1500;
  const Eigen::VectorXd x = uniform_x(n, rng);
  Eigen::VectorXd dt(n), y2(n), yq(n);
  for (int i = 0; i < n; ++i) {
    dt(i) = rng.normal();
    y2(i) = 2.0 * dt(i);
    yq(i) = (1 - x(i) * x(i)) * dt(i) + 1e-6 * rng.normal();
  }
  const Eigen::VectorXd grid = linspace(-1.9, 1.9, 25);
  CHECK((project_residuals(y2, dt, x, grid, {}).theta.array() - 2.0).abs().maxCoeff() < 1e-10);
  CHECK((project_residuals(y2, dt, x, grid, loess(0.35)).theta.array() - 2.0).abs().maxCoeff() < 1e-10);
  const auto q = project_residuals(yq, dt, x, grid, {}).theta;
  CHECK((q.array() - (1 - grid.array().square())).abs().maxCoeff() < 1e-3);
  CHECK_ERROR_CODE(project_residuals(y2, Eigen::VectorXd::Constant(n, 0.3), x, grid, {}),
                   DegenerateTreatmentResiduals);
}

TEST_CASE("signal vector overload dispatches on kind") {
  Rng rng(8);
  const int n = 200;
  const Eigen::VectorXd x = uniform_x(n, rng);
  SignalVector s;
  s.kind = SignalKind::plrm_residuals;
  s.d_tilde = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) s.d_tilde(i) = rng.normal();
  s.y_tilde = -1.5 * s.d_tilde;
  CHECK((project_signal(s, x, linspace(-1, 1, 5), {}).theta.array() + 1.5).abs().maxCoeff() < 1e-10);
}

TEST_CASE("loess needs neighbours") {
  Rng rng(9);
  const Eigen::VectorXd x = uniform_x(30, rng);
  const Eigen::VectorXd lambda = x;
  CHECK_ERROR_CODE(project_signal(lambda, x, linspace(-2, 2, 5), loess(0.001)), InsufficientLocalData);
}

TEST_CASE("span cross-validation") {
  Rng rng(10);
  const int n = 400;
  const Eigen::VectorXd x = uniform_x(n, rng);
  Eigen::VectorXd q(n);
  for (int i = 0; i < n; ++i) q(i) = 3 * x(i) * x(i) + 0.3 * rng.normal();
  CHECK(cv_span(q, std::nullopt, x, {0.5}, 10, 1) == 0.5);
  const auto err = span_cv_errors(q, std::nullopt, x, {0.1, 0.9}, 10, 1);
  const double chosen = cv_span(q, std::nullopt, x, {0.1, 0.9}, 10, 1);
  CHECK(err[chosen == 0.1 ? 0 : 1] < err[chosen == 0.1 ? 1 : 0]);

  std::map<double, int> wins;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng r(1000 + s);
    const Eigen::VectorXd xs = uniform_x(200, r);
    Eigen::VectorXd noise(200);
    for (int i = 0; i < 200; ++i) noise(i) = r.normal();
    ++wins[cv_span(noise, std::nullopt, xs, {0.2, 0.35, 0.5, 0.75, 1.0}, 10, s)];
  }
  // pure noise: the widest span is the modal choice
  for (const auto& [span, count] : wins)
    if (span != 1.0) CHECK(count < wins[1.0]);
  CHECK(wins[1.0] >= 50);
}

TEST_CASE("tricube") {
  CHECK(tricube(0.0) == 1.0);
  CHECK(tricube(1.0) == 0.0);
  CHECK(tricube(-0.5) == doctest::Approx(std::pow(1 - 0.125, 3)));
}
