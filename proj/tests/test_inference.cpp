#include <cmath>

#include "cme/classic.hpp"
#include "cme/inference.hpp"
#include "cme/rng.hpp"
#include "cme/smoothing.hpp"
#include "cme/spline.hpp"
#include "cme/stats.hpp"
#include "support.hpp"

using namespace cme;

namespace {

// Projector whose grid points are means of disjoint groups of the signal.
ProjectorState group_mean_state(const Eigen::VectorXd& s, int groups) {
  const int n = static_cast<int>(s.size());
  ProjectorState st;
  st.kind = ProjectorState::Kind::groups;
  st.grid = linspace(0, 1, groups);
  st.L = Eigen::MatrixXd::Zero(groups, n);
  st.theta = Eigen::VectorXd::Zero(groups);
  st.u.resize(n);
  std::vector<int> size(groups, 0);
  for (int i = 0; i < n; ++i) ++size[i % groups];
  for (int i = 0; i < n; ++i) {
    st.L(i % groups, i) = 1.0 / size[i % groups];
    st.theta(i % groups) += s(i) / size[i % groups];
  }
  for (int i = 0; i < n; ++i) st.u(i) = s(i) - st.theta(i % groups);
  return st;
}

Eigen::VectorXd normals(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

Dataset linear_dgp(int n, std::uint64_t seed, double b1 = 1.0, double b3 = 0.5) {
  Rng rng(seed);
  Eigen::VectorXd y(n), d(n), x(n);
  for (int i = 0; i < n; ++i) {
    x(i) = rng.uniform(-1, 1);
    d(i) = rng.bernoulli(0.5);
    y(i) = x(i) + b1 * d(i) + b3 * d(i) * x(i) + rng.normal();
  }
  return make_dataset(y, d, x, Eigen::MatrixXd(n, 0));
}

}  // namespace

TEST_CASE("sandwich: intercept-only reduction") {
  const Eigen::VectorXd s = normals(400, 1).array() + 2.0;
  const ProjectorState st = group_mean_state(s, 1);
  const BandResult b = sandwich_band(st, 0.95);
  const double m = s.mean();
  const double sd_pop = std::sqrt((s.array() - m).square().mean());
  CHECK(b.se(0) == doctest::Approx(sd_pop / std::sqrt(400.0)).epsilon(1e-12));
  CHECK(b.lo(0) == doctest::Approx(m - 1.959963984540054 * sd_pop / 20.0).epsilon(1e-10));
  CHECK(b.critical_pointwise == doctest::Approx(1.959963984540054).epsilon(1e-10));
}

TEST_CASE("sandwich: zero residuals give a zero-width band") {
  ProjectorState st = group_mean_state(normals(30, 11), 3);
  st.u.setZero();
  const BandResult b = sandwich_band(st);
  CHECK(b.se.cwiseAbs().maxCoeff() == 0.0);
  CHECK(b.lo == b.hi);
}

TEST_CASE("sandwich: matches the explicit matrix formula") {
  Rng rng(2);
  const int n = 80;
  Eigen::VectorXd x(n), s(n), dt(n);
  for (int i = 0; i < n; ++i) {
    x(i) = rng.uniform(0, 3);
    s(i) = std::cos(x(i)) + rng.normal() * (0.5 + x(i));
    dt(i) = rng.normal();
  }
  const Eigen::VectorXd grid = linspace(0.1, 2.9, 12);
  for (bool residual : {false, true}) {
    const Projection p = residual ? project_residuals(s, dt, x, grid, {}) : project_signal(s, x, grid, {});
    const Eigen::MatrixXd P = bspline_basis(x, p.state.basis);
    const Eigen::MatrixXd Q = residual ? Eigen::MatrixXd(dt.asDiagonal() * P) : P;
    const Eigen::MatrixXd J = Q.transpose() * Q / n;
    const Eigen::MatrixXd Jinv = J.inverse();
    const Eigen::VectorXd beta = Jinv * Q.transpose() * s / n;
    const Eigen::VectorXd u = s - Q * beta;
    Eigen::MatrixXd Omega = Eigen::MatrixXd::Zero(J.rows(), J.cols());
    for (int i = 0; i < n; ++i) Omega += Q.row(i).transpose() * Q.row(i) * u(i) * u(i) / n;
    const Eigen::MatrixXd Pg = bspline_basis(grid, p.state.basis);
    const BandResult b = sandwich_band(p.state);
    for (int j = 0; j < grid.size(); ++j) {
      const double sigma2 = Pg.row(j) * Jinv * Omega * Jinv * Pg.row(j).transpose();
      CHECK(std::abs(b.se(j) - std::sqrt(sigma2 / n)) < 1e-10);
      CHECK(std::abs(p.theta(j) - Pg.row(j).dot(beta)) < 1e-10);
    }
  }
}

TEST_CASE("sandwich variance is non-negative at random points") {
  Rng rng(3);
  const int n = 300;
  Eigen::VectorXd x(n), s(n);
  for (int i = 0; i < n; ++i) {
    x(i) = rng.normal();
    s(i) = rng.normal();
  }
  Eigen::VectorXd grid(1000);
  for (int j = 0; j < 1000; ++j) grid(j) = rng.uniform(-2, 2);
  std::sort(grid.data(), grid.data() + grid.size());
  const BandResult b = sandwich_band(project_signal(s, x, grid, {}).state);
  CHECK(b.se.minCoeff() >= 0.0);
  CHECK(b.se.allFinite());
}

TEST_CASE("multiplier: single point approaches the normal quantile") {
  const ProjectorState st = group_mean_state(normals(500, 4), 1);
  const BandResult b = multiplier_band(st, 0.95, 4000, 9);
  CHECK(std::abs(b.critical_uniform - 1.96) < 0.05);
  CHECK(b.critical_uniform >= b.critical_pointwise);
}

TEST_CASE("multiplier: independent coordinates fall between pointwise and Bonferroni") {
  const ProjectorState st = group_mean_state(normals(2000, 5), 10);
  const BandResult b = multiplier_band(st, 0.95, 4000, 10);
  // The sup of 10 independent |N(0, 1)| has 0.95 quantile z((1 + 0.95^(1/10)) / 2)
  // (Sidak), just below Bonferroni; the slack is three Monte Carlo sd at B = 4000.
  const double sidak = normal_quantile((1 + std::pow(0.95, 0.1)) / 2);
  const double mc_sd = 0.072;
  CHECK(b.critical_uniform > b.critical_pointwise);
  CHECK(b.critical_uniform < normal_quantile(1 - 0.05 / 20) + 3 * mc_sd);
  CHECK(std::abs(b.critical_uniform - sidak) < 3 * mc_sd);
  for (int j = 0; j < 10; ++j) {
    CHECK(b.ulo(j) <= b.lo(j));
    CHECK(b.uhi(j) >= b.hi(j));
  }
}

TEST_CASE("multiplier: nested grids and reproducibility") {
  Rng rng(6);
  const int n = 600;
  Eigen::VectorXd x(n), s(n);
  for (int i = 0; i < n; ++i) {
    x(i) = rng.uniform(-1, 1);
    s(i) = x(i) + rng.normal();
  }
  const Eigen::VectorXd coarse = linspace(-1, 1, 5);
  const Eigen::VectorXd fine = linspace(-1, 1, 9);
  const auto a = multiplier_band(project_signal(s, x, coarse, {}).state, 0.95, 500, 3);
  const auto b = multiplier_band(project_signal(s, x, fine, {}).state, 0.95, 500, 3);
  CHECK(b.critical_uniform >= a.critical_uniform);
  const auto c = multiplier_band(project_signal(s, x, coarse, {}).state, 0.95, 500, 3);
  CHECK(a.critical_uniform == c.critical_uniform);
  CHECK(a.ulo == c.ulo);
}

TEST_CASE("zeta search bounds") {
  Rng rng(7);
  Eigen::MatrixXd one(300, 1);
  for (int b = 0; b < 300; ++b) one(b, 0) = rng.normal();
  CHECK(zeta_star(one, 0.95) == doctest::Approx(0.025));
  Eigen::MatrixXd many(500, 8);
  for (int b = 0; b < 500; ++b)
    for (int j = 0; j < 8; ++j) many(b, j) = rng.normal();
  const double z = zeta_star(many, 0.95);
  CHECK(z >= 0.05 / 16 - 1e-15);
  CHECK(z <= 0.025 + 1e-15);
  // perfectly dependent columns need less correction than independent ones
  Eigen::MatrixXd same(500, 8);
  for (int b = 0; b < 500; ++b) same.row(b).setConstant(rng.normal());
  CHECK(zeta_star(same, 0.95) > z);
  CHECK(zeta_star(same, 0.95) > 0.02);
}

TEST_CASE("nonparametric bootstrap: reproducible and nested") {
  const Dataset ds = linear_dgp(200, 8);
  const Eigen::VectorXd grid = linspace(-1, 1, 11);
  auto fn = [&](const Dataset& b) {
    const auto f = fit_linear_interaction(b);
    return Eigen::VectorXd(grid.unaryExpr([&](double x) { return f.theta(x); }));
  };
  const Eigen::VectorXd theta = fn(ds);
  const auto a = nonparam_bootstrap_band(fn, ds, theta, 0.95, 200, 4);
  const auto b = nonparam_bootstrap_band(fn, ds, theta, 0.95, 200, 4);
  CHECK(a.ulo == b.ulo);
  CHECK(a.uhi == b.uhi);
  CHECK(a.lo == b.lo);
  for (int j = 0; j < grid.size(); ++j) {
    CHECK(a.ulo(j) <= a.lo(j));
    CHECK(a.uhi(j) >= a.hi(j));
  }
}

TEST_CASE("nonparametric bootstrap: failing estimator aborts") {
  const Dataset ds = linear_dgp(50, 9);
  int calls = 0;
  auto bad = [&](const Dataset&) -> Eigen::VectorXd {
    ++calls;
    fail(ErrorCode::SingularDesign, "always");
  };
  CHECK_ERROR_CODE(nonparam_bootstrap_band(bad, ds, Eigen::VectorXd::Zero(3), 0.95, 40, 1), BootstrapDegenerate);
  CHECK(calls == 40);
}

TEST_CASE("nonparametric bootstrap: uniform coverage of a linear truth") {
  const Eigen::VectorXd grid = linspace(-1, 1, 10);
  int covered = 0;
  for (std::uint64_t r = 0; r < 100; ++r) {
    const Dataset ds = linear_dgp(500, 5000 + r);
    ClassicInference inf;
    inf.n_boot = 500;
    inf.seed = r;
    inf.vartype = VarType::bootstrap;
    const CmeCurve c = linear_cme(ds, grid, inf);
    bool all = true;
    for (int j = 0; j < grid.size(); ++j) {
      const double truth = 1.0 + 0.5 * grid(j);
      all = all && c.uci_lo(j) <= truth && truth <= c.uci_hi(j);
    }
    covered += all;
  }
  MESSAGE("uniform coverage " << covered << "/100");
  CHECK(covered >= 90);
}

TEST_CASE("hypothesis tests") {
  CmeCurve zero = make_curve(linspace(0, 1, 3), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3), "t");
  zero.ci_lo = zero.uci_lo = Eigen::VectorXd::Constant(3, -1);
  zero.ci_hi = zero.uci_hi = Eigen::VectorXd::Constant(3, 1);
  auto r = hypothesis_tests(zero, std::make_pair(0.0, 1.0));
  for (int j = 0; j < 3; ++j) {
    CHECK(r.p_upper(j) == 0.5);
    CHECK(r.p_two_sided(j) == 1.0);
  }
  CHECK(*r.beta3_p == 1.0);
  CHECK_FALSE(r.uniform_rejects);

  CmeCurve up = zero;
  up.theta.setConstant(3.0);
  up.uci_lo.setConstant(0.5);
  up.uci_hi.setConstant(5.0);
  r = hypothesis_tests(up);
  CHECK(r.uniform_rejects);
  CHECK(r.uniform_region == std::vector<int>{0, 1, 2});
  CHECK(r.z(0) == 3.0);
}

TEST_CASE("uniform test under the null") {
  const Eigen::VectorXd grid = linspace(-1, 1, 10);
  int rejections = 0;
  for (std::uint64_t r = 0; r < 100; ++r) {
    const Dataset ds = linear_dgp(200, 9000 + r, 0.0, 0.0);
    ClassicInference inf;
    inf.n_boot = 200;
    inf.seed = r;
    rejections += hypothesis_tests(linear_cme(ds, grid, inf)).uniform_rejects;
  }
  MESSAGE("null rejections " << rejections << "/100");
  CHECK(rejections <= 10);
}
