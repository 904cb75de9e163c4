#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cme/classic.hpp"
#include "cme/dml.hpp"
#include "cme/lasso.hpp"
#include "cme/linear.hpp"
#include "cme/rng.hpp"
#include "cme/signals.hpp"
#include "cme/simlab.hpp"
#include "cme/spline.hpp"
#include "cme/stats.hpp"

using namespace cme;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double median_of(std::vector<double> v) {
  Eigen::VectorXd e = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return median(e);
}

// Bench rows for one estimator cell family; a failed cell makes the whole criterion fail.
std::vector<double> bench_rmse(DgpId dgp, const std::string& estimator, std::optional<LearnerKind> learner, int n,
                               int replicates, std::uint64_t seed, std::string& errors) {
  BenchConfig cfg;
  cfg.dgps = {dgp};
  cfg.estimators = {estimator};
  if (learner) cfg.learners = {*learner};
  cfg.sizes = {n};
  cfg.replicates = replicates;
  cfg.seed = seed;
  std::vector<double> out;
  for (const auto& r : run_bench(cfg)) {
    if (!r.ok) errors += r.estimator + ": " + r.failure + "; ";
    out.push_back(r.ok ? r.rmse_weighted : std::numeric_limits<double>::infinity());
  }
  return out;
}

Outcome c1_toy_estimand() {
  const auto t = toy_population();
  const double a = brute_force_cme(t, 0), b = brute_force_cme(t, 2);
  const bool ok = a == 0.25 && b == -1.0 && a - b == 1.25;
  return {ok, "theta(0)=" + fmt(a) + " theta(2)=" + fmt(b) + " difference=" + fmt(a - b)};
}

Dataset discrete_sample(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> ys, ds, xs, z1, z2;
  for (int x = 0; x < 3; ++x)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const int n1 = 2 + static_cast<int>(rng.below(6));
        const int n0 = 2 + static_cast<int>(rng.below(6));
        for (int k = 0; k < n1 + n0; ++k) {
          xs.push_back(x);
          z1.push_back(a);
          z2.push_back(b);
          ds.push_back(k < n1 ? 1.0 : 0.0);
          ys.push_back(rng.normal() + (x - 1.0) * ds.back() + a * b);
        }
      }
  const int n = static_cast<int>(ys.size());
  Eigen::MatrixXd z(n, 2);
  for (int i = 0; i < n; ++i) z.row(i) << z1[i], z2[i];
  return make_dataset(Eigen::Map<Eigen::VectorXd>(ys.data(), n), Eigen::Map<Eigen::VectorXd>(ds.data(), n),
                      Eigen::Map<Eigen::VectorXd>(xs.data(), n), z);
}

Outcome c2_sdim_ipw() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Dataset ds = discrete_sample(1000 + s);
    const auto sdim = sdim_oracle(ds);
    const auto ipw = conditional_means(ipw_signal(ds, frequency_nuisances(ds)).lambda, ds.x);
    for (const auto& [x, v] : sdim) worst = std::max(worst, std::abs(ipw.at(x) - v));
  }
  return {worst < 1e-12, "max |sdim - ipw| over 20 datasets = " + fmt(worst)};
}

Outcome c3_orthogonality() {
  const int n = 200000;
  const std::vector<double> ts{0.1, 0.2};
  auto ratio = [&](std::vector<NuisanceTarget> targets, SignalKind kind) {
    const auto rows = gateaux_orthogonality_check(DgpId::dgp1, n, 77, targets, ts, kind);
    return rows[1].deviation / rows[0].deviation;
  };
  const double r_mu1 = ratio({NuisanceTarget::mu1}, SignalKind::aipw);
  const double r_mu0 = ratio({NuisanceTarget::mu0}, SignalKind::aipw);
  const double r_pi = ratio({NuisanceTarget::pi}, SignalKind::aipw);
  const double r_ipw = ratio({NuisanceTarget::pi}, SignalKind::ipw);
  const double r_joint = ratio({NuisanceTarget::mu1, NuisanceTarget::mu0, NuisanceTarget::pi}, SignalKind::aipw);
  auto in = [](double r, double lo, double hi) { return r >= lo && r <= hi; };
  const bool ok = in(r_mu1, 2.5, 6) && in(r_mu0, 2.5, 6) && in(r_pi, 2.5, 6) && in(r_ipw, 1.6, 2.4);
  return {ok, "aipw ratios mu1=" + fmt(r_mu1) + " mu0=" + fmt(r_mu0) + " pi=" + fmt(r_pi) +
                  " (required [2.5, 6]); ipw pi ratio=" + fmt(r_ipw) +
                  " (required [1.6, 2.4]); joint mu1+mu0+pi ratio=" + fmt(r_joint) + " (informational)"};
}

Outcome c4_double_robustness() {
  std::vector<double> aipw, outcome;
  for (int s = 0; s < 20; ++s) {
    const SimDraw d = generate(DgpId::ch3_ex1, 4000, derive_seed(4, s));
    const Eigen::VectorXd grid = support_grid(d.oracle);
    LassoCmeOptions lo;
    lo.n_boot = 0;
    lo.seed = s;
    aipw.push_back(weighted_rmse(aipw_lasso_cme(d.data, grid, lo).curve, d.oracle));
    LassoCmeOptions lin = lo;
    lin.expand = false;
    lin.interactions = false;
    lin.signal = SignalKind::outcome;
    outcome.push_back(weighted_rmse(aipw_lasso_cme(d.data, grid, lin).curve, d.oracle));
  }
  const double ma = median_of(aipw), mo = median_of(outcome);
  return {ma < 0.25 && mo > 0.5,
          "median rmse aipw-lasso=" + fmt(ma) + " (< 0.25), linear outcome-only=" + fmt(mo) + " (> 0.5)"};
}

Outcome c5_expansion_gain() {
  int wins = 0;
  std::vector<double> with, without;
  for (int s = 0; s < 20; ++s) {
    const SimDraw d = generate(DgpId::ch3_ex2, 1000, derive_seed(5, s));
    const Eigen::VectorXd grid = support_grid(d.oracle);
    LassoCmeOptions lo;
    lo.n_boot = 0;
    lo.seed = s;
    const double a = weighted_rmse(aipw_lasso_cme(d.data, grid, lo).curve, d.oracle);
    lo.expand = false;
    lo.interactions = false;
    const double b = weighted_rmse(aipw_lasso_cme(d.data, grid, lo).curve, d.oracle);
    with.push_back(a);
    without.push_back(b);
    wins += a < b;
  }
  return {wins >= 16, "expansion better in " + std::to_string(wins) + "/20 seeds (>= 16); median rmse with=" +
                          fmt(median_of(with)) + " without=" + fmt(median_of(without))};
}

Outcome c6_sample_size() {
  std::string err;
  const double small = median_of(bench_rmse(DgpId::dgp1, "dml", LearnerKind::hist_gbm, 1000, 10, 6, err));
  const double large = median_of(bench_rmse(DgpId::dgp1, "dml", LearnerKind::hist_gbm, 10000, 10, 6, err));
  const double kern = median_of(bench_rmse(DgpId::dgp1, "kernel", std::nullopt, 1000, 10, 6, err));
  const double lasso = median_of(bench_rmse(DgpId::dgp1, "aipw_lasso", std::nullopt, 1000, 10, 6, err));
  const bool ok = err.empty() && large < small && kern < 0.3 && lasso < 0.3;
  return {ok, "dml-hgb median rmse n=1000 " + fmt(small) + ", n=10000 " + fmt(large) + "; n=1000 kernel " +
                  fmt(kern) + ", aipw-lasso " + fmt(lasso) + " (< 0.3)" + (err.empty() ? "" : "; errors: " + err)};
}

Outcome c7_kernel_failure() {
  std::string err;
  const double kern = median_of(bench_rmse(DgpId::dgp2, "kernel", std::nullopt, 10000, 10, 7, err));
  const double lasso = median_of(bench_rmse(DgpId::dgp2, "aipw_lasso", std::nullopt, 10000, 10, 7, err));
  return {err.empty() && kern > 2.0 * lasso, "median rmse kernel=" + fmt(kern) + " aipw-lasso=" + fmt(lasso) +
                                                 " (kernel > 2x)" + (err.empty() ? "" : "; errors: " + err)};
}

Outcome c8_discontinuities() {
  std::string err;
  const double hgb = median_of(bench_rmse(DgpId::dgp4, "dml", LearnerKind::hist_gbm, 10000, 10, 8, err));
  const double rf = median_of(bench_rmse(DgpId::dgp4, "dml", LearnerKind::random_forest, 10000, 10, 8, err));
  const double pl = median_of(bench_rmse(DgpId::dgp4, "dml", LearnerKind::post_lasso, 10000, 10, 8, err));
  return {err.empty() && hgb < pl && rf < pl, "median rmse hist_gbm=" + fmt(hgb) + " random_forest=" + fmt(rf) +
                                                  " post_lasso=" + fmt(pl) + (err.empty() ? "" : "; errors: " + err)};
}

// Zero-effect runs shared by the coverage and band-containment criteria.
struct CoverageRuns {
  int uniform_cover = 0, pointwise_cover = 0, runs = 0, containment_violations = 0;
};

bool contains_pointwise(const CmeCurve& c) {
  for (int j = 0; j < c.size(); ++j)
    if (c.uci_lo(j) > c.ci_lo(j) + 1e-12 || c.uci_hi(j) < c.ci_hi(j) - 1e-12) return false;
  return true;
}

CoverageRuns zero_effect_runs(int runs) {
  CoverageRuns out;
  const Eigen::VectorXd grid = linspace(-std::sqrt(3.0), std::sqrt(3.0), 51);
  for (int s = 0; s < runs; ++s) {
    const std::uint64_t seed = derive_seed(9, s);
    const SimDraw d = generate(DgpId::zero_effect, 2000, seed);
    LearnerSpec spec;
    spec.seed = seed;
    DmlOptions opt;
    opt.seed = seed;
    const CmeCurve c = dml_binary_cme(d.data, assign_folds(d.data, 5, seed), spec, spec, grid, opt).curve;
    ++out.runs;
    out.uniform_cover += (c.uci_lo.array() <= 0.0).all() && (c.uci_hi.array() >= 0.0).all();
    out.pointwise_cover += c.ci_lo(25) <= 0.0 && c.ci_hi(25) >= 0.0;
    out.containment_violations += !contains_pointwise(c);
  }
  return out;
}

Outcome c9_calibration() {
  const CoverageRuns r = zero_effect_runs(100);
  const bool ok = r.uniform_cover >= 88 && r.pointwise_cover >= 90 && r.pointwise_cover <= 99;
  return {ok, "uniform band covers 0 on the whole grid in " + std::to_string(r.uniform_cover) +
                  "/100 runs (>= 88); pointwise at x=0 in " + std::to_string(r.pointwise_cover) + "/100 (90..99)"};
}

Outcome c10_band_mechanics() {
  int violations = 0, curves = 0;
  const CoverageRuns r = zero_effect_runs(10);
  violations += r.containment_violations;
  curves += r.runs;
  for (int s = 0; s < 3; ++s) {
    const SimDraw d = generate(DgpId::ch3_ex1, 300, derive_seed(10, s));
    LassoCmeOptions lo;
    lo.n_boot = 200;
    lo.seed = s;
    violations += !contains_pointwise(aipw_lasso_cme(d.data, {}, lo).curve);
    ClassicInference inf;
    inf.n_boot = 200;
    inf.seed = s;
    violations += !contains_pointwise(linear_cme(d.data, default_grid(d.data.x), inf));
    curves += 2;
  }
  const SimDraw d = generate(DgpId::zero_effect, 2000, 10);
  DmlOptions opt;
  opt.n_multiplier = 0;
  const DmlResult one = dml_binary_cme(d.data, assign_folds(d.data, 5, 10), LearnerSpec{}, LearnerSpec{},
                                       Eigen::VectorXd::Zero(1), opt);
  const BandResult b = multiplier_band(one.projection.state, 0.95, 4000, 10);
  const bool ok = violations == 0 && std::abs(b.critical_uniform - 1.96) < 0.05;
  return {ok, "uniform band contains pointwise band in " + std::to_string(curves - violations) + "/" +
                  std::to_string(curves) + " curves; single-point critical value " + fmt(b.critical_uniform) +
                  " (|c - 1.96| < 0.05)"};
}

Outcome c11_numerics() {
  Rng rng(11);
  const int n = 300;
  Eigen::MatrixXd X(n, 4);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 4; ++j) X(i, j) = rng.normal();
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = 1 + X(i, 0) - 2 * X(i, 1) + 0.5 * X(i, 3) + rng.normal();
  Eigen::MatrixXd D(n, 5);
  D.col(0).setOnes();
  D.rightCols(4) = X;
  const double ols_gap = (lasso_single(X, y, Family::gaussian, 1e-8).coef - ols(D, y).coef).lpNorm<Eigen::Infinity>();

  Eigen::VectorXd lam(1);
  lam << lambda_max(X, y, Family::gaussian);
  const int nz = lasso_path(X, y, Family::gaussian, lam).nonzeros(0);

  Eigen::VectorXd xs(400);
  for (int i = 0; i < 400; ++i) xs(i) = rng.uniform(-2, 3);
  const SplineBasis basis = quantile_spline(xs, 3, 6);
  const Eigen::MatrixXd B = bspline_basis(linspace(basis.lo, basis.hi, 1001), basis);
  const double pou = (B.rowwise().sum().array() - 1.0).abs().maxCoeff();

  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w(i) = 0.1 + rng.uniform();
  const auto fit = wls(D, y, w);
  const Eigen::VectorXd ne = D.transpose() * w.asDiagonal() * (y - D * fit.coef);
  const double ne_rel = ne.lpNorm<Eigen::Infinity>() / (D.transpose() * w.asDiagonal() * y).lpNorm<Eigen::Infinity>();

  Eigen::VectorXd d = Eigen::VectorXd::Zero(100);
  d.head(25).setOnes();
  const double logit_gap = std::abs(logit_irls(Eigen::MatrixXd::Ones(100, 1), d).coef(0) - std::log(0.25 / 0.75));

  const bool ok = ols_gap < 1e-4 && nz == 0 && pou < 1e-12 && ne_rel < 1e-8 && logit_gap < 1e-8;
  return {ok, "lasso->ols " + fmt(ols_gap) + ", nonzeros at lambda_max " + std::to_string(nz) +
                  ", partition of unity " + fmt(pou) + ", wls normal equations " + fmt(ne_rel) +
                  ", logit intercept " + fmt(logit_gap)};
}

Outcome c12_plrm_oracle() {
  std::vector<double> means;
  for (int s = 0; s < 10; ++s) {
    const std::uint64_t seed = derive_seed(12, s);
    const SimDraw d = generate(DgpId::plrm_constant, 5000, seed);
    DmlOptions opt;
    opt.n_multiplier = 0;
    const DmlResult r = dml_continuous_cme(d.data, assign_folds(d.data, 5, seed), oracle_learner(d.oracle.g),
                                           oracle_learner(d.oracle.m), support_grid(d.oracle), opt);
    means.push_back(r.curve.theta.mean());
  }
  Eigen::VectorXd m = Eigen::Map<Eigen::VectorXd>(means.data(), 10);
  const double mc_se = sd(m) / std::sqrt(10.0);
  const double gap = std::abs(m.mean() - 2.0);
  return {gap < 2.0 * mc_se, "mean curve level " + fmt(m.mean()) + ", |gap| " + fmt(gap) + " vs 2 MC se " +
                                 fmt(2.0 * mc_se)};
}

struct Criterion {
  std::function<Outcome()> run;
  double limit_s;
};

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, Criterion> criteria = {
      {1, {c1_toy_estimand, 1}},       {2, {c2_sdim_ipw, 5}},          {3, {c3_orthogonality, 60}},
      {4, {c4_double_robustness, 120}}, {5, {c5_expansion_gain, 120}},  {6, {c6_sample_size, 600}},
      {7, {c7_kernel_failure, 600}},   {8, {c8_discontinuities, 1200}}, {9, {c9_calibration, 900}},
      {10, {c10_band_mechanics, 60}},  {11, {c11_numerics, 30}},       {12, {c12_plrm_oracle, 60}}};
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (const auto& [k, _] : criteria) which.push_back(k);
  int failures = 0;
  for (int k : which) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < it->second.limit_s;
    const bool pass = o.pass && in_time;
    std::cout << "criterion " << k << ": " << (pass ? "PASS" : "FAIL") << " | " << o.detail << " | " << fmt(secs)
              << " s (limit " << it->second.limit_s << " s)" << std::endl;
    failures += !pass;
  }
  return failures == 0 ? 0 : 1;
}
