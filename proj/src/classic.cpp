#include "cme/classic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cme/errors.hpp"
#include "cme/kde.hpp"
#include "cme/parallel.hpp"
#include "cme/stats.hpp"

namespace cme {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void set_normal_band(CmeCurve& c, double level) {
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  c.ci_lo = c.theta - z * c.se;
  c.ci_hi = c.theta + z * c.se;
  c.uci_lo = c.ci_lo;
  c.uci_hi = c.ci_hi;
  c.diagnostics["level"] = level;
}

void attach_bands(CmeCurve& c, const Dataset& ds, const CurveFn& refit, const ClassicInference& inf) {
  set_normal_band(c, inf.level);
  if (inf.n_boot <= 0) {
    require(inf.vartype == VarType::sandwich, "bootstrap variance needs n_boot > 0");
    c.add_flag("uniform_band_skipped");
    return;
  }
  const BandResult b = nonparam_bootstrap_band(refit, ds, c.theta, inf.level, inf.n_boot, inf.seed);
  apply_band(c, b, inf.vartype == VarType::sandwich);
  c.diagnostics["bootstrap_seed"] = static_cast<double>(inf.seed);
}

void flag_extrapolation(CmeCurve& c, const Eigen::VectorXd& x) {
  if (c.grid.size() == 0) return;
  if (c.grid.minCoeff() < x.minCoeff() || c.grid.maxCoeff() > x.maxCoeff()) c.add_flag("extrapolation");
}

}  // namespace

double LinearInteractionFit::se(double x) const {
  return std::sqrt(std::max(0.0, var1 + x * x * var3 + 2.0 * x * cov13));
}

LinearInteractionFit fit_linear_interaction(const Dataset& ds) {
  const int n = ds.n(), p = ds.p();
  Eigen::MatrixXd X(n, 4 + p);
  X.col(0).setOnes();
  X.col(1) = ds.d;
  X.col(2) = ds.x;
  X.col(3) = ds.d.cwiseProduct(ds.x);
  if (p > 0) X.rightCols(p) = ds.z;
  LinearInteractionFit f;
  f.fit = ols(X, ds.y);
  f.beta1 = f.fit.coef(1);
  f.beta3 = f.fit.coef(3);
  f.var1 = f.fit.vcov(1, 1);
  f.var3 = f.fit.vcov(3, 3);
  f.cov13 = f.fit.vcov(1, 3);
  f.x_min = ds.x.minCoeff();
  f.x_max = ds.x.maxCoeff();
  return f;
}

CmeCurve linear_cme(const Dataset& ds, const Eigen::VectorXd& grid, const ClassicInference& inf) {
  const LinearInteractionFit f = fit_linear_interaction(ds);
  auto evaluate = [&grid](const LinearInteractionFit& g) {
    return Eigen::VectorXd(grid.unaryExpr([&](double x) { return g.theta(x); }));
  };
  CmeCurve c = make_curve(grid, evaluate(f), grid.unaryExpr([&](double x) { return f.se(x); }), "linear");
  c.diagnostics["beta1"] = f.beta1;
  c.diagnostics["beta3"] = f.beta3;
  c.diagnostics["se_beta3"] = std::sqrt(std::max(0.0, f.var3));
  if (f.fit.ridge_used) c.add_flag("ridge_used");
  flag_extrapolation(c, ds.x);
  attach_bands(c, ds, [&](const Dataset& b) { return evaluate(fit_linear_interaction(b)); }, inf);
  return c;
}

EffectDifference effect_modification(const LinearInteractionFit& fit, double x1, double x2) {
  EffectDifference e;
  e.estimate = fit.beta3 * (x1 - x2);
  e.se = std::abs(x1 - x2) * std::sqrt(std::max(0.0, fit.var3));
  return e;
}

std::vector<double> equal_frequency_cutoffs(const Eigen::VectorXd& x, int nbins) {
  require(nbins >= 2, "binning needs at least two bins");
  std::vector<double> ps;
  for (int j = 1; j < nbins; ++j) ps.push_back(static_cast<double>(j) / nbins);
  std::vector<double> v(x.data(), x.data() + x.size());
  return quantiles(v, ps);
}

std::vector<int> assign_bins(const Eigen::VectorXd& x, const std::vector<double>& cutoffs) {
  std::vector<int> bin(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    bin[i] = static_cast<int>(std::lower_bound(cutoffs.begin(), cutoffs.end(), x(i)) - cutoffs.begin());
  return bin;
}

BinningResult bin_summary(const Dataset& ds, const std::vector<double>& cutoffs) {
  for (std::size_t j = 1; j < cutoffs.size(); ++j)
    require(cutoffs[j] > cutoffs[j - 1], "cutoffs must be strictly increasing");
  BinningResult r;
  r.cutoffs = cutoffs;
  const int nb = r.nbins();
  const auto bin = assign_bins(ds.x, cutoffs);
  r.n_rows.assign(nb, 0);
  r.n_treated.assign(nb, 0);
  r.n_control.assign(nb, 0);
  std::vector<double> dsum(nb, 0.0);
  for (int i = 0; i < ds.n(); ++i) {
    ++r.n_rows[bin[i]];
    dsum[bin[i]] += ds.d(i);
  }
  for (int j = 0; j < nb; ++j)
    if (r.n_rows[j] == 0) fail(ErrorCode::EmptyBin, "bin " + std::to_string(j + 1) + " has no observations");
  const bool binary = ds.treatment_type == TreatmentType::binary;
  for (int i = 0; i < ds.n(); ++i) {
    const int j = bin[i];
    const double threshold = binary ? 0.5 : dsum[j] / r.n_rows[j];
    if (ds.d(i) > threshold) ++r.n_treated[j];
    else ++r.n_control[j];
  }
  r.identified.resize(nb);
  for (int j = 0; j < nb; ++j) r.identified[j] = r.n_treated[j] > 0 && r.n_control[j] > 0;
  return r;
}

BinningResult binning_cme(const Dataset& ds, const std::vector<double>& cutoffs, BinEval rule) {
  require(!cutoffs.empty(), "binning needs at least two bins");
  const int nb = static_cast<int>(cutoffs.size()) + 1;
  const auto bin = assign_bins(ds.x, cutoffs);
  std::vector<std::vector<double>> members(nb);
  for (int i = 0; i < ds.n(); ++i) members[bin[i]].push_back(ds.x(i));
  std::vector<double> eval(nb);
  const double lo = ds.x.minCoeff(), hi = ds.x.maxCoeff();
  for (int j = 0; j < nb; ++j) {
    if (members[j].empty()) fail(ErrorCode::EmptyBin, "bin " + std::to_string(j + 1) + " has no observations");
    if (rule == BinEval::median) {
      eval[j] = quantile(members[j], 0.5);
    } else {
      const double a = j == 0 ? lo : cutoffs[j - 1];
      const double b = j == nb - 1 ? hi : cutoffs[j];
      eval[j] = 0.5 * (a + b);
    }
  }
  return binning_cme(ds, cutoffs, eval);
}

BinningResult binning_cme(const Dataset& ds, const std::vector<double>& cutoffs,
                          const std::vector<double>& eval_points) {
  BinningResult r = bin_summary(ds, cutoffs);
  const int nb = r.nbins();
  require(static_cast<int>(eval_points.size()) == nb, "one evaluation point per bin is required");
  r.eval_points = Eigen::Map<const Eigen::VectorXd>(eval_points.data(), nb);
  const auto bin = assign_bins(ds.x, cutoffs);
  const int n = ds.n(), p = ds.p();
  int cols = p;
  for (int j = 0; j < nb; ++j) cols += r.identified[j] ? 4 : 2;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, cols);
  std::vector<int> first(nb), alpha_col(nb, -1);
  int c = 0;
  for (int j = 0; j < nb; ++j) {
    first[j] = c;
    if (r.identified[j]) alpha_col[j] = c + 2;
    c += r.identified[j] ? 4 : 2;
  }
  for (int i = 0; i < n; ++i) {
    const int j = bin[i];
    const double dx = ds.x(i) - eval_points[j];
    X(i, first[j]) = 1.0;
    X(i, first[j] + 1) = dx;
    if (r.identified[j]) {
      X(i, first[j] + 2) = ds.d(i);
      X(i, first[j] + 3) = ds.d(i) * dx;
    }
  }
  if (p > 0) X.rightCols(p) = ds.z;
  const LinearFit fit = ols(X, ds.y);
  r.alpha = Eigen::VectorXd::Constant(nb, kNaN);
  r.se = Eigen::VectorXd::Constant(nb, kInf);
  for (int j = 0; j < nb; ++j) {
    if (alpha_col[j] < 0) continue;
    r.alpha(j) = fit.coef(alpha_col[j]);
    r.se(j) = std::sqrt(std::max(0.0, fit.vcov(alpha_col[j], alpha_col[j])));
  }
  return r;
}

CmeCurve binning_curve(const BinningResult& r, double level) {
  CmeCurve c = make_curve(r.eval_points, r.alpha, r.se, "binning");
  set_normal_band(c, level);
  c.add_flag("uniform_band_skipped");
  int missing = 0;
  for (bool id : r.identified) missing += !id;
  if (missing > 0) {
    c.add_flag("non_identified_bins");
    c.diagnostics["non_identified_bins"] = missing;
  }
  return c;
}

double geometric_mean(const Eigen::VectorXd& positive) {
  require(positive.size() > 0, "geometric mean of an empty vector");
  return std::exp(positive.array().max(std::numeric_limits<double>::min()).log().mean());
}

Eigen::VectorXd adaptive_bandwidths(double h0, const Eigen::VectorXd& density, double density_gm) {
  require(h0 > 0.0, "bandwidth must be positive");
  return density.unaryExpr([&](double r) {
    return h0 * std::sqrt(density_gm / std::max(r, std::numeric_limits<double>::min()));
  });
}

Eigen::VectorXd kernel_h_grid(const Eigen::VectorXd& x, int n_h) {
  const double range = x.maxCoeff() - x.minCoeff();
  if (!(range > 0.0)) fail(ErrorCode::DegenerateSample, "moderator has no spread");
  return logspace(0.05 * range, 2.0 * range, n_h);
}

namespace {

constexpr double kWindow = 10.0;  // kernel weights beyond 10 h are below 2e-22

// Rows sorted by the moderator, with the local design
// [1, D, dx, D dx, Z, Z dx] (last block only when fully moderated).
class LocalDesign {
 public:
  LocalDesign(const Dataset& ds, bool full) : full_(full), p_(ds.p()) {
    const int n = ds.n();
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return ds.x(a) < ds.x(b); });
    x_.resize(n);
    y_.resize(n);
    d_.resize(n);
    z_.resize(n, p_);
    for (int k = 0; k < n; ++k) {
      x_[k] = ds.x(order[k]);
      y_(k) = ds.y(order[k]);
      d_(k) = ds.d(order[k]);
      if (p_ > 0) z_.row(k) = ds.z.row(order[k]);
    }
  }

  int cols() const { return 4 + p_ * (full_ ? 2 : 1); }
  int p() const { return p_; }

  std::pair<int, int> window(double x0, double h) const {
    const auto a = std::lower_bound(x_.begin(), x_.end(), x0 - kWindow * h) - x_.begin();
    const auto b = std::upper_bound(x_.begin(), x_.end(), x0 + kWindow * h) - x_.begin();
    return {static_cast<int>(a), static_cast<int>(b)};
  }

  void row(int k, double x0, double* out) const {
    const double dx = x_[k] - x0;
    out[0] = 1.0;
    out[1] = d_(k);
    out[2] = dx;
    out[3] = d_(k) * dx;
    for (int j = 0; j < p_; ++j) out[4 + j] = z_(k, j);
    if (full_)
      for (int j = 0; j < p_; ++j) out[4 + p_ + j] = z_(k, j) * dx;
  }

  double weight(int k, double x0, double h) const {
    const double u = (x_[k] - x0) / h;
    return std::exp(-0.5 * u * u);
  }

  // Empty string when the local fit is identified.
  std::string check(int a, int b, double x0, double h) const {
    double sw = 0.0, sd = 0.0, sdd = 0.0;
    for (int k = a; k < b; ++k) {
      const double w = weight(k, x0, h);
      sw += w;
      sd += w * d_(k);
      sdd += w * d_(k) * d_(k);
    }
    if (sw < 2.0 * cols()) return "effective_sample_too_small";
    const double m = sd / sw;
    if (sdd / sw - m * m <= 1e-12 * std::max(1.0, m * m)) return "no_local_treatment_variation";
    return {};
  }

  // Normal-equation solve used inside cross-validation.
  bool fit_fast(double x0, double h, Eigen::VectorXd& coef) const {
    const auto [a, b] = window(x0, h);
    if (!check(a, b, x0, h).empty()) return false;
    const int k = cols();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd r = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd q(k);
    for (int i = a; i < b; ++i) {
      const double w = weight(i, x0, h);
      row(i, x0, q.data());
      A.selfadjointView<Eigen::Lower>().rankUpdate(q, w);
      r += w * y_(i) * q;
    }
    A = A.selfadjointView<Eigen::Lower>();
    Eigen::MatrixXd sol;
    if (!solve_spd(A, r, sol)) return false;
    coef = sol.col(0);
    return coef.allFinite();
  }

  // WLS with HC1 covariance; returns (alpha, se) or the failure reason.
  std::string fit_full(double x0, double h, double& alpha, double& se) const {
    const auto [a, b] = window(x0, h);
    const std::string why = check(a, b, x0, h);
    if (!why.empty()) return why;
    const int m = b - a, k = cols();
    Eigen::MatrixXd X(m, k);
    Eigen::VectorXd w(m);
    Eigen::RowVectorXd q(k);
    for (int i = 0; i < m; ++i) {
      row(a + i, x0, q.data());
      X.row(i) = q;
      w(i) = weight(a + i, x0, h);
    }
    try {
      const LinearFit f = wls(X, y_.segment(a, m), w);
      alpha = f.coef(1);
      se = std::sqrt(std::max(0.0, f.vcov(1, 1)));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::SingularDesign) return "singular_local_design";
      throw;
    }
    return {};
  }

  const std::vector<double>& xs() const { return x_; }

 private:
  bool full_;
  int p_;
  std::vector<double> x_;
  Eigen::VectorXd y_, d_;
  Eigen::MatrixXd z_;
};

}  // namespace

KernelFit kernel_cross_validate(const Dataset& ds, const KernelOptions& opt) {
  require(opt.cv_folds >= 2, "kernel cross-validation needs at least two folds");
  require(opt.cv_anchors >= 2, "kernel cross-validation needs at least two anchors");
  KernelFit out;
  out.cv_h = kernel_h_grid(ds.x, opt.n_h);
  const int nh = static_cast<int>(out.cv_h.size());
  out.cv_error = Eigen::VectorXd::Zero(nh);
  const auto folds = assign_folds(ds, opt.cv_folds, opt.seed);
  for (int f = 0; f < opt.cv_folds; ++f) {
    const Dataset train = subset(ds, folds.train_rows(f));
    const auto test = folds.test_rows(f);
    const LocalDesign design(train, opt.fully_moderated);
    const Eigen::VectorXd anchors = linspace(train.x.minCoeff(), train.x.maxCoeff(), opt.cv_anchors);
    const double gm = geometric_mean(kde_gaussian(train.x, train.x));
    const Eigen::VectorXd rho = kde_gaussian(train.x, anchors);
    const double step = anchors(1) - anchors(0);
    parallel_for(nh, [&](int hi) {
      if (!std::isfinite(out.cv_error(hi))) return;
      const Eigen::VectorXd h = adaptive_bandwidths(out.cv_h(hi), rho, gm);
      std::vector<Eigen::VectorXd> coef(opt.cv_anchors);
      std::vector<char> ok(opt.cv_anchors);
      for (int a = 0; a < opt.cv_anchors; ++a) ok[a] = design.fit_fast(anchors(a), h(a), coef[a]);
      double sse = 0.0;
      for (int i : test) {
        double pos = step > 0 ? (ds.x(i) - anchors(0)) / step : 0.0;
        pos = std::clamp(pos, 0.0, static_cast<double>(opt.cv_anchors - 1));
        const int lo = std::min(static_cast<int>(pos), opt.cv_anchors - 2);
        const double t = pos - lo;
        if (!ok[lo] || !ok[lo + 1]) {
          sse = kInf;
          break;
        }
        const Eigen::VectorXd c = (1.0 - t) * coef[lo] + t * coef[lo + 1];
        double pred = c(0) + c(1) * ds.d(i);
        for (int j = 0; j < design.p(); ++j) pred += c(4 + j) * ds.z(i, j);
        sse += (ds.y(i) - pred) * (ds.y(i) - pred);
      }
      out.cv_error(hi) += sse / test.size() / opt.cv_folds;
    });
  }
  int best = 0;
  for (int hi = 1; hi < nh; ++hi)
    if (out.cv_error(hi) < out.cv_error(best)) best = hi;
  if (!std::isfinite(out.cv_error(best)))
    fail(ErrorCode::InsufficientLocalData, "no candidate bandwidth gives identified local fits");
  out.h0 = out.cv_h(best);
  return out;
}

KernelFit kernel_fit(const Dataset& ds, const Eigen::VectorXd& grid, const KernelOptions& opt) {
  require(grid.size() > 0, "empty evaluation grid");
  KernelFit out;
  if (opt.h0) {
    require(*opt.h0 > 0.0, "bandwidth must be positive");
    out.h0 = *opt.h0;
  } else {
    out = kernel_cross_validate(ds, opt);
  }
  const LocalDesign design(ds, opt.fully_moderated);
  const double gm = geometric_mean(kde_gaussian(ds.x, ds.x));
  out.grid = grid;
  out.bandwidth = adaptive_bandwidths(out.h0, kde_gaussian(ds.x, grid), gm);
  const int k = static_cast<int>(grid.size());
  out.theta = Eigen::VectorXd::Constant(k, kNaN);
  out.se = Eigen::VectorXd::Constant(k, kInf);
  std::vector<char> ok(k, 0);
  parallel_for(k, [&](int j) {
    double a = 0.0, s = 0.0;
    if (design.fit_full(grid(j), out.bandwidth(j), a, s).empty()) {
      out.theta(j) = a;
      out.se(j) = s;
      ok[j] = 1;
    }
  });
  out.ok.assign(ok.begin(), ok.end());
  return out;
}

CmeCurve kernel_cme(const Dataset& ds, const Eigen::VectorXd& grid, const KernelOptions& opt,
                    const ClassicInference& inf) {
  const KernelFit f = kernel_fit(ds, grid, opt);
  CmeCurve c = make_curve(grid, f.theta, f.se, opt.fully_moderated ? "kernel" : "kernel_restricted");
  c.diagnostics["h0"] = f.h0;
  int bad = 0;
  for (bool ok : f.ok) bad += !ok;
  if (bad > 0) {
    c.add_flag("non_identified_points");
    c.diagnostics["non_identified_points"] = bad;
  }
  flag_extrapolation(c, ds.x);
  KernelOptions frozen = opt;
  frozen.h0 = f.h0;
  attach_bands(c, ds, [&](const Dataset& b) { return kernel_fit(b, grid, frozen).theta; }, inf);
  return c;
}

}  // namespace cme
