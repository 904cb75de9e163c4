#include "cme/dml.hpp"

#include <cmath>

#include "cme/errors.hpp"
#include "cme/parallel.hpp"

namespace cme {

const char* to_string(TuningMode m) { return m == TuningMode::global ? "global" : "per_fold"; }

TuningMode parse_tuning_mode(const std::string& s) {
  if (s == "global") return TuningMode::global;
  if (s == "per_fold" || s == "per-fold") return TuningMode::per_fold;
  fail(ErrorCode::InvalidArgument, "unknown tuning mode '" + s + "'");
}

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& M, const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), M.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(k) = M.row(rows[k]);
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<int>& rows) {
  Eigen::VectorXd out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) out(k) = v(rows[k]);
  return out;
}

std::vector<int> rows_with_d(const Dataset& ds, const std::vector<int>& rows, double value) {
  std::vector<int> out;
  for (int i : rows)
    if (ds.d(i) == value) out.push_back(i);
  return out;
}

std::vector<int> all_rows(int n) {
  std::vector<int> r(n);
  for (int i = 0; i < n; ++i) r[i] = i;
  return r;
}

LearnerSpec with_task(LearnerSpec s, Task t) {
  if (s.kind != LearnerKind::oracle) s.task = t;
  return s;
}

LearnerSpec tune(const LearnerSpec& spec, const ParamGrid& grid, const Eigen::MatrixXd& V, const Eigen::VectorXd& y,
                 const DmlOptions& opt) {
  if (grid.empty() || spec.kind == LearnerKind::oracle) return spec;
  const int k = std::min<int>(opt.tuning_folds, static_cast<int>(y.size()));
  return grid_search_cv(spec, grid, V, y, k, opt.seed).best;
}

Eigen::VectorXd fit_predict(const LearnerSpec& spec, const ParamGrid& grid, const DmlOptions& opt,
                            const Eigen::MatrixXd& V, const Eigen::VectorXd& target, const std::vector<int>& train,
                            const std::vector<int>& test) {
  const Eigen::MatrixXd Vtr = take_rows(V, train);
  const Eigen::VectorXd ytr = take(target, train);
  const LearnerSpec s = opt.tuning == TuningMode::per_fold ? tune(spec, grid, Vtr, ytr, opt) : spec;
  return fit_learner(s, Vtr, ytr, train).predict(take_rows(V, test));
}

void scatter(Eigen::VectorXd& dst, const std::vector<int>& rows, const Eigen::VectorXd& src) {
  for (std::size_t k = 0; k < rows.size(); ++k) dst(rows[k]) = src(k);
}

double rmse_on(const Eigen::VectorXd& y, const Eigen::VectorXd& pred, const std::vector<int>& rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  return rmse(take(y, rows), take(pred, rows));
}

struct TunedSpecs {
  LearnerSpec y1, y0, t;
};

TunedSpecs tuned_specs(const Dataset& ds, const LearnerSpec& y_spec, const LearnerSpec& t_spec,
                       const DmlOptions& opt) {
  const bool binary_t = ds.treatment_type == TreatmentType::binary;
  const Task ytask = ds.outcome_type == OutcomeType::binary ? Task::classification : Task::regression;
  TunedSpecs s{with_task(y_spec, ytask), with_task(opt.y0_spec.value_or(y_spec), ytask),
               with_task(t_spec, binary_t ? Task::classification : Task::regression)};
  if (opt.tuning != TuningMode::global) return s;
  const Eigen::MatrixXd V = covariates(ds);
  const auto rows = all_rows(ds.n());
  if (binary_t) {
    const auto r1 = rows_with_d(ds, rows, 1.0), r0 = rows_with_d(ds, rows, 0.0);
    s.y1 = tune(s.y1, opt.y_grid, take_rows(V, r1), take(ds.y, r1), opt);
    s.y0 = tune(s.y0, opt.y_grid, take_rows(V, r0), take(ds.y, r0), opt);
  } else {
    s.y1 = tune(s.y1, opt.y_grid, V, ds.y, opt);
  }
  s.t = tune(s.t, opt.t_grid, V, ds.d, opt);
  return s;
}

NuisanceFit crossfit_with(const Dataset& ds, const FoldAssignment& folds, const TunedSpecs& specs,
                          const DmlOptions& opt) {
  require(static_cast<int>(folds.fold_of.size()) == ds.n(), "fold assignment has the wrong length");
  const int n = ds.n();
  const Eigen::MatrixXd V = covariates(ds);
  const bool binary_t = ds.treatment_type == TreatmentType::binary;
  NuisanceFit nf;
  nf.folds = folds;
  if (binary_t) {
    for (int f = 0; f < folds.k; ++f) {
      const auto train = folds.train_rows(f);
      if (rows_with_d(ds, train, 1.0).empty() || rows_with_d(ds, train, 0.0).empty())
        fail(ErrorCode::FoldMissingTreatmentArm,
             "training rows for fold " + std::to_string(f) + " lack a treatment arm");
    }
    nf.mu1.resize(n);
    nf.mu0.resize(n);
    Eigen::VectorXd pi(n);
    parallel_for(folds.k, [&](int f) {
      const auto train = folds.train_rows(f), test = folds.test_rows(f);
      scatter(nf.mu1, test, fit_predict(specs.y1, opt.y_grid, opt, V, ds.y, rows_with_d(ds, train, 1.0), test));
      scatter(nf.mu0, test, fit_predict(specs.y0, opt.y_grid, opt, V, ds.y, rows_with_d(ds, train, 0.0), test));
      scatter(pi, test, fit_predict(specs.t, opt.t_grid, opt, V, ds.d, train, test));
    });
    nf.pi = clip_propensity(pi, opt.clip);
    const auto rows = all_rows(n);
    nf.loss["mu1_rmse"] = rmse_on(ds.y, nf.mu1, rows_with_d(ds, rows, 1.0));
    nf.loss["mu0_rmse"] = rmse_on(ds.y, nf.mu0, rows_with_d(ds, rows, 0.0));
    nf.loss["pi_logloss"] = log_loss(ds.d, nf.pi);
  } else {
    nf.g_hat.resize(n);
    nf.m_hat.resize(n);
    parallel_for(folds.k, [&](int f) {
      const auto train = folds.train_rows(f), test = folds.test_rows(f);
      scatter(nf.g_hat, test, fit_predict(specs.y1, opt.y_grid, opt, V, ds.y, train, test));
      scatter(nf.m_hat, test, fit_predict(specs.t, opt.t_grid, opt, V, ds.d, train, test));
    });
    nf.loss["g_rmse"] = rmse(ds.y, nf.g_hat);
    nf.loss["m_rmse"] = rmse(ds.d, nf.m_hat);
  }
  return nf;
}

Eigen::VectorXd resolve_grid(const Dataset& ds, const Eigen::VectorXd& grid) {
  return grid.size() > 0 ? grid : default_grid(ds.x);
}

void attach_multiplier_band(DmlResult& r, const DmlOptions& opt) {
  const ProjectorState& st = r.projection.state;
  r.curve = make_curve(r.projection.grid, r.projection.theta, Eigen::VectorXd::Zero(st.grid.size()), "dml");
  if (opt.n_multiplier > 0) {
    apply_band(r.curve, multiplier_band(st, opt.level, opt.n_multiplier, opt.seed));
    r.curve.diagnostics["multiplier_seed"] = static_cast<double>(opt.seed);
  } else {
    apply_band(r.curve, sandwich_band(st, opt.level));
    r.curve.add_flag("uniform_band_skipped");
  }
  for (const auto& [k, v] : r.nuisances.loss) r.curve.diagnostics[k] = v;
  if (r.nuisances.folds) r.curve.diagnostics["folds"] = r.nuisances.folds->k;
  if (st.ridge_used) r.curve.add_flag("jacobian_ridge");
  if (st.kind == ProjectorState::Kind::local) r.curve.diagnostics["span"] = st.span;
  if (st.kind == ProjectorState::Kind::groups) r.curve.add_flag("discrete_moderator");
}

}  // namespace

NuisanceFit crossfit_nuisances(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& y_spec,
                               const LearnerSpec& t_spec, const DmlOptions& opt) {
  return crossfit_with(ds, folds, tuned_specs(ds, y_spec, t_spec, opt), opt);
}

DmlResult dml_binary_cme(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& y_spec,
                         const LearnerSpec& t_spec, const Eigen::VectorXd& grid, const DmlOptions& opt) {
  if (ds.treatment_type != TreatmentType::binary)
    fail(ErrorCode::InvalidArgument, "dml_binary_cme needs a binary treatment");
  const TunedSpecs specs = tuned_specs(ds, y_spec, t_spec, opt);
  DmlResult r;
  r.y_spec = specs.y1;
  r.t_spec = specs.t;
  r.nuisances = crossfit_with(ds, folds, specs, opt);
  r.signal = aipw_signal(ds, r.nuisances);
  r.projection = project_signal(r.signal, ds.x, resolve_grid(ds, grid), opt.smoother);
  attach_multiplier_band(r, opt);
  return r;
}

DmlResult dml_continuous_cme(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& y_spec,
                             const LearnerSpec& t_spec, const Eigen::VectorXd& grid, const DmlOptions& opt) {
  if (ds.treatment_type != TreatmentType::continuous)
    fail(ErrorCode::InvalidArgument, "dml_continuous_cme needs a continuous treatment");
  const TunedSpecs specs = tuned_specs(ds, y_spec, t_spec, opt);
  DmlResult r;
  r.y_spec = specs.y1;
  r.t_spec = specs.t;
  r.nuisances = crossfit_with(ds, folds, specs, opt);
  r.signal = plrm_residual_signal(ds, r.nuisances);
  r.projection = project_signal(r.signal, ds.x, resolve_grid(ds, grid), opt.smoother);
  attach_multiplier_band(r, opt);
  return r;
}

LearnerSpec post_lasso_spec(const LassoCmeOptions& opt, Task task) {
  LearnerSpec s;
  s.kind = LearnerKind::post_lasso;
  s.task = task;
  s.seed = opt.seed;
  s.params = {{"expand", opt.expand ? 1.0 : 0.0},
              {"interactions", opt.interactions ? 1.0 : 0.0},
              {"spline_df", static_cast<double>(opt.spline_df)},
              {"cv_folds", static_cast<double>(opt.cv_folds)}};
  return s;
}

namespace {

PostLassoOptions lasso_options(const LassoCmeOptions& opt) {
  PostLassoOptions o;
  o.expand = opt.expand;
  o.interactions = opt.interactions;
  o.spline_df = opt.spline_df;
  o.cv_folds = opt.cv_folds;
  o.seed = opt.seed;
  return o;
}

Family outcome_family(const Dataset& ds) {
  return ds.outcome_type == OutcomeType::binary ? Family::binomial : Family::gaussian;
}

//! Frozen smoother: the knots or span chosen on the full sample.
SmootherSpec frozen_smoother(const SmootherSpec& spec, const ProjectorState& st) {
  SmootherSpec s = spec;
  if (st.kind == ProjectorState::Kind::series) s.basis = st.basis;
  if (st.kind == ProjectorState::Kind::local) s.span = st.span;
  return s;
}

void finish_lasso_curve(DmlResult& r, const Dataset& ds, const CurveFn& refit, const LassoCmeOptions& opt,
                        const std::string& tag) {
  const ProjectorState& st = r.projection.state;
  r.curve = make_curve(r.projection.grid, r.projection.theta, Eigen::VectorXd::Zero(st.grid.size()), tag);
  const BandResult sw = sandwich_band(st, opt.level);
  apply_band(r.curve, sw);
  if (opt.n_boot > 0) {
    apply_band(r.curve, nonparam_bootstrap_band(refit, ds, r.curve.theta, opt.level, opt.n_boot, opt.seed));
    r.curve.diagnostics["bootstrap_seed"] = static_cast<double>(opt.seed);
  } else {
    r.curve.add_flag("uniform_band_skipped");
  }
  for (const auto& [k, v] : r.nuisances.loss) r.curve.diagnostics["insample_" + k] = v;
  if (st.kind == ProjectorState::Kind::local) r.curve.diagnostics["span"] = st.span;
  if (st.kind == ProjectorState::Kind::groups) r.curve.add_flag("discrete_moderator");
}

struct BinaryLassoModels {
  PostLassoModel mu1, mu0, pi;
};

NuisanceFit predict_binary(const BinaryLassoModels& m, const Eigen::MatrixXd& V, double clip) {
  NuisanceFit nf;
  nf.mu1 = m.mu1.predict(V);
  nf.mu0 = m.mu0.predict(V);
  nf.pi = clip_propensity(m.pi.predict(V), clip);
  return nf;
}

SignalVector binary_signal(const Dataset& ds, const NuisanceFit& nf, SignalKind kind) {
  switch (kind) {
    case SignalKind::outcome: return outcome_signal(ds, nf);
    case SignalKind::ipw: return ipw_signal(ds, nf);
    case SignalKind::aipw: return aipw_signal(ds, nf);
    default: fail(ErrorCode::InvalidArgument, "Lasso pipeline supports outcome, ipw and aipw signals");
  }
}

const char* lasso_tag(SignalKind kind) {
  switch (kind) {
    case SignalKind::outcome: return "outcome_lasso";
    case SignalKind::ipw: return "ipw_lasso";
    default: return "aipw_lasso";
  }
}

}  // namespace

DmlResult aipw_lasso_cme(const Dataset& ds, const Eigen::VectorXd& grid, const LassoCmeOptions& opt) {
  if (ds.treatment_type != TreatmentType::binary)
    fail(ErrorCode::InvalidArgument, "aipw_lasso_cme needs a binary treatment");
  const PostLassoOptions lo = lasso_options(opt);
  const Family fy = outcome_family(ds);
  const Eigen::MatrixXd V = covariates(ds);
  const auto rows = all_rows(ds.n());
  const auto r1 = rows_with_d(ds, rows, 1.0), r0 = rows_with_d(ds, rows, 0.0);
  if (r1.empty() || r0.empty()) fail(ErrorCode::FoldMissingTreatmentArm, "sample lacks a treatment arm");

  BinaryLassoModels m{fit_post_lasso(take_rows(V, r1), take(ds.y, r1), fy, lo),
                      fit_post_lasso(take_rows(V, r0), take(ds.y, r0), fy, lo),
                      fit_post_lasso(V, ds.d, Family::binomial, lo)};
  DmlResult r;
  r.y_spec = post_lasso_spec(opt, fy == Family::binomial ? Task::classification : Task::regression);
  r.t_spec = post_lasso_spec(opt, Task::classification);
  r.nuisances = predict_binary(m, V, opt.clip);
  r.nuisances.loss["mu1_rmse"] = rmse_on(ds.y, r.nuisances.mu1, r1);
  r.nuisances.loss["mu0_rmse"] = rmse_on(ds.y, r.nuisances.mu0, r0);
  r.nuisances.loss["pi_logloss"] = log_loss(ds.d, r.nuisances.pi);
  r.signal = binary_signal(ds, r.nuisances, opt.signal);
  r.projection = project_signal(r.signal, ds.x, resolve_grid(ds, grid), opt.smoother);

  const SmootherSpec frozen = frozen_smoother(opt.smoother, r.projection.state);
  const Eigen::VectorXd fixed_grid = r.projection.grid;
  const CurveFn refit = [&](const Dataset& b) -> Eigen::VectorXd {
    const Eigen::MatrixXd Vb = covariates(b);
    const auto rb = all_rows(b.n());
    const auto b1 = rows_with_d(b, rb, 1.0), b0 = rows_with_d(b, rb, 0.0);
    if (b1.empty() || b0.empty()) fail(ErrorCode::FoldMissingTreatmentArm, "resample lacks a treatment arm");
    const BinaryLassoModels mb{refit_post_lasso(m.mu1, take_rows(Vb, b1), take(b.y, b1)),
                               refit_post_lasso(m.mu0, take_rows(Vb, b0), take(b.y, b0)),
                               refit_post_lasso(m.pi, Vb, b.d)};
    const SignalVector sb = binary_signal(b, predict_binary(mb, Vb, opt.clip), opt.signal);
    return project_signal(sb, b.x, fixed_grid, frozen).theta;
  };
  finish_lasso_curve(r, ds, refit, opt, lasso_tag(opt.signal));
  return r;
}

DmlResult po_lasso_cme(const Dataset& ds, const Eigen::VectorXd& grid, const LassoCmeOptions& opt) {
  if (ds.treatment_type != TreatmentType::continuous)
    fail(ErrorCode::InvalidArgument, "po_lasso_cme needs a continuous treatment");
  const PostLassoOptions lo = lasso_options(opt);
  const Family fy = outcome_family(ds);
  const Eigen::MatrixXd V = covariates(ds);
  const PostLassoModel g = fit_post_lasso(V, ds.y, fy, lo);
  const PostLassoModel m = fit_post_lasso(V, ds.d, Family::gaussian, lo);
  DmlResult r;
  r.y_spec = post_lasso_spec(opt, fy == Family::binomial ? Task::classification : Task::regression);
  r.t_spec = post_lasso_spec(opt, Task::regression);
  r.nuisances.g_hat = g.predict(V);
  r.nuisances.m_hat = m.predict(V);
  r.nuisances.loss["g_rmse"] = rmse(ds.y, r.nuisances.g_hat);
  r.nuisances.loss["m_rmse"] = rmse(ds.d, r.nuisances.m_hat);
  r.signal = plrm_residual_signal(ds, r.nuisances);
  r.projection = project_signal(r.signal, ds.x, resolve_grid(ds, grid), opt.smoother);

  const SmootherSpec frozen = frozen_smoother(opt.smoother, r.projection.state);
  const Eigen::VectorXd fixed_grid = r.projection.grid;
  const CurveFn refit = [&](const Dataset& b) -> Eigen::VectorXd {
    const Eigen::MatrixXd Vb = covariates(b);
    NuisanceFit nb;
    nb.g_hat = refit_post_lasso(g, Vb, b.y).predict(Vb);
    nb.m_hat = refit_post_lasso(m, Vb, b.d).predict(Vb);
    return project_signal(plrm_residual_signal(b, nb), b.x, fixed_grid, frozen).theta;
  };
  finish_lasso_curve(r, ds, refit, opt, "po_lasso");
  return r;
}

}  // namespace cme
