#include "cme/learners.hpp"

#include <algorithm>
#include <cmath>

#include "cme/errors.hpp"
#include "cme/forest.hpp"
#include "cme/hist_gbm.hpp"
#include "cme/linear.hpp"
#include "cme/parallel.hpp"
#include "cme/stats.hpp"

namespace cme {

const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::post_lasso: return "post_lasso";
    case LearnerKind::random_forest: return "random_forest";
    case LearnerKind::hist_gbm: return "hist_gbm";
    case LearnerKind::oracle: return "oracle";
  }
  return "?";
}

const char* to_string(Task t) { return t == Task::regression ? "regression" : "classification"; }

LearnerKind parse_learner_kind(const std::string& s) {
  if (s == "lasso" || s == "post_lasso") return LearnerKind::post_lasso;
  if (s == "rf" || s == "random_forest") return LearnerKind::random_forest;
  if (s == "hgb" || s == "hist_gbm") return LearnerKind::hist_gbm;
  fail(ErrorCode::InvalidArgument, "unknown learner '" + s + "'");
}

const std::vector<std::string>& allowed_params(LearnerKind kind) {
  static const std::vector<std::string> lasso{"expand", "interactions", "spline_df", "cv_folds"};
  static const std::vector<std::string> rf{"n_estimators",     "max_depth",    "min_samples_split",
                                           "min_samples_leaf", "max_features", "bootstrap"};
  static const std::vector<std::string> hgb{"learning_rate", "max_iter",          "max_leaf_nodes", "min_samples_leaf",
                                            "max_depth",     "l2_regularization", "max_bins"};
  static const std::vector<std::string> none;
  switch (kind) {
    case LearnerKind::post_lasso: return lasso;
    case LearnerKind::random_forest: return rf;
    case LearnerKind::hist_gbm: return hgb;
    case LearnerKind::oracle: return none;
  }
  return none;
}

double LearnerSpec::param(const std::string& key, double fallback) const {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

void LearnerSpec::validate() const {
  const auto& ok = allowed_params(kind);
  for (const auto& [k, v] : params) {
    if (std::find(ok.begin(), ok.end(), k) == ok.end())
      fail(ErrorCode::InvalidArgument, std::string("parameter '") + k + "' is not valid for " + to_string(kind));
    if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "parameter '" + k + "' is not finite");
  }
  if (kind == LearnerKind::oracle && !oracle) fail(ErrorCode::InvalidArgument, "oracle learner without a function");
}

Eigen::VectorXd FittedLearner::predict(const Eigen::MatrixXd& V) const {
  require(model != nullptr, "learner used before fitting");
  return model->predict(V);
}

namespace {

std::vector<std::string> generic_names(Eigen::Index p) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < p; ++j) names.push_back("v" + std::to_string(j));
  return names;
}

bool is_constant(const Eigen::VectorXd& y) { return y.size() == 0 || y.maxCoeff() == y.minCoeff(); }

PostLassoModel finish_post_lasso(PostLassoModel m, const Eigen::MatrixXd& slopes, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& coef_at_lambda) {
  m.selected = selected_columns(coef_at_lambda);
  m.coef = post_selection_refit(slopes, y, m.selected, m.family).coef;
  return m;
}

}  // namespace

Eigen::VectorXd PostLassoModel::predict(const Eigen::MatrixXd& V) const {
  if (constant) return Eigen::VectorXd::Constant(V.rows(), coef(0));
  const Eigen::VectorXd eta = linear_predictor(apply_design(design, V).slopes(), coef);
  return family == Family::binomial ? logistic(eta) : eta;
}

PostLassoModel fit_post_lasso(const Eigen::MatrixXd& V, const Eigen::VectorXd& y, Family family,
                              const PostLassoOptions& opt) {
  PostLassoModel m;
  m.family = family;
  m.design = fit_design(V, generic_names(V.cols()), opt.interactions, opt.expand, 3, opt.spline_df);
  if (family == Family::gaussian && is_constant(y)) {
    m.constant = true;
    m.coef = Eigen::VectorXd::Constant(1, y.size() ? y(0) : 0.0);
    return m;
  }
  const Eigen::MatrixXd slopes = apply_design(m.design, V).slopes();
  LassoOptions lo;
  lo.k_cv = std::min<int>(opt.cv_folds, static_cast<int>(y.size()));
  lo.seed = opt.seed;
  const LassoPath path = lasso_cd(slopes, y, family, std::nullopt, lo);
  m.path = path.lambdas.head(path.index_min + 1);
  m.lambda = path.lambda_min;
  return finish_post_lasso(std::move(m), slopes, y, path.coef_min());
}

PostLassoModel refit_post_lasso(const PostLassoModel& frozen, const Eigen::MatrixXd& V, const Eigen::VectorXd& y) {
  PostLassoModel m = frozen;
  if (frozen.family == Family::gaussian && is_constant(y)) {
    m.constant = true;
    m.coef = Eigen::VectorXd::Constant(1, y.size() ? y(0) : 0.0);
    return m;
  }
  if (frozen.family == Family::binomial && is_constant(y))
    fail(ErrorCode::DegenerateTarget, "classification target is constant");
  m.constant = false;
  const Eigen::MatrixXd slopes = apply_design(m.design, V).slopes();
  if (m.path.size() == 0) fail(ErrorCode::InvalidArgument, "frozen post-lasso model has no lambda path");
  const LassoPath path = lasso_path(slopes, y, m.family, m.path);
  return finish_post_lasso(std::move(m), slopes, y, path.coefs.col(path.coefs.cols() - 1));
}

namespace {

class PostLassoLearner : public Model {
 public:
  explicit PostLassoLearner(PostLassoModel m) : m_(std::move(m)) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& V) const override { return m_.predict(V); }

 private:
  PostLassoModel m_;
};

class ForestLearner : public Model {
 public:
  explicit ForestLearner(RandomForest f) : f_(std::move(f)) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& V) const override { return f_.predict(V); }

 private:
  RandomForest f_;
};

class GbmLearner : public Model {
 public:
  explicit GbmLearner(HistGbm g) : g_(std::move(g)) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& V) const override { return g_.predict(V); }

 private:
  HistGbm g_;
};

class OracleLearner : public Model {
 public:
  explicit OracleLearner(OracleFn fn) : fn_(std::move(fn)) {}
  Eigen::VectorXd predict(const Eigen::MatrixXd& V) const override { return fn_(V); }

 private:
  OracleFn fn_;
};

int as_int(double v) { return static_cast<int>(std::lround(v)); }

}  // namespace

FittedLearner fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& V, const Eigen::VectorXd& target,
                          std::vector<int> train_rows) {
  spec.validate();
  require(V.rows() == target.size(), "learner: covariates and target differ in length");
  if (spec.kind != LearnerKind::oracle && V.rows() < 10)
    fail(ErrorCode::DegenerateSample, "learner needs at least 10 rows, got " + std::to_string(V.rows()));
  const bool cls = spec.task == Task::classification;
  if (cls) {
    for (Eigen::Index i = 0; i < target.size(); ++i)
      if (target(i) != 0.0 && target(i) != 1.0)
        fail(ErrorCode::InvalidArgument, "classification target must be 0/1");
    if (spec.kind != LearnerKind::oracle && is_constant(target))
      fail(ErrorCode::DegenerateTarget, "classification target is constant");
  }
  FittedLearner out;
  out.spec = spec;
  out.train_rows = std::move(train_rows);
  switch (spec.kind) {
    case LearnerKind::post_lasso: {
      PostLassoOptions o;
      o.expand = spec.param("expand", 1) != 0;
      o.interactions = spec.param("interactions", 0) != 0;
      o.spline_df = as_int(spec.param("spline_df", 6));
      o.cv_folds = as_int(spec.param("cv_folds", 10));
      o.seed = spec.seed;
      out.model = std::make_shared<PostLassoLearner>(
          fit_post_lasso(V, target, cls ? Family::binomial : Family::gaussian, o));
      break;
    }
    case LearnerKind::random_forest: {
      ForestOptions o;
      o.n_estimators = as_int(spec.param("n_estimators", 100));
      o.max_depth = as_int(spec.param("max_depth", 0));
      o.min_samples_split = as_int(spec.param("min_samples_split", 2));
      o.min_samples_leaf = as_int(spec.param("min_samples_leaf", 1));
      const double sqrt_share = std::ceil(std::sqrt(static_cast<double>(V.cols()))) / V.cols();
      o.max_features = spec.param("max_features", cls ? sqrt_share : 1.0);
      o.bootstrap = spec.param("bootstrap", 1) != 0;
      o.classification = cls;
      o.seed = spec.seed;
      RandomForest f;
      f.fit(V, target, o);
      out.model = std::make_shared<ForestLearner>(std::move(f));
      break;
    }
    case LearnerKind::hist_gbm: {
      HistGbmOptions o;
      o.learning_rate = spec.param("learning_rate", 0.1);
      o.max_iter = as_int(spec.param("max_iter", 100));
      o.max_leaf_nodes = as_int(spec.param("max_leaf_nodes", 31));
      o.min_samples_leaf = as_int(spec.param("min_samples_leaf", 20));
      o.max_depth = as_int(spec.param("max_depth", 0));
      o.l2_regularization = spec.param("l2_regularization", 0.0);
      o.max_bins = as_int(spec.param("max_bins", 256));
      o.classification = cls;
      HistGbm g;
      g.fit(V, target, o);
      out.model = std::make_shared<GbmLearner>(std::move(g));
      break;
    }
    case LearnerKind::oracle:
      out.model = std::make_shared<OracleLearner>(spec.oracle);
      break;
  }
  return out;
}

double rmse(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
  require(y.size() == pred.size() && y.size() > 0, "rmse: length mismatch");
  return std::sqrt((y - pred).squaredNorm() / y.size());
}

double log_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& prob) {
  require(y.size() == prob.size() && y.size() > 0, "log_loss: length mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = std::clamp(prob(i), 1e-12, 1.0 - 1e-12);
    s -= y(i) * std::log(p) + (1.0 - y(i)) * std::log(1.0 - p);
  }
  return s / y.size();
}

double oof_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& pred, Task task) {
  return task == Task::regression ? rmse(y, pred) : log_loss(y, pred);
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

}  // namespace

Eigen::VectorXd crossfit_predict(const LearnerSpec& spec, const Eigen::MatrixXd& V, const Eigen::VectorXd& y,
                                 const FoldAssignment& folds) {
  require(static_cast<Eigen::Index>(folds.fold_of.size()) == V.rows(), "fold assignment has the wrong length");
  Eigen::VectorXd pred(V.rows());
  parallel_for(folds.k, [&](int f) {
    const auto tr = folds.train_rows(f);
    const auto te = folds.test_rows(f);
    const FittedLearner m = fit_learner(spec, take_rows(V, tr), take(y, tr), tr);
    const Eigen::VectorXd p = m.predict(take_rows(V, te));
    for (std::size_t k = 0; k < te.size(); ++k) pred(te[k]) = p(k);
  });
  return pred;
}

std::vector<ParamMap> expand_grid(const ParamGrid& grid) {
  std::vector<ParamMap> cells{ParamMap{}};
  for (const auto& [key, values] : grid) {
    require(!values.empty(), "grid dimension '" + key + "' has no values");
    std::vector<ParamMap> next;
    for (const auto& cell : cells)
      for (double v : values) {
        ParamMap c = cell;
        c[key] = v;
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }
  return cells;
}

GridSearchResult grid_search_cv(const LearnerSpec& base, const ParamGrid& grid, const Eigen::MatrixXd& V,
                                const Eigen::VectorXd& y, int k, std::uint64_t seed) {
  GridSearchResult r;
  r.cells = expand_grid(grid);
  const FoldAssignment folds = assign_folds(static_cast<int>(V.rows()), k, seed);
  r.losses.resize(r.cells.size());
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    LearnerSpec s = base;
    for (const auto& [key, v] : r.cells[c]) s.params[key] = v;
    r.losses[c] = oof_loss(y, crossfit_predict(s, V, y, folds), s.task);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < r.cells.size(); ++c)
    if (r.losses[c] < r.losses[best]) best = c;
  r.best = base;
  for (const auto& [key, v] : r.cells[best]) r.best.params[key] = v;
  return r;
}

}  // namespace cme
