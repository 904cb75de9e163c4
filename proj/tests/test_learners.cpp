#include <algorithm>
#include <cmath>

#include "cme/forest.hpp"
#include "cme/hist_gbm.hpp"
#include "cme/learners.hpp"
#include "cme/linear.hpp"
#include "cme/rng.hpp"
#include "cme/stats.hpp"
#include "support.hpp"

using namespace cme;

namespace {

Eigen::MatrixXd normal_matrix(Rng& rng, int n, int p) {
  Eigen::MatrixXd V(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) V(i, j) = rng.normal();
  return V;
}

Eigen::VectorXd step_target(const Eigen::MatrixXd& V) {
  Eigen::VectorXd y(V.rows());
  for (Eigen::Index i = 0; i < V.rows(); ++i) y(i) = V(i, 0) > 0 ? 1.0 : 0.0;
  return y;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

}  // namespace

TEST_CASE("post-lasso recovers a sparse support") {
  int covered = 0;
  for (int s = 0; s < 50; ++s) {
    Rng rng(derive_seed(101, s));
    const Eigen::MatrixXd V = normal_matrix(rng, 500, 30);
    Eigen::VectorXd y(500);
    for (int i = 0; i < 500; ++i) y(i) = 1.5 * V(i, 0) - 1.0 * V(i, 1) + 0.8 * V(i, 2) + rng.normal();
    PostLassoOptions opt;
    opt.expand = false;
    opt.seed = s;
    const PostLassoModel m = fit_post_lasso(V, y, Family::gaussian, opt);
    const auto has = [&](int j) { return std::find(m.selected.begin(), m.selected.end(), j) != m.selected.end(); };
    covered += has(0) && has(1) && has(2);
  }
  CHECK(covered >= 45);
}

TEST_CASE("random forest fits a step function that a linear fit cannot") {
  Rng rng(7);
  const Eigen::MatrixXd V = normal_matrix(rng, 2000, 2);
  const Eigen::MatrixXd Vt = normal_matrix(rng, 1000, 2);
  const Eigen::VectorXd y = step_target(V), yt = step_target(Vt);
  LearnerSpec rf;
  rf.kind = LearnerKind::random_forest;
  rf.seed = 3;
  const double rf_rmse = rmse(yt, fit_learner(rf, V, y).predict(Vt));
  Eigen::MatrixXd X(2000, 3), Xt(1000, 3);
  X << Eigen::VectorXd::Ones(2000), V;
  Xt << Eigen::VectorXd::Ones(1000), Vt;
  const double lin_rmse = rmse(yt, Xt * ols(X, y, false).coef);
  CHECK(rf_rmse < 0.2);
  // best linear predictor of 1{Z>0} for normal Z leaves variance 1/4 - 1/(2 pi)
  CHECK(lin_rmse == doctest::Approx(std::sqrt(0.25 - 1 / (2 * M_PI))).epsilon(0.05));
  CHECK(lin_rmse > rf_rmse + 0.1);

  const Eigen::VectorXd s = 2 * y.array() - 1, st = 2 * yt.array() - 1;
  CHECK(rmse(st, fit_learner(rf, V, s).predict(Vt)) < 0.4);
  CHECK(rmse(st, Xt * ols(X, s, false).coef) > 0.4);
}

TEST_CASE("hist gbm classification approaches the Bayes log-loss") {
  Rng rng(11);
  const int n = 4000;
  const Eigen::MatrixXd V = normal_matrix(rng, n, 2);
  const Eigen::MatrixXd Vt = normal_matrix(rng, n, 2);
  auto draw = [&](const Eigen::MatrixXd& M, Eigen::VectorXd& p) {
    Eigen::VectorXd y(M.rows());
    p.resize(M.rows());
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      p(i) = logistic(M(i, 0));
      y(i) = rng.bernoulli(p(i)) ? 1.0 : 0.0;
    }
    return y;
  };
  Eigen::VectorXd p, pt;
  const Eigen::VectorXd y = draw(V, p);
  const Eigen::VectorXd yt = draw(Vt, pt);
  LearnerSpec hgb;
  hgb.kind = LearnerKind::hist_gbm;
  hgb.task = Task::classification;
  const Eigen::VectorXd ph = fit_learner(hgb, V, y).predict(Vt);
  CHECK(ph.minCoeff() >= 0.0);
  CHECK(ph.maxCoeff() <= 1.0);
  CHECK(log_loss(yt, ph) - log_loss(yt, pt) < 0.05);
}

TEST_CASE("single unbagged tree interpolates distinct training points") {
  Rng rng(5);
  const Eigen::MatrixXd V = normal_matrix(rng, 200, 3);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) y(i) = rng.normal();
  LearnerSpec rf;
  rf.kind = LearnerKind::random_forest;
  rf.params = {{"n_estimators", 1}, {"bootstrap", 0}, {"max_features", 1.0}};
  const Eigen::VectorXd fit = fit_learner(rf, V, y).predict(V);
  CHECK((fit - y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hist gbm training loss never increases") {
  Rng rng(9);
  const Eigen::MatrixXd V = normal_matrix(rng, 1500, 3);
  Eigen::VectorXd y(1500), c(1500);
  for (int i = 0; i < 1500; ++i) {
    y(i) = std::sin(2 * V(i, 0)) + V(i, 1) * V(i, 2) + 0.3 * rng.normal();
    c(i) = rng.bernoulli(logistic(V(i, 0) - V(i, 1))) ? 1.0 : 0.0;
  }
  for (bool cls : {false, true}) {
    HistGbmOptions o;
    o.classification = cls;
    HistGbm g;
    g.fit(V, cls ? c : y, o);
    const auto& tr = g.loss_trace();
    REQUIRE(tr.size() == 100);
    for (std::size_t t = 1; t < tr.size(); ++t) CHECK(tr[t] <= tr[t - 1] + 1e-12);
  }
}

TEST_CASE("learners are deterministic under a seed") {
  Rng rng(13);
  const Eigen::MatrixXd V = normal_matrix(rng, 400, 4);
  Eigen::VectorXd y(400);
  for (int i = 0; i < 400; ++i) y(i) = V(i, 0) - V(i, 1) * V(i, 1) + rng.normal();
  for (LearnerKind k : {LearnerKind::post_lasso, LearnerKind::random_forest, LearnerKind::hist_gbm}) {
    LearnerSpec s;
    s.kind = k;
    s.seed = 21;
    const Eigen::VectorXd a = fit_learner(s, V, y).predict(V);
    const Eigen::VectorXd b = fit_learner(s, V, y).predict(V);
    CHECK(a == b);
  }
}

TEST_CASE("constant classification target is rejected") {
  const Eigen::MatrixXd V = Eigen::MatrixXd::Random(50, 2);
  LearnerSpec s;
  s.task = Task::classification;
  for (LearnerKind k : {LearnerKind::post_lasso, LearnerKind::random_forest, LearnerKind::hist_gbm}) {
    s.kind = k;
    CHECK_ERROR_CODE(fit_learner(s, V, Eigen::VectorXd::Ones(50)), DegenerateTarget);
  }
  s.kind = LearnerKind::random_forest;
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(50);
  bad(0) = 0.5;
  CHECK_ERROR_CODE(fit_learner(s, V, bad), InvalidArgument);
  CHECK_ERROR_CODE(fit_learner(s, V.topRows(9), Eigen::VectorXd::Zero(9)), DegenerateSample);
}

TEST_CASE("parameter keys are restricted per learner kind") {
  LearnerSpec s;
  s.kind = LearnerKind::hist_gbm;
  s.params = {{"n_estimators", 100}};
  CHECK_ERROR_CODE(s.validate(), InvalidArgument);
  s.params = {{"learning_rate", 0.05}, {"max_iter", 50}};
  CHECK_NOTHROW(s.validate());
  s.kind = LearnerKind::oracle;
  s.params.clear();
  CHECK_ERROR_CODE(s.validate(), InvalidArgument);
  CHECK(parse_learner_kind("rf") == LearnerKind::random_forest);
  CHECK(parse_learner_kind("hgb") == LearnerKind::hist_gbm);
  CHECK(parse_learner_kind("lasso") == LearnerKind::post_lasso);
  CHECK_ERROR_CODE(parse_learner_kind("nn"), InvalidArgument);
}

TEST_CASE("random forest tuning grid enumerates 96 cells in order") {
  const ParamGrid grid{{"n_estimators", {100, 300}}, {"max_depth", {0, 5, 10}},  {"min_samples_split", {2, 10}},
                       {"min_samples_leaf", {1, 5}}, {"max_features", {1.0, 0.8}}, {"bootstrap", {1, 0}}};
  const auto cells = expand_grid(grid);
  CHECK(cells.size() == 96);
  CHECK(cells[0].at("bootstrap") == 1);
  CHECK(cells[1].at("bootstrap") == 0);
  CHECK(cells[0].at("n_estimators") == 100);
  CHECK(cells[95].at("n_estimators") == 300);
  CHECK(cells[95].at("max_depth") == 10);
  CHECK(cells[48].at("n_estimators") == 300);
  CHECK(cells[47].at("n_estimators") == 100);
}

TEST_CASE("grid search with a single cell returns that cell") {
  Rng rng(17);
  const Eigen::MatrixXd V = normal_matrix(rng, 200, 2);
  const Eigen::VectorXd y = V.col(0) + 0.1 * normal_matrix(rng, 200, 1).col(0);
  LearnerSpec base;
  base.kind = LearnerKind::hist_gbm;
  const auto r = grid_search_cv(base, {{"learning_rate", {0.2}}}, V, y, 5, 1);
  CHECK(r.cells.size() == 1);
  CHECK(r.best.params.at("learning_rate") == 0.2);
  CHECK(std::isfinite(r.losses[0]));
}

TEST_CASE("grid search prefers the richer of two nested cells on noiseless data") {
  Rng rng(19);
  const Eigen::MatrixXd V = normal_matrix(rng, 400, 2);
  Eigen::VectorXd y(400);
  for (int i = 0; i < 400; ++i) y(i) = std::sin(2 * V(i, 0)) + V(i, 1);
  LearnerSpec base;
  base.kind = LearnerKind::hist_gbm;
  const auto r = grid_search_cv(base, {{"max_depth", {1, 3}}}, V, y, 5, 2);
  CHECK(r.losses[1] <= r.losses[0]);
  CHECK(r.best.params.at("max_depth") == 3);
}

TEST_CASE("grid search breaks ties by grid order") {
  Rng rng(23);
  const Eigen::MatrixXd V = normal_matrix(rng, 100, 2);
  const Eigen::VectorXd y = V.col(0);
  LearnerSpec base;
  base.kind = LearnerKind::oracle;
  base.oracle = [](const Eigen::MatrixXd& M) { return Eigen::VectorXd(M.col(0)); };
  base.kind = LearnerKind::random_forest;
  // identical cells give identical losses
  const auto r = grid_search_cv(base, {{"n_estimators", {5, 5, 5}}}, V, y, 4, 3);
  CHECK(r.losses[0] == r.losses[1]);
  CHECK(r.losses[1] == r.losses[2]);
  CHECK(r.best.params.at("n_estimators") == 5);
}

TEST_CASE("cross-fitted predictions ignore the held-out targets") {
  Rng rng(29);
  const Eigen::MatrixXd V = normal_matrix(rng, 120, 2);
  Eigen::VectorXd y = V.col(0) + V.col(1);
  const FoldAssignment folds = assign_folds(120, 3, 4);
  for (LearnerKind k : {LearnerKind::post_lasso, LearnerKind::random_forest, LearnerKind::hist_gbm}) {
    LearnerSpec s;
    s.kind = k;
    s.params = k == LearnerKind::hist_gbm ? ParamMap{{"min_samples_leaf", 5}} : ParamMap{};
    const Eigen::VectorXd base = crossfit_predict(s, V, y, folds);
    Eigen::VectorXd poisoned = y;
    for (int i : folds.test_rows(0)) poisoned(i) = 1e6;
    const Eigen::VectorXd p = crossfit_predict(s, V, poisoned, folds);
    for (int i : folds.test_rows(0)) CHECK(p(i) == base(i));
  }
}

TEST_CASE("log-loss closed forms") {
  Eigen::VectorXd y(6);
  y << 1, 0, 1, 1, 0, 0;
  CHECK(log_loss(y, Eigen::VectorXd::Constant(6, 0.5)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(oof_loss(y, y, Task::regression) == 0.0);
  CHECK(std::isfinite(log_loss(y, y)));
  CHECK(log_loss(y, y) < 1e-11);

  Rng rng(31);
  const double p = 0.3;
  Eigen::VectorXd z(20000);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.bernoulli(p) ? 1.0 : 0.0;
  const double ph = z.mean();
  const double entropy = -(ph * std::log(ph) + (1 - ph) * std::log(1 - ph));
  CHECK(log_loss(z, Eigen::VectorXd::Constant(z.size(), ph)) == doctest::Approx(entropy).epsilon(1e-12));
}

TEST_CASE("more capacity does not raise out-of-fold loss") {
  std::vector<double> rf_small, rf_large, hgb_small, hgb_large;
  for (int s = 0; s < 20; ++s) {
    Rng rng(derive_seed(37, s));
    const Eigen::MatrixXd V = normal_matrix(rng, 300, 2);
    Eigen::VectorXd y(300);
    for (int i = 0; i < 300; ++i) y(i) = std::sin(2 * V(i, 0)) + 0.5 * V(i, 1) + 0.5 * rng.normal();
    const FoldAssignment folds = assign_folds(300, 5, s);
    LearnerSpec rf;
    rf.kind = LearnerKind::random_forest;
    rf.seed = s;
    rf.params = {{"n_estimators", 5}};
    rf_small.push_back(rmse(y, crossfit_predict(rf, V, y, folds)));
    rf.params = {{"n_estimators", 60}};
    rf_large.push_back(rmse(y, crossfit_predict(rf, V, y, folds)));
    LearnerSpec hgb;
    hgb.kind = LearnerKind::hist_gbm;
    hgb.params = {{"max_iter", 10}};
    hgb_small.push_back(rmse(y, crossfit_predict(hgb, V, y, folds)));
    hgb.params = {{"max_iter", 50}};
    hgb_large.push_back(rmse(y, crossfit_predict(hgb, V, y, folds)));
  }
  CHECK(median_of(rf_large) <= median_of(rf_small));
  CHECK(median_of(hgb_large) <= median_of(hgb_small));
}

TEST_CASE("frozen post-lasso refit reuses knots and the lambda path") {
  Rng rng(41);
  const Eigen::MatrixXd V = normal_matrix(rng, 300, 3);
  Eigen::VectorXd y(300);
  for (int i = 0; i < 300; ++i) y(i) = V(i, 0) * V(i, 0) + V(i, 1) + 0.2 * rng.normal();
  const PostLassoModel m = fit_post_lasso(V, y, Family::gaussian);
  const PostLassoModel r = refit_post_lasso(m, V, y);
  CHECK(r.lambda == m.lambda);
  CHECK(r.design.blocks.size() == m.design.blocks.size());
  CHECK(r.selected == m.selected);
  CHECK((r.predict(V) - m.predict(V)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(rmse(y, m.predict(V)) < 0.3);
}
