#include <algorithm>
#include <cmath>
#include <vector>

#include "cme/dml.hpp"
#include "cme/rng.hpp"
#include "cme/simlab.hpp"
#include "cme/stats.hpp"
#include "support.hpp"

using namespace cme;

namespace {

LearnerSpec learner(LearnerKind kind, ParamMap params = {}, std::uint64_t seed = 1) {
  LearnerSpec s;
  s.kind = kind;
  s.params = std::move(params);
  s.seed = seed;
  return s;
}

DmlOptions quiet() {
  DmlOptions opt;
  opt.n_multiplier = 0;
  return opt;
}

double bayes_log_loss(const Eigen::VectorXd& pi) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < pi.size(); ++i) s -= pi(i) * std::log(pi(i)) + (1 - pi(i)) * std::log(1 - pi(i));
  return s / static_cast<double>(pi.size());
}

}  // namespace

TEST_CASE("cross-fitted predictions ignore the targets of their own fold") {
  const SimDraw base = generate(DgpId::dgp1, 80, 2);
  FoldAssignment folds = assign_folds(80, 2, 3);
  const auto held = folds.test_rows(0);
  for (LearnerKind kind : {LearnerKind::post_lasso, LearnerKind::random_forest, LearnerKind::hist_gbm}) {
    CAPTURE(to_string(kind));
    const LearnerSpec spec = learner(kind, kind == LearnerKind::hist_gbm ? ParamMap{{"min_samples_leaf", 3}} : ParamMap{});
    const NuisanceFit a = crossfit_nuisances(base.data, folds, spec, spec, quiet());
    Dataset poisoned = base.data;
    for (int i : held) poisoned.y(i) = 1e6 * (i % 2 ? 1 : -1);
    const NuisanceFit b = crossfit_nuisances(poisoned, folds, spec, spec, quiet());
    for (int i : held) {
      CHECK(a.mu1(i) == b.mu1(i));
      CHECK(a.mu0(i) == b.mu0(i));
      CHECK(a.pi(i) == b.pi(i));
    }
    bool moved = false;
    for (int i : folds.test_rows(1)) moved = moved || a.mu1(i) != b.mu1(i) || a.mu0(i) != b.mu0(i);
    CHECK(moved);
  }
}

TEST_CASE("four-row probe with oracle learners") {
  const Eigen::VectorXd y = (Eigen::VectorXd(4) << 1, 2, 3, 4).finished();
  const Eigen::VectorXd d = (Eigen::VectorXd(4) << 1, 0, 1, 0).finished();
  const Eigen::VectorXd x = (Eigen::VectorXd(4) << 0, 1, 2, 3).finished();
  const Dataset ds = make_dataset(y, d, x, Eigen::MatrixXd(4, 0));
  FoldAssignment folds{2, {0, 0, 1, 1}, 0};
  CHECK(folds.train_rows(0) == std::vector<int>{2, 3});
  LearnerSpec spy = oracle_learner([](const Eigen::MatrixXd& V) { return V.col(0); });
  const NuisanceFit nf = crossfit_nuisances(ds, folds, spy, oracle_learner([](const Eigen::MatrixXd& V) {
                                              return Eigen::VectorXd::Constant(V.rows(), 0.5);
                                            }, Task::classification), quiet());
  CHECK(nf.mu1 == x);
  CHECK(nf.folds->k == 2);
}

TEST_CASE("oracle learners reproduce the smoothed true-nuisance signal") {
  const SimDraw s = generate(DgpId::dgp1, 3000, 8);
  const FoldAssignment folds = assign_folds(s.data, 5, 1);
  DmlOptions opt = quiet();
  opt.y0_spec = oracle_learner(s.oracle.mu0);
  const Eigen::VectorXd grid = support_grid(s.oracle);
  const DmlResult r = dml_binary_cme(s.data, folds, oracle_learner(s.oracle.mu1),
                                     oracle_learner(s.oracle.pi, Task::classification), grid, opt);
  NuisanceFit truth = s.truth;
  truth.pi = clip_propensity(truth.pi, opt.clip);
  const Projection direct = project_signal(aipw_signal(s.data, truth), s.data.x, grid, opt.smoother);
  CHECK((r.curve.theta - direct.theta).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((r.signal.lambda - aipw_signal(s.data, truth).lambda).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(r.curve.estimator_tag == "dml");
  CHECK(r.curve.has_flag("uniform_band_skipped"));
}

TEST_CASE("constant outcome gives constant arm means and a zero curve") {
  SimDraw s = generate(DgpId::dgp1, 400, 4);
  s.data.y.setConstant(2.5);
  const FoldAssignment folds = assign_folds(s.data, 5, 2);
  for (LearnerKind kind : {LearnerKind::post_lasso, LearnerKind::random_forest}) {
    const NuisanceFit nf = crossfit_nuisances(s.data, folds, learner(kind), learner(LearnerKind::post_lasso), quiet());
    CHECK((nf.mu1.array() - 2.5).abs().maxCoeff() < 1e-12);
    CHECK((nf.mu0.array() - 2.5).abs().maxCoeff() < 1e-12);
  }
  const DmlResult r = dml_binary_cme(s.data, folds, learner(LearnerKind::post_lasso), learner(LearnerKind::post_lasso),
                                     {}, quiet());
  CHECK(r.curve.theta.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.curve.size() == 50);
}

TEST_CASE("continuous engine: normal equations of the residual regression") {
  const SimDraw s = generate(DgpId::ch3_ex4cont, 1000, 5);
  const FoldAssignment folds = assign_folds(s.data, 5, 5);
  const DmlResult r = dml_continuous_cme(s.data, folds, learner(LearnerKind::hist_gbm),
                                         learner(LearnerKind::hist_gbm), {}, quiet());
  const ProjectorState& st = r.projection.state;
  REQUIRE(st.kind == ProjectorState::Kind::series);
  const Eigen::VectorXd y_tilde = s.data.y - r.nuisances.g_hat;
  const Eigen::VectorXd score = st.Q.transpose() * (y_tilde - st.Q * st.beta) / s.data.n();
  CHECK(score.cwiseAbs().maxCoeff() < 1e-8);
  CHECK((r.signal.d_tilde - (s.data.d - r.nuisances.m_hat)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::isfinite(r.curve.diagnostics.at("g_rmse")));
}

TEST_CASE("continuous engine with true nuisances recovers a constant effect") {
  const SimDraw s = generate(DgpId::plrm_constant, 5000, 12);
  const FoldAssignment folds = assign_folds(s.data, 5, 12);
  DmlOptions opt;
  opt.seed = 3;
  const DmlResult r = dml_continuous_cme(s.data, folds, oracle_learner(s.oracle.g), oracle_learner(s.oracle.m),
                                         Eigen::VectorXd::Zero(1), opt);
  CHECK(std::abs(r.curve.theta(0) - 2.0) < 3.0 * r.curve.se(0));
}

TEST_CASE("noiseless outcome with true nuisances: exact recovery of an in-span effect") {
  SimDraw s = generate(DgpId::ch3_ex4cont, 800, 21);
  const Eigen::MatrixXd V = covariates(s.data);
  const Eigen::VectorXd m = s.oracle.m(V), g = s.oracle.g(V);
  for (int i = 0; i < s.data.n(); ++i) s.data.y(i) = g(i) + s.oracle.theta(s.data.x(i)) * (s.data.d(i) - m(i));
  const Eigen::VectorXd grid = linspace(-1.9, 1.9, 25);
  const DmlResult r = dml_continuous_cme(s.data, assign_folds(s.data, 5, 1), oracle_learner(s.oracle.g),
                                         oracle_learner(s.oracle.m), grid, quiet());
  for (int j = 0; j < grid.size(); ++j) CHECK(r.curve.theta(j) == doctest::Approx(1 - grid(j) * grid(j)).epsilon(1e-6));
}

TEST_CASE("treatment without residual variation") {
  SimDraw s = generate(DgpId::plrm_constant, 300, 2);
  const Eigen::MatrixXd V = covariates(s.data);
  s.data.d = s.oracle.m(V);
  CHECK_ERROR_CODE(dml_continuous_cme(s.data, assign_folds(s.data, 5, 1), oracle_learner(s.oracle.g),
                                      oracle_learner(s.oracle.m), {}, quiet()),
                   DegenerateTreatmentResiduals);
  CHECK_ERROR_CODE(dml_binary_cme(s.data, assign_folds(s.data, 5, 1), learner(LearnerKind::post_lasso),
                                  learner(LearnerKind::post_lasso), {}, quiet()),
                   InvalidArgument);
}

TEST_CASE("partialling-out pipeline equals the engine on the full sample") {
  const SimDraw s = generate(DgpId::ch3_ex4cont, 600, 7);
  LassoCmeOptions lo;
  lo.n_boot = 0;
  lo.seed = 4;
  const DmlResult po = po_lasso_cme(s.data, {}, lo);
  DmlOptions opt = quiet();
  opt.seed = lo.seed;
  const DmlResult eng = dml_continuous_cme(s.data, full_sample_folds(s.data.n()), post_lasso_spec(lo, Task::regression),
                                           post_lasso_spec(lo, Task::regression), {}, opt);
  CHECK((po.curve.theta - eng.curve.theta).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((po.curve.se - eng.curve.se).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(po.curve.estimator_tag == "po_lasso");
}

TEST_CASE("training complement without a treatment arm") {
  SimDraw s = generate(DgpId::dgp1, 60, 3);
  FoldAssignment folds{2, std::vector<int>(60), 0};
  for (int i = 0; i < 60; ++i) folds.fold_of[i] = s.data.d(i) == 1.0 ? 0 : 1;
  CHECK_ERROR_CODE(crossfit_nuisances(s.data, folds, learner(LearnerKind::post_lasso),
                                      learner(LearnerKind::post_lasso), quiet()),
                   FoldMissingTreatmentArm);
}

TEST_CASE("binary outcome: arm means stay in the unit interval") {
  SimDraw s = generate(DgpId::dgp1, 800, 6);
  for (int i = 0; i < s.data.n(); ++i) s.data.y(i) = s.data.y(i) > 1.5 ? 1.0 : 0.0;
  s.data.outcome_type = OutcomeType::binary;
  const FoldAssignment folds = assign_folds(s.data, 5, 6);
  for (LearnerKind kind : {LearnerKind::hist_gbm, LearnerKind::post_lasso}) {
    const NuisanceFit nf = crossfit_nuisances(s.data, folds, learner(kind), learner(kind), quiet());
    CHECK(nf.mu1.minCoeff() >= 0.0);
    CHECK(nf.mu1.maxCoeff() <= 1.0);
    CHECK(nf.mu0.minCoeff() >= 0.0);
    CHECK(nf.mu0.maxCoeff() <= 1.0);
  }
}

TEST_CASE("tiny sample runs end to end") {
  const SimDraw s = generate(DgpId::ch3_ex1, 50, 13);
  LassoCmeOptions lo;
  lo.n_boot = 50;
  lo.seed = 1;
  const DmlResult r = aipw_lasso_cme(s.data, {}, lo);
  r.curve.validate();
  CHECK(r.curve.theta.allFinite());
  CHECK(((r.curve.uci_hi - r.curve.uci_lo).array() > 0.0).all());
}

TEST_CASE("propensity log-loss of boosted trees approaches the Bayes rate") {
  const SimDraw s = generate(DgpId::dgp1, 10000, 31);
  const NuisanceFit nf = crossfit_nuisances(s.data, assign_folds(s.data, 5, 31), learner(LearnerKind::hist_gbm),
                                            learner(LearnerKind::hist_gbm), quiet());
  CHECK(nf.loss.at("pi_logloss") < bayes_log_loss(s.truth.pi) + 0.03);
}

TEST_CASE("tuning modes") {
  const SimDraw s = generate(DgpId::dgp1, 600, 17);
  DmlOptions opt = quiet();
  opt.y_grid = {{"max_depth", {1, 3}}};
  opt.t_grid = {{"max_depth", {1, 2}}};
  const FoldAssignment folds = assign_folds(s.data, 5, 17);
  const DmlResult global = dml_binary_cme(s.data, folds, learner(LearnerKind::hist_gbm),
                                          learner(LearnerKind::hist_gbm), {}, opt);
  CHECK(global.y_spec.params.count("max_depth") == 1);
  opt.tuning = TuningMode::per_fold;
  const DmlResult per = dml_binary_cme(s.data, folds, learner(LearnerKind::hist_gbm), learner(LearnerKind::hist_gbm),
                                       {}, opt);
  CHECK(per.curve.theta.allFinite());
  CHECK(parse_tuning_mode("per_fold") == TuningMode::per_fold);
  CHECK_ERROR_CODE(parse_tuning_mode("sometimes"), InvalidArgument);
}

TEST_CASE("worked examples: curve error against the known effect") {
  SUBCASE("binary treatment, misspecified outcome surface, AIPW-Lasso") {
    const SimDraw s = generate(DgpId::ch3_ex1, 4000, 101);
    LassoCmeOptions lo;
    lo.n_boot = 0;
    const DmlResult r = aipw_lasso_cme(s.data, support_grid(s.oracle), lo);
    CHECK(weighted_rmse(r.curve, s.oracle) < 0.25);
  }
  SUBCASE("binary treatment, cross-fitted post-Lasso") {
    const SimDraw s = generate(DgpId::ch3_ex1, 4000, 102);
    const DmlResult r = dml_binary_cme(s.data, assign_folds(s.data, 5, 102), learner(LearnerKind::post_lasso),
                                       learner(LearnerKind::post_lasso), support_grid(s.oracle), quiet());
    CHECK(weighted_rmse(r.curve, s.oracle) < 0.25);
  }
  SUBCASE("redundant covariates, AIPW-Lasso") {
    const SimDraw s = generate(DgpId::ch3_ex3, 1000, 103);
    LassoCmeOptions lo;
    lo.n_boot = 0;
    const DmlResult r = aipw_lasso_cme(s.data, support_grid(s.oracle), lo);
    CHECK(weighted_rmse(r.curve, s.oracle) < 0.3);
  }
  SUBCASE("continuous treatment, cross-fitted post-Lasso with tuned spline size") {
    const SimDraw s = generate(DgpId::ch3_ex4cont, 1000, 104);
    DmlOptions opt = quiet();
    opt.y_grid = {{"spline_df", {4, 5, 6}}};
    opt.t_grid = opt.y_grid;
    const LearnerSpec spec = learner(LearnerKind::post_lasso, {{"interactions", 1}});
    const DmlResult r = dml_continuous_cme(s.data, assign_folds(s.data, 5, 104), spec, spec, support_grid(s.oracle), opt);
    CHECK(weighted_rmse(r.curve, s.oracle) < 0.3);
  }
}
