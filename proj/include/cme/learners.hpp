#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cme/dataset.hpp"
#include "cme/design.hpp"
#include "cme/lasso.hpp"

namespace cme {

//! oracle wraps a user-supplied function of the raw covariates; it exists
//! for tests that inject true nuisance functions.
enum class LearnerKind { post_lasso, random_forest, hist_gbm, oracle };
enum class Task { regression, classification };

const char* to_string(LearnerKind k);
const char* to_string(Task t);
//! Accepts lasso/post_lasso, rf/random_forest, hgb/hist_gbm.
LearnerKind parse_learner_kind(const std::string& s);

using ParamMap = std::map<std::string, double>;
using OracleFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd& V)>;

//! Recognised parameters (0 for max_depth means unlimited; flags are 0/1):
//!   post_lasso     expand, interactions, spline_df, cv_folds
//!   random_forest  n_estimators, max_depth, min_samples_split, min_samples_leaf, max_features, bootstrap
//!   hist_gbm       learning_rate, max_iter, max_leaf_nodes, min_samples_leaf, max_depth,
//!                  l2_regularization, max_bins
struct LearnerSpec {
  LearnerKind kind = LearnerKind::post_lasso;
  Task task = Task::regression;
  ParamMap params;
  std::uint64_t seed = 0;
  OracleFn oracle;
  double param(const std::string& key, double fallback) const;
  void validate() const;
};

const std::vector<std::string>& allowed_params(LearnerKind kind);

class Model {
 public:
  virtual ~Model() = default;
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& V) const = 0;
};

struct FittedLearner {
  LearnerSpec spec;
  std::shared_ptr<const Model> model;
  std::vector<int> train_rows;
  std::optional<double> oof_loss;
  //! Classification predictions are probabilities in [0, 1].
  Eigen::VectorXd predict(const Eigen::MatrixXd& V) const;
};

//! Fits on the raw covariate matrix V. Classification targets must be 0/1
//! and non-constant (DegenerateTarget otherwise).
FittedLearner fit_learner(const LearnerSpec& spec, const Eigen::MatrixXd& V, const Eigen::VectorXd& target,
                          std::vector<int> train_rows = {});

struct PostLassoOptions {
  bool expand = true;
  bool interactions = false;
  int spline_df = 6;
  int cv_folds = 10;
  std::uint64_t seed = 0;
};

//! Lasso with a cross-validated penalty on the basis expansion of V, then an
//! unpenalized refit on the selected columns.
struct PostLassoModel {
  DesignSpec design;
  Family family = Family::gaussian;
  Eigen::VectorXd coef;  // intercept first, over the design slopes
  std::vector<int> selected;
  Eigen::VectorXd path;  // lambda sequence ending at the chosen lambda
  double lambda = 0.0;
  bool constant = false;  // degenerate regression target: coef(0) is the prediction
  Eigen::VectorXd predict(const Eigen::MatrixXd& V) const;
};

PostLassoModel fit_post_lasso(const Eigen::MatrixXd& V, const Eigen::VectorXd& y, Family family,
                              const PostLassoOptions& opt = {});
//! Reruns selection on new data with the design (knots) and lambda frozen.
PostLassoModel refit_post_lasso(const PostLassoModel& frozen, const Eigen::MatrixXd& V, const Eigen::VectorXd& y);

double rmse(const Eigen::VectorXd& y, const Eigen::VectorXd& pred);
//! Mean negative Bernoulli log-likelihood, probabilities clipped to [1e-12, 1 - 1e-12].
double log_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& prob);
double oof_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& pred, Task task);

//! Out-of-fold predictions: each fold predicted by a learner trained on the others.
Eigen::VectorXd crossfit_predict(const LearnerSpec& spec, const Eigen::MatrixXd& V, const Eigen::VectorXd& y,
                                 const FoldAssignment& folds);

//! Ordered parameter grid; expansion varies the last dimension fastest.
using ParamGrid = std::vector<std::pair<std::string, std::vector<double>>>;
std::vector<ParamMap> expand_grid(const ParamGrid& grid);

struct GridSearchResult {
  LearnerSpec best;
  std::vector<ParamMap> cells;
  std::vector<double> losses;
};

//! k-fold out-of-fold loss for every cell; the first cell attaining the
//! minimum wins.
GridSearchResult grid_search_cv(const LearnerSpec& base, const ParamGrid& grid, const Eigen::MatrixXd& V,
                                const Eigen::VectorXd& y, int k = 5, std::uint64_t seed = 0);

}  // namespace cme
