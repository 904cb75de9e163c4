#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>

#include "cme/curve.hpp"
#include "cme/dataset.hpp"
#include "cme/inference.hpp"
#include "cme/learners.hpp"
#include "cme/signals.hpp"
#include "cme/smoothing.hpp"

namespace cme {

//! global: tune once on the full sample, then cross-fit the tuned spec.
//! per_fold: tune inside every training complement.
enum class TuningMode { global, per_fold };
const char* to_string(TuningMode m);
TuningMode parse_tuning_mode(const std::string& s);

struct DmlOptions {
  double clip = kDefaultClip;
  double level = 0.95;
  int n_multiplier = kDefaultMultiplierDraws;  // 0 skips the uniform band
  std::uint64_t seed = 0;                      // multiplier draws and tuning folds
  SmootherSpec smoother;
  ParamGrid y_grid, t_grid;  // empty: no tuning
  int tuning_folds = 5;
  TuningMode tuning = TuningMode::global;
  //! Control-arm outcome learner; y_spec is used for both arms when unset.
  std::optional<LearnerSpec> y0_spec;
};

struct DmlResult {
  CmeCurve curve;
  NuisanceFit nuisances;
  SignalVector signal;
  Projection projection;
  LearnerSpec y_spec, t_spec;  // after global tuning
};

//! Learners are trained on each fold's complement and predict its rows.
//! Binary treatment: per-arm outcome models and a clipped propensity.
//! Continuous treatment: E[Y|V] and E[D|V]. Binary outcomes use
//! classification outcome learners.
NuisanceFit crossfit_nuisances(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& y_spec,
                               const LearnerSpec& t_spec, const DmlOptions& opt = {});

//! Cross-fitted AIPW signal projected on x; sandwich pointwise band and
//! Gaussian multiplier uniform band.
DmlResult dml_binary_cme(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& y_spec,
                         const LearnerSpec& t_spec, const Eigen::VectorXd& grid, const DmlOptions& opt = {});

//! Cross-fitted partialling out: Y - g(V) regressed on (D - m(V)) p(X).
DmlResult dml_continuous_cme(const Dataset& ds, const FoldAssignment& folds, const LearnerSpec& y_spec,
                             const LearnerSpec& t_spec, const Eigen::VectorXd& grid, const DmlOptions& opt = {});

//! Full-sample post-Lasso pipelines with nonparametric bootstrap bands. The
//! bootstrap reruns selection with the penalty, basis knots and smoother
//! (knots or span) frozen at their full-sample values.
struct LassoCmeOptions {
  bool expand = true;
  bool interactions = true;
  int spline_df = 6;
  int cv_folds = 10;
  double clip = kDefaultClip;
  SignalKind signal = SignalKind::aipw;  // outcome, ipw or aipw (binary treatment)
  SmootherSpec smoother;
  double level = 0.95;
  int n_boot = kDefaultBootstraps;  // 0: sandwich pointwise band only
  std::uint64_t seed = 0;
};

//! Learner spec equivalent to the post-Lasso fits used by the Lasso pipelines.
LearnerSpec post_lasso_spec(const LassoCmeOptions& opt, Task task);

DmlResult aipw_lasso_cme(const Dataset& ds, const Eigen::VectorXd& grid, const LassoCmeOptions& opt = {});
DmlResult po_lasso_cme(const Dataset& ds, const Eigen::VectorXd& grid, const LassoCmeOptions& opt = {});

}  // namespace cme
