#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "cme/curve.hpp"
#include "cme/dataset.hpp"
#include "cme/inference.hpp"
#include "cme/linear.hpp"

namespace cme {

//! Band settings shared by the linear, binning and kernel estimators.
//! sandwich: analytic pointwise band, bootstrap zeta* uniform band when
//! n_boot > 0. bootstrap: both bands from the percentile bootstrap.
struct ClassicInference {
  VarType vartype = VarType::sandwich;
  int n_boot = kDefaultBootstraps;
  double level = 0.95;
  std::uint64_t seed = 0;
};

//! OLS of Y on (1, D, X, D X, Z) with HC1 covariance.
struct LinearInteractionFit {
  LinearFit fit;
  double beta1 = 0.0, beta3 = 0.0;
  double var1 = 0.0, var3 = 0.0, cov13 = 0.0;
  double x_min = 0.0, x_max = 0.0;
  double theta(double x) const { return beta1 + beta3 * x; }
  double se(double x) const;
};

LinearInteractionFit fit_linear_interaction(const Dataset& ds);
CmeCurve linear_cme(const Dataset& ds, const Eigen::VectorXd& grid, const ClassicInference& inf = {});

struct EffectDifference {
  double estimate = 0.0;
  double se = 0.0;
};
//! theta(x1) - theta(x2) = beta3 (x1 - x2).
EffectDifference effect_modification(const LinearInteractionFit& fit, double x1, double x2);

enum class BinEval { median, midpoint };

//! Piecewise-linear interaction fit. For a continuous treatment, n_treated
//! and n_control count rows above and at-or-below the bin's mean dose, so a
//! bin is identified exactly when the dose varies inside it.
struct BinningResult {
  std::vector<double> cutoffs;
  Eigen::VectorXd eval_points;
  Eigen::VectorXd alpha, se;  // NaN / inf for non-identified bins
  std::vector<int> n_rows, n_treated, n_control;
  std::vector<bool> identified;
  int nbins() const { return static_cast<int>(cutoffs.size()) + 1; }
};

//! Cutoffs at the j / nbins quantiles of x, j = 1..nbins-1.
std::vector<double> equal_frequency_cutoffs(const Eigen::VectorXd& x, int nbins);
//! Bin j holds cutoffs[j-1] < x <= cutoffs[j].
std::vector<int> assign_bins(const Eigen::VectorXd& x, const std::vector<double>& cutoffs);
//! Per-bin counts and identification flags; throws EmptyBin.
BinningResult bin_summary(const Dataset& ds, const std::vector<double>& cutoffs);

BinningResult binning_cme(const Dataset& ds, const std::vector<double>& cutoffs, BinEval rule = BinEval::median);
//! Explicit evaluation points, one per bin. An empty cutoff list gives one global bin.
BinningResult binning_cme(const Dataset& ds, const std::vector<double>& cutoffs,
                          const std::vector<double>& eval_points);
//! Curve over the evaluation points with normal pointwise bands.
CmeCurve binning_curve(const BinningResult& r, double level = 0.95);

struct KernelOptions {
  std::optional<double> h0;  // chosen by cross-validation when empty
  bool fully_moderated = true;
  int cv_folds = 10;
  int n_h = 20;
  int cv_anchors = 50;
  std::uint64_t seed = 0;
};

struct KernelFit {
  Eigen::VectorXd grid, theta, se, bandwidth;
  std::vector<bool> ok;
  double h0 = 0.0;
  Eigen::VectorXd cv_h, cv_error;  // empty when h0 was supplied
};

double geometric_mean(const Eigen::VectorXd& positive);
//! h(x) = h0 sqrt(gm / density(x)).
Eigen::VectorXd adaptive_bandwidths(double h0, const Eigen::VectorXd& density, double density_gm);
//! Bandwidth candidates: n_h log-spaced values over [0.05, 2] * range(x).
Eigen::VectorXd kernel_h_grid(const Eigen::VectorXd& x, int n_h = 20);
//! Least-squares cross-validation of h0. Local coefficients are computed at
//! cv_anchors equally spaced points of the training range and linearly
//! interpolated to the held-out moderator values.
KernelFit kernel_cross_validate(const Dataset& ds, const KernelOptions& opt);
KernelFit kernel_fit(const Dataset& ds, const Eigen::VectorXd& grid, const KernelOptions& opt = {});
CmeCurve kernel_cme(const Dataset& ds, const Eigen::VectorXd& grid, const KernelOptions& opt = {},
                    const ClassicInference& inf = {});

}  // namespace cme
