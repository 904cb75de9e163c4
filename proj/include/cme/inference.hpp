#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cme/curve.hpp"
#include "cme/dataset.hpp"
#include "cme/smoothing.hpp"

namespace cme {

enum class VarType { sandwich, bootstrap };
const char* to_string(VarType v);
VarType parse_vartype(const std::string& s);

constexpr int kDefaultBootstraps = 2000;
constexpr int kDefaultMultiplierDraws = 1000;
constexpr int kZetaLattice = 200;
constexpr double kMaxBootstrapFailureShare = 0.05;

struct BandResult {
  double level = 0.95;
  Eigen::VectorXd se;
  Eigen::VectorXd lo, hi;    // pointwise
  Eigen::VectorXd ulo, uhi;  // uniform
  double critical_pointwise = 0.0;
  double critical_uniform = 0.0;  // c for the multiplier path, zeta* for the percentile path
  int n_boot = 0;
  std::uint64_t seed = 0;
  int failures = 0;
};

//! Pointwise normal band from the projection's influence representation:
//! se(x)^2 = sum_i L(x, i)^2 u_i^2, i.e. p(x)' J^-1 Omega J^-1 p(x) / N for
//! the spline projector. The uniform fields equal the pointwise ones.
BandResult sandwich_band(const ProjectorState& state, double level = 0.95);

//! Gaussian multiplier sup-t band. c is floored at the pointwise critical value.
BandResult multiplier_band(const ProjectorState& state, double level = 0.95,
                           int n_boot = kDefaultMultiplierDraws, std::uint64_t seed = 0);

//! Estimator refit on a resampled dataset; returns theta on the fixed grid.
using CurveFn = std::function<Eigen::VectorXd(const Dataset&)>;

struct BootstrapDraws {
  Eigen::MatrixXd curves;  // successful replicates x grid
  int failures = 0;
  int requested = 0;
};

//! Row resamples with replacement, replicate b seeded with derive_seed(seed, b).
//! Throws BootstrapDegenerate when more than 5% of the refits fail.
BootstrapDraws bootstrap_curves(const CurveFn& fn, const Dataset& ds, int n_boot, std::uint64_t seed);

//! Largest zeta on the lattice over [alpha / (2k), alpha / 2] whose
//! per-point [Q_zeta, Q_(1-zeta)] rectangle contains at least 1 - alpha of
//! the bootstrap curves at every grid point simultaneously.
double zeta_star(const Eigen::MatrixXd& curves, double level = 0.95, int lattice = kZetaLattice);

//! Percentile pointwise band (zeta = alpha / 2) and zeta* uniform band.
BandResult percentile_band(const Eigen::VectorXd& theta, const BootstrapDraws& draws, double level = 0.95);

BandResult nonparam_bootstrap_band(const CurveFn& fn, const Dataset& ds, const Eigen::VectorXd& theta,
                                   double level = 0.95, int n_boot = kDefaultBootstraps,
                                   std::uint64_t seed = 0);

//! Copies se and bands into the curve. When keep_pointwise is set the
//! curve's existing pointwise band is kept and the uniform band is widened
//! to contain it.
void apply_band(CmeCurve& curve, const BandResult& band, bool keep_pointwise = false);

struct HypothesisReport {
  Eigen::VectorXd z;
  Eigen::VectorXd p_two_sided;
  Eigen::VectorXd p_upper;  // one-sided, H1: theta > 0
  std::optional<double> beta3_z, beta3_p;
  bool uniform_rejects = false;
  std::vector<int> uniform_region;  // grid indices where 0 lies outside the uniform band
};

//! Per-point z tests, optional slope test from (beta3, se), and rejection
//! of theta = 0 everywhere when 0 leaves the uniform band.
HypothesisReport hypothesis_tests(const CmeCurve& curve,
                                  const std::optional<std::pair<double, double>>& beta3 = std::nullopt);

}  // namespace cme
