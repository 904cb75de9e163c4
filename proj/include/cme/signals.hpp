#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cme/dataset.hpp"

namespace cme {

constexpr double kDefaultClip = 0.01;

//! Nuisance predictions. Binary treatment fills mu1, mu0, pi; continuous
//! treatment fills g_hat (E[Y|V]) and m_hat (E[D|V]). folds is set when the
//! predictions are cross-fitted.
struct NuisanceFit {
  Eigen::VectorXd mu1, mu0, pi;
  Eigen::VectorXd g_hat, m_hat;
  std::optional<FoldAssignment> folds;
  std::map<std::string, double> loss;
};

enum class SignalKind { outcome, ipw, aipw, cmet_outcome, cmet_ipw, cmet_aipw, plrm_residuals };
const char* to_string(SignalKind k);

struct SignalVector {
  SignalKind kind = SignalKind::aipw;
  Eigen::VectorXd lambda;   // empty for plrm_residuals
  Eigen::VectorXd y_tilde;  // plrm_residuals only
  Eigen::VectorXd d_tilde;
  void validate() const;
};

//! min(max(pi, alpha), 1 - alpha).
Eigen::VectorXd clip_propensity(const Eigen::VectorXd& pi, double alpha = kDefaultClip);

SignalVector outcome_signal(const Dataset& ds, const NuisanceFit& nf);
SignalVector ipw_signal(const Dataset& ds, const NuisanceFit& nf);
SignalVector aipw_signal(const Dataset& ds, const NuisanceFit& nf);
//! Signals for the effect on the treated; p_x is P(D = 1 | X).
SignalVector cmet_signal(const Dataset& ds, const NuisanceFit& nf, const Eigen::VectorXd& p_x, SignalKind kind);
//! Y - g_hat and D - m_hat.
SignalVector plrm_residual_signal(const Dataset& ds, const NuisanceFit& nf);

//! P(D = 1 | X) from a logit on the B-spline basis of X, then clipped.
Eigen::VectorXd marginal_propensity(const Eigen::VectorXd& x, const Eigen::VectorXd& d,
                                    double alpha = kDefaultClip, int basis_df = 6);

//! Within-cell difference in means averaged over the cells of each X value.
//! Every covariate pattern (X, Z) must contain treated and control rows.
std::map<double, double> sdim_oracle(const Dataset& ds);

//! Cell frequencies P(D = 1 | X, Z) and within-cell arm means as nuisances.
NuisanceFit frequency_nuisances(const Dataset& ds);

//! Mean of a signal among rows with X equal to each distinct value.
std::map<double, double> conditional_means(const Eigen::VectorXd& values, const Eigen::VectorXd& x);

//! Finite population with both potential outcomes known.
struct PotentialOutcomeTable {
  std::vector<double> x, z, y0, y1, d, weight;
  int size() const { return static_cast<int>(x.size()); }
};
//! The eight-unit example population with survey weights.
PotentialOutcomeTable toy_population();
//! Weighted mean of Y(1) - Y(0) among units with X = x.
double brute_force_cme(const PotentialOutcomeTable& t, double x);
//! Weighted mean of Y(1) - Y(0) among treated units with X = x.
double brute_force_cmet(const PotentialOutcomeTable& t, double x);
//! Observed-data view of the table (Y = Y(D)).
Dataset observed_dataset(const PotentialOutcomeTable& t);

enum class NuisanceTarget { none, mu1, mu0, pi };

struct Perturbation {
  NuisanceTarget target = NuisanceTarget::none;
  Eigen::VectorXd h;  // direction, one entry per row
};

struct GateauxRow {
  double t = 0.0;
  double deviation = 0.0;
};

//! |E_n s(eta + t h) - E_n s(eta)| for each t, where s is the AIPW or IPW
//! signal and eta the supplied (true) nuisances. Several perturbations are
//! applied jointly. Perturbed propensities must stay inside (0, 1).
std::vector<GateauxRow> gateaux_deviations(const Dataset& ds, const NuisanceFit& truth,
                                           const std::vector<Perturbation>& directions,
                                           const std::vector<double>& t_grid, SignalKind kind = SignalKind::aipw);

}  // namespace cme
