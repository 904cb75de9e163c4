#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cme/curve.hpp"
#include "cme/dataset.hpp"
#include "cme/learners.hpp"
#include "cme/signals.hpp"

namespace cme {

//! ch3_*: effect 1 - x^2 on Unif[-2, 2]. dgp1..dgp4: effect x^2 on
//! Unif(-sqrt 3, sqrt 3). zero_effect: dgp1 covariates and propensity with
//! no treatment effect. plrm_constant: continuous treatment, effect 2.
enum class DgpId { ch3_ex1, ch3_ex2, ch3_ex3, ch3_ex4cont, dgp1, dgp2, dgp3, dgp4, zero_effect, plrm_constant };
const char* to_string(DgpId id);
DgpId parse_dgp(const std::string& s);
std::vector<DgpId> all_dgps();

//! Closed-form pieces of a design. Functions of V take the n x (1 + p)
//! matrix [X, Z]. Binary designs set mu1, mu0, pi; continuous designs set
//! g (E[Y|V]) and m (E[D|V]).
struct DgpOracle {
  DgpId id = DgpId::dgp1;
  TreatmentType treatment = TreatmentType::binary;
  int p = 0;  // number of Z columns
  double x_lo = 0.0, x_hi = 0.0;
  std::function<double(double)> theta;
  std::function<double(double)> density;
  OracleFn mu1, mu0, pi;
  OracleFn g, m;
};
DgpOracle dgp_oracle(DgpId id);

struct SimDraw {
  Dataset data;
  DgpOracle oracle;
  NuisanceFit truth;  // oracle evaluated on the sample, pi unclipped
};

//! Pure function of (id, n, seed). Requires n >= 10.
SimDraw generate(DgpId id, int n, std::uint64_t seed);

//! Outcome draws for fixed V and D with fresh noise.
Eigen::VectorXd redraw_outcome(const DgpOracle& o, const Eigen::MatrixXd& V, const Eigen::VectorXd& d,
                               std::uint64_t seed);

//! Region label of each DGP4 row: 0 (Z1 < 1, Z2 < 0), 1 (Z1 < 1, Z2 >= 0), 2 (Z1 >= 1).
std::vector<int> dgp4_regions(const Eigen::MatrixXd& V);
//! Step-plus-slope baseline term of DGP4 with cutoffs -1, 0, 1.
double dgp4_step(double z);

//! Equally spaced points over the moderator support.
Eigen::VectorXd support_grid(const DgpOracle& o, int points = 50);

//! sqrt(sum f(x_j) (est_j - theta(x_j))^2 / sum f(x_j)) over the grid.
double weighted_rmse(const Eigen::VectorXd& grid, const Eigen::VectorXd& estimate,
                     const std::function<double(double)>& theta, const std::function<double(double)>& density);
double weighted_rmse(const CmeCurve& curve, const DgpOracle& o);

//! Learner spec that returns a closed-form function of V.
LearnerSpec oracle_learner(OracleFn fn, Task task = Task::regression);

//! Default perturbation direction for a nuisance: scale * tanh of the
//! moderator. The propensity direction is further multiplied by pi (1 - pi)
//! so that pi + t h stays inside (0, 1) for |t| <= 1 / scale.
Eigen::VectorXd gateaux_direction(const SimDraw& draw, NuisanceTarget target, double scale = 1.0);

//! Deviation table of the mean signal under perturbations of the true
//! nuisances of a binary design along the default directions.
std::vector<GateauxRow> gateaux_orthogonality_check(DgpId id, int n, std::uint64_t seed,
                                                    const std::vector<NuisanceTarget>& targets,
                                                    const std::vector<double>& t_grid,
                                                    SignalKind kind = SignalKind::aipw, double scale = 1.0);

struct BenchCell {
  DgpId dgp = DgpId::dgp1;
  std::string estimator;  // linear, kernel, aipw_lasso, po_lasso, dml
  std::optional<LearnerKind> learner;  // dml only
  int n = 0;
  int replicate = 0;
};

struct BenchRow {
  std::string dgp, estimator, learner;
  int n = 0;
  std::uint64_t seed = 0;
  double rmse_weighted = 0.0;
  double runtime_ms = 0.0;
  double mu1_loss = 0.0, mu0_loss = 0.0, pi_loss = 0.0;
  double g_loss = 0.0, m_loss = 0.0;
  bool ok = false;
  std::string failure;
};

struct BenchConfig {
  std::vector<DgpId> dgps{DgpId::dgp1};
  std::vector<std::string> estimators{"dml"};
  std::vector<LearnerKind> learners{LearnerKind::hist_gbm};
  std::vector<int> sizes{1000};
  int replicates = 1;
  std::uint64_t seed = 0;
  int folds = 5;
  int grid_points = 50;
  std::map<LearnerKind, ParamMap> learner_params;
  int threads = 1;              // cells run concurrently
  bool inner_parallel = false;  // let estimators use worker threads inside a cell
};

//! Cells in order dgp, estimator, learner, n, replicate. Learners only
//! multiply dml cells. Data seeds depend on (master, replicate) so every
//! estimator sees the same draws.
std::vector<BenchCell> bench_cells(const BenchConfig& cfg);
std::uint64_t bench_seed(const BenchConfig& cfg, const BenchCell& cell);
//! Errors are recorded in the row; runtime covers the estimator call only.
BenchRow run_cell(const BenchConfig& cfg, const BenchCell& cell);
std::vector<BenchRow> run_bench(const BenchConfig& cfg);
void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out);

}  // namespace cme
