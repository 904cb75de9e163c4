#include "cme/simlab.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "cme/classic.hpp"
#include "cme/dml.hpp"
#include "cme/errors.hpp"
#include "cme/parallel.hpp"
#include "cme/rng.hpp"
#include "cme/stats.hpp"

namespace cme {

namespace {

const double kRoot3 = std::sqrt(3.0);

using RowFn = std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)>;

OracleFn rowwise(RowFn f) {
  return [f](const Eigen::MatrixXd& V) {
    Eigen::VectorXd out(V.rows());
    for (Eigen::Index i = 0; i < V.rows(); ++i) out(i) = f(V.row(i));
    return out;
  };
}

double sq(double v) { return v * v; }

// Binary design from a control mean, an effect and a propensity index.
void set_binary(DgpOracle& o, RowFn mu0, RowFn pi) {
  auto theta = o.theta;
  o.mu0 = rowwise(mu0);
  o.mu1 = rowwise([mu0, theta](const auto& v) { return mu0(v) + theta(v(0)); });
  o.pi = rowwise(pi);
}

// Continuous design Y = theta(X) D + g0(V), D = m(V) + noise.
void set_continuous(DgpOracle& o, RowFn g0, RowFn m) {
  auto theta = o.theta;
  o.treatment = TreatmentType::continuous;
  o.m = rowwise(m);
  o.g = rowwise([g0, m, theta](const auto& v) { return theta(v(0)) * m(v) + g0(v); });
}

double ch3_ex2_base(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  return 1.0 + v(0) + sq(v(1)) + std::sin(v(2)) + 0.5 * v(1) * std::exp(v(3));
}

double ch3_ex2_pi(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  return logistic(-1.0 + 0.5 * v(1) + std::abs(v(0)) - v(0) * v(2) + sq(v(3)));
}

double sinc_term(double z) { return z == 0.0 ? 1.0 : std::sin(z) / z; }

double dgp4_g(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double x = v(0), z1 = v(1), z2 = v(2);
  if (z1 < 1.0 && z2 < 0.0) return sq(x) + z1 * z2 + std::sin(x + z1) + dgp4_step(z1);
  if (z1 < 1.0) return std::abs(x * z1) + z2 * z2 * z2 + dgp4_step(z1);
  return 1.0 + x + dgp4_step(z1);
}

double dgp4_pi(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  const double x = v(0), z1 = v(1), z2 = v(2);
  double index = x - sq(x) + x * z1 - 2.0 * std::sin(x + z1);
  if (z1 < 0.0) index += std::cos(2.0 * x);
  if (z2 >= 0.0) index += x * z1 * z2;
  return logistic(index);
}

enum class Law { unif_pm2, unif_01, unif_root3, normal };

double draw(Law law, Rng& rng) {
  switch (law) {
    case Law::unif_pm2: return rng.uniform(-2.0, 2.0);
    case Law::unif_01: return rng.uniform();
    case Law::unif_root3: return rng.uniform(-kRoot3, kRoot3);
    case Law::normal: return rng.normal();
  }
  return 0.0;
}

struct Laws {
  Law x;
  std::vector<Law> z;
};

Laws laws_of(DgpId id) {
  switch (id) {
    case DgpId::ch3_ex1: return {Law::unif_pm2, std::vector<Law>(2, Law::unif_01)};
    case DgpId::ch3_ex2: return {Law::unif_pm2, std::vector<Law>(3, Law::unif_01)};
    case DgpId::ch3_ex3: return {Law::unif_pm2, std::vector<Law>(8, Law::unif_01)};
    case DgpId::ch3_ex4cont: return {Law::unif_pm2, std::vector<Law>(4, Law::normal)};
    case DgpId::dgp1:
    case DgpId::dgp2:
    case DgpId::zero_effect:
    case DgpId::plrm_constant: return {Law::unif_root3, {Law::unif_root3}};
    case DgpId::dgp3:
    case DgpId::dgp4: return {Law::unif_root3, std::vector<Law>(4, Law::unif_root3)};
  }
  return {Law::unif_root3, {}};
}

}  // namespace

const char* to_string(DgpId id) {
  switch (id) {
    case DgpId::ch3_ex1: return "ch3_ex1";
    case DgpId::ch3_ex2: return "ch3_ex2";
    case DgpId::ch3_ex3: return "ch3_ex3";
    case DgpId::ch3_ex4cont: return "ch3_ex4cont";
    case DgpId::dgp1: return "dgp1";
    case DgpId::dgp2: return "dgp2";
    case DgpId::dgp3: return "dgp3";
    case DgpId::dgp4: return "dgp4";
    case DgpId::zero_effect: return "zero_effect";
    case DgpId::plrm_constant: return "plrm_constant";
  }
  return "?";
}

std::vector<DgpId> all_dgps() {
  return {DgpId::ch3_ex1, DgpId::ch3_ex2, DgpId::ch3_ex3, DgpId::ch3_ex4cont, DgpId::dgp1,
          DgpId::dgp2,    DgpId::dgp3,    DgpId::dgp4,    DgpId::zero_effect, DgpId::plrm_constant};
}

DgpId parse_dgp(const std::string& s) {
  for (DgpId id : all_dgps())
    if (s == to_string(id)) return id;
  fail(ErrorCode::InvalidArgument, "unknown dgp '" + s + "'");
}

double dgp4_step(double z) {
  return z + (z >= -1.0 ? 1.0 : 0.0) - (z >= 0.0 ? 2.0 : 0.0) + (z >= 1.0 ? 2.0 : 0.0);
}

std::vector<int> dgp4_regions(const Eigen::MatrixXd& V) {
  std::vector<int> r(V.rows());
  for (Eigen::Index i = 0; i < V.rows(); ++i) r[i] = V(i, 1) >= 1.0 ? 2 : (V(i, 2) < 0.0 ? 0 : 1);
  return r;
}

DgpOracle dgp_oracle(DgpId id) {
  DgpOracle o;
  o.id = id;
  o.p = static_cast<int>(laws_of(id).z.size());
  const bool ch3 = id == DgpId::ch3_ex1 || id == DgpId::ch3_ex2 || id == DgpId::ch3_ex3 || id == DgpId::ch3_ex4cont;
  o.x_lo = ch3 ? -2.0 : -kRoot3;
  o.x_hi = -o.x_lo;
  const double f = 1.0 / (o.x_hi - o.x_lo);
  o.density = [f](double) { return f; };
  if (ch3)
    o.theta = [](double x) { return 1.0 - x * x; };
  else if (id == DgpId::zero_effect)
    o.theta = [](double) { return 0.0; };
  else if (id == DgpId::plrm_constant)
    o.theta = [](double) { return 2.0; };
  else
    o.theta = [](double x) { return x * x; };

  const RowFn half_logit = [](const auto& v) { return logistic(0.5 * v(0) + 0.5 * v(1)); };
  switch (id) {
    case DgpId::ch3_ex1:
      set_binary(o, [](const auto& v) { return 1.0 + v(0) + v(1); }, half_logit);
      break;
    case DgpId::ch3_ex2:
    case DgpId::ch3_ex3:
      set_binary(o, ch3_ex2_base, ch3_ex2_pi);
      break;
    case DgpId::ch3_ex4cont:
      set_continuous(
          o,
          [](const auto& v) {
            return 1.0 + 1.5 * v(0) + 2.0 * v(0) * std::exp(1.0 + v(1)) + (v(2) > 0.0 ? 2.0 * v(2) : 0.0);
          },
          [](const auto& v) { return 0.5 * v(1) + v(0) * v(0); });
      break;
    case DgpId::dgp1:
    case DgpId::zero_effect:
      set_binary(o, [](const auto& v) { return 1.0 + v(0) + 0.5 * v(1); }, half_logit);
      break;
    case DgpId::dgp2:
      set_binary(o, [](const auto& v) { return 1.0 + v(0) + std::exp(2.0 * v(1) + 2.0); }, half_logit);
      break;
    case DgpId::dgp3:
      set_binary(
          o,
          [](const auto& v) {
            const double x = v(0), z1 = v(1), z2 = v(2), z3 = v(3), z4 = v(4);
            return 1.0 + x + std::exp(2.0 * x + 2.0) + 3.0 * std::sin(x + z1) + 2.0 * x * z2 +
                   (z3 > 0.0 ? z3 : 0.0) - 4.0 * sinc_term(z4) + 2.0 * z3 * z3 * z4;
          },
          [](const auto& v) {
            const double x = v(0), z1 = v(1), z2 = v(2), z3 = v(3), z4 = v(4);
            return logistic(0.25 + x - x * x - z1 * z1 + 2.0 * x * z1 * z2 - logistic(z1 + z3) +
                            2.0 * z2 * z2 * std::cos(z4));
          });
      break;
    case DgpId::dgp4:
      set_binary(o, dgp4_g, dgp4_pi);
      break;
    case DgpId::plrm_constant:
      set_continuous(
          o, [](const auto& v) { return 1.0 + v(0) + v(1) * v(1); },
          [](const auto& v) { return 0.5 * v(0) + 0.5 * v(1) * v(1); });
      break;
  }
  return o;
}

SimDraw generate(DgpId id, int n, std::uint64_t seed) {
  require(n >= 10, "simulated samples need n >= 10");
  SimDraw s;
  s.oracle = dgp_oracle(id);
  const Laws laws = laws_of(id);
  Rng rng(seed);
  const int p = s.oracle.p;
  Eigen::MatrixXd V(n, 1 + p);
  for (int i = 0; i < n; ++i) V(i, 0) = draw(laws.x, rng);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < n; ++i) V(i, 1 + j) = draw(laws.z[j], rng);
  Eigen::VectorXd d(n);
  if (s.oracle.treatment == TreatmentType::binary) {
    s.truth.pi = s.oracle.pi(V);
    for (int i = 0; i < n; ++i) d(i) = rng.bernoulli(s.truth.pi(i)) ? 1.0 : 0.0;
    s.truth.mu1 = s.oracle.mu1(V);
    s.truth.mu0 = s.oracle.mu0(V);
  } else {
    s.truth.m_hat = s.oracle.m(V);
    s.truth.g_hat = s.oracle.g(V);
    for (int i = 0; i < n; ++i) d(i) = s.truth.m_hat(i) + rng.normal();
  }
  Eigen::VectorXd y = redraw_outcome(s.oracle, V, d, derive_seed(seed, 1));
  Eigen::MatrixXd z = V.rightCols(p);
  Eigen::VectorXd x = V.col(0);
  s.data = make_dataset(std::move(y), std::move(d), std::move(x), std::move(z), s.oracle.treatment);
  for (int j = 0; j < p; ++j) s.data.z_names[j] = "Z" + std::to_string(j + 1);
  return s;
}

Eigen::VectorXd redraw_outcome(const DgpOracle& o, const Eigen::MatrixXd& V, const Eigen::VectorXd& d,
                               std::uint64_t seed) {
  require(V.rows() == d.size(), "treatment length does not match V");
  const Eigen::Index n = V.rows();
  Eigen::VectorXd mean(n);
  if (o.treatment == TreatmentType::binary) {
    const Eigen::VectorXd mu1 = o.mu1(V), mu0 = o.mu0(V);
    mean = (d.array() * mu1.array() + (1.0 - d.array()) * mu0.array()).matrix();
  } else {
    const Eigen::VectorXd g = o.g(V), m = o.m(V);
    for (Eigen::Index i = 0; i < n; ++i) mean(i) = g(i) + o.theta(V(i, 0)) * (d(i) - m(i));
  }
  Rng rng(seed);
  for (Eigen::Index i = 0; i < n; ++i) mean(i) += rng.normal();
  return mean;
}

Eigen::VectorXd support_grid(const DgpOracle& o, int points) { return linspace(o.x_lo, o.x_hi, points); }

double weighted_rmse(const Eigen::VectorXd& grid, const Eigen::VectorXd& estimate,
                     const std::function<double(double)>& theta, const std::function<double(double)>& density) {
  require(grid.size() == estimate.size() && grid.size() > 0, "grid and estimate must have the same positive length");
  double num = 0.0, den = 0.0;
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    const double w = density(grid(j));
    require(w >= 0.0, "density must be nonnegative");
    num += w * sq(estimate(j) - theta(grid(j)));
    den += w;
  }
  require(den > 0.0, "density vanishes on the grid");
  return std::sqrt(num / den);
}

double weighted_rmse(const CmeCurve& curve, const DgpOracle& o) {
  return weighted_rmse(curve.grid, curve.theta, o.theta, o.density);
}

LearnerSpec oracle_learner(OracleFn fn, Task task) {
  LearnerSpec s;
  s.kind = LearnerKind::oracle;
  s.task = task;
  s.oracle = std::move(fn);
  return s;
}

Eigen::VectorXd gateaux_direction(const SimDraw& draw, NuisanceTarget target, double scale) {
  const int n = draw.data.n();
  if (target == NuisanceTarget::none) return Eigen::VectorXd::Zero(n);
  Eigen::VectorXd h = draw.data.x.unaryExpr([scale](double x) { return scale * std::tanh(x); });
  if (target == NuisanceTarget::pi) h = (h.array() * draw.truth.pi.array() * (1.0 - draw.truth.pi.array())).matrix();
  return h;
}

std::vector<GateauxRow> gateaux_orthogonality_check(DgpId id, int n, std::uint64_t seed,
                                                    const std::vector<NuisanceTarget>& targets,
                                                    const std::vector<double>& t_grid, SignalKind kind,
                                                    double scale) {
  const SimDraw s = generate(id, n, seed);
  require(s.oracle.treatment == TreatmentType::binary, "orthogonality check needs a binary design");
  std::vector<Perturbation> dirs;
  for (NuisanceTarget t : targets) dirs.push_back({t, gateaux_direction(s, t, scale)});
  return gateaux_deviations(s.data, s.truth, dirs, t_grid, kind);
}

std::vector<BenchCell> bench_cells(const BenchConfig& cfg) {
  std::vector<BenchCell> cells;
  for (DgpId dgp : cfg.dgps)
    for (const auto& est : cfg.estimators) {
      std::vector<std::optional<LearnerKind>> learners{std::nullopt};
      if (est == "dml") learners.assign(cfg.learners.begin(), cfg.learners.end());
      for (const auto& l : learners)
        for (int n : cfg.sizes)
          for (int r = 0; r < cfg.replicates; ++r) cells.push_back({dgp, est, l, n, r});
    }
  return cells;
}

std::uint64_t bench_seed(const BenchConfig& cfg, const BenchCell& cell) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(cell.replicate));
}

namespace {

double loss_or_nan(const std::map<std::string, double>& m, const char* key) {
  const auto it = m.find(key);
  return it == m.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
}

}  // namespace

BenchRow run_cell(const BenchConfig& cfg, const BenchCell& cell) {
  BenchRow row;
  row.dgp = to_string(cell.dgp);
  row.estimator = cell.estimator;
  row.learner = cell.learner ? to_string(*cell.learner) : "";
  row.n = cell.n;
  row.seed = bench_seed(cfg, cell);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.rmse_weighted = row.runtime_ms = nan;
  row.mu1_loss = row.mu0_loss = row.pi_loss = row.g_loss = row.m_loss = nan;
  try {
    const SimDraw s = generate(cell.dgp, cell.n, row.seed);
    const Eigen::VectorXd grid = support_grid(s.oracle, cfg.grid_points);
    const bool binary = s.oracle.treatment == TreatmentType::binary;
    std::optional<SerialScope> serial;
    if (!cfg.inner_parallel) serial.emplace();
    const auto start = std::chrono::steady_clock::now();
    CmeCurve curve;
    std::map<std::string, double> loss;
    if (cell.estimator == "linear") {
      ClassicInference inf;
      inf.n_boot = 0;
      curve = linear_cme(s.data, grid, inf);
    } else if (cell.estimator == "kernel") {
      KernelOptions ko;
      ko.seed = row.seed;
      ClassicInference inf;
      inf.n_boot = 0;
      curve = kernel_cme(s.data, grid, ko, inf);
    } else if (cell.estimator == "aipw_lasso" || cell.estimator == "po_lasso") {
      LassoCmeOptions lo;
      lo.n_boot = 0;
      lo.seed = row.seed;
      const bool aipw = cell.estimator == "aipw_lasso";
      if (aipw != binary)
        fail(ErrorCode::InvalidArgument, cell.estimator + " does not apply to the " +
                                             std::string(to_string(s.oracle.treatment)) + " treatment of " + row.dgp);
      DmlResult r = aipw ? aipw_lasso_cme(s.data, grid, lo) : po_lasso_cme(s.data, grid, lo);
      curve = std::move(r.curve);
      loss = r.nuisances.loss;
    } else if (cell.estimator == "dml") {
      require(cell.learner.has_value(), "dml cells need a learner");
      LearnerSpec spec;
      spec.kind = *cell.learner;
      spec.seed = row.seed;
      const auto it = cfg.learner_params.find(spec.kind);
      if (it != cfg.learner_params.end()) spec.params = it->second;
      const FoldAssignment folds = assign_folds(s.data.n(), cfg.folds, row.seed);
      DmlOptions opt;
      opt.n_multiplier = 0;
      opt.seed = row.seed;
      DmlResult r = binary ? dml_binary_cme(s.data, folds, spec, spec, grid, opt)
                           : dml_continuous_cme(s.data, folds, spec, spec, grid, opt);
      curve = std::move(r.curve);
      loss = r.nuisances.loss;
    } else {
      fail(ErrorCode::InvalidArgument, "unknown estimator '" + cell.estimator + "'");
    }
    row.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    row.rmse_weighted = weighted_rmse(curve, s.oracle);
    if (!std::isfinite(row.rmse_weighted)) fail(ErrorCode::NonConvergence, "non-finite curve estimate");
    auto pick = [&](const char* a, const char* b) {
      const double v = loss_or_nan(loss, a);
      return std::isnan(v) ? loss_or_nan(loss, b) : v;
    };
    row.mu1_loss = pick("mu1_rmse", "insample_mu1_rmse");
    row.mu0_loss = pick("mu0_rmse", "insample_mu0_rmse");
    row.pi_loss = pick("pi_logloss", "insample_pi_logloss");
    row.g_loss = pick("g_rmse", "insample_g_rmse");
    row.m_loss = pick("m_rmse", "insample_m_rmse");
    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.failure = e.what();
  }
  return row;
}

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  const auto cells = bench_cells(cfg);
  std::vector<BenchRow> rows(cells.size());
  parallel_for(
      static_cast<int>(cells.size()), [&](int i) { rows[i] = run_cell(cfg, cells[i]); }, cfg.threads);
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << "dgp,estimator,learner,n,seed,rmse_weighted,runtime_ms,mu1_loss,mu0_loss,pi_loss,g_loss,m_loss,status,"
         "failure\n";
  for (const auto& r : rows) {
    out << r.dgp << ',' << r.estimator << ',' << r.learner << ',' << r.n << ',' << r.seed << ','
        << num(r.rmse_weighted) << ',' << num(r.runtime_ms) << ',' << num(r.mu1_loss) << ',' << num(r.mu0_loss)
        << ',' << num(r.pi_loss) << ',' << num(r.g_loss) << ',' << num(r.m_loss) << ','
        << (r.ok ? "ok" : "failed") << ',' << csv_field(r.failure) << '\n';
  }
}

}  // namespace cme
