#include "cme/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cme/errors.hpp"
#include "cme/parallel.hpp"
#include "cme/rng.hpp"
#include "cme/stats.hpp"

namespace cme {

const char* to_string(VarType v) { return v == VarType::sandwich ? "sandwich" : "bootstrap"; }

VarType parse_vartype(const std::string& s) {
  if (s == "sandwich") return VarType::sandwich;
  if (s == "bootstrap") return VarType::bootstrap;
  fail(ErrorCode::InvalidArgument, "unknown vartype '" + s + "'");
}

namespace {

void check_level(double level) { require(level > 0.0 && level < 1.0, "confidence level must lie in (0, 1)"); }

Eigen::VectorXd influence_se(const ProjectorState& st) {
  require(st.L.cols() == st.u.size(), "projector state is inconsistent");
  return (st.L.array().square().matrix() * st.u.array().square().matrix()).cwiseSqrt();
}

}  // namespace

BandResult sandwich_band(const ProjectorState& state, double level) {
  check_level(level);
  BandResult b;
  b.level = level;
  b.se = influence_se(state);
  b.critical_pointwise = normal_quantile(1.0 - (1.0 - level) / 2.0);
  b.critical_uniform = b.critical_pointwise;
  b.lo = state.theta - b.critical_pointwise * b.se;
  b.hi = state.theta + b.critical_pointwise * b.se;
  b.ulo = b.lo;
  b.uhi = b.hi;
  return b;
}

BandResult multiplier_band(const ProjectorState& state, double level, int n_boot, std::uint64_t seed) {
  require(n_boot >= 1, "multiplier draws must be positive");
  BandResult b = sandwich_band(state, level);
  b.n_boot = n_boot;
  b.seed = seed;
  const int n = state.n();
  const int k = static_cast<int>(state.theta.size());
  Eigen::MatrixXd A = state.L * state.u.asDiagonal();
  for (int j = 0; j < k; ++j) A.row(j) *= b.se(j) > 0 ? 1.0 / b.se(j) : 0.0;
  std::vector<double> sup(n_boot, 0.0);
  constexpr int kBatch = 64;
  const int batches = (n_boot + kBatch - 1) / kBatch;
  parallel_for(batches, [&](int bi) {
    const int first = bi * kBatch;
    const int cols = std::min(kBatch, n_boot - first);
    Eigen::MatrixXd xi(n, cols);
    for (int c = 0; c < cols; ++c) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(first + c)));
      for (int i = 0; i < n; ++i) xi(i, c) = rng.normal();
    }
    const Eigen::MatrixXd t = A * xi;
    for (int c = 0; c < cols; ++c) sup[first + c] = t.col(c).cwiseAbs().maxCoeff();
  });
  const double c = quantile(sup, level);
  b.critical_uniform = std::max(c, b.critical_pointwise);
  b.ulo = state.theta - b.critical_uniform * b.se;
  b.uhi = state.theta + b.critical_uniform * b.se;
  return b;
}

BootstrapDraws bootstrap_curves(const CurveFn& fn, const Dataset& ds, int n_boot, std::uint64_t seed) {
  require(n_boot >= 1, "bootstrap replicates must be positive");
  const int n = ds.n();
  std::vector<Eigen::VectorXd> out(n_boot);
  std::vector<char> ok(n_boot, 0);
  std::vector<std::string> reasons(n_boot);
  parallel_for(n_boot, [&](int b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::vector<int> rows(n);
    for (int i = 0; i < n; ++i) rows[i] = static_cast<int>(rng.below(n));
    try {
      out[b] = fn(subset(ds, rows));
      ok[b] = out[b].size() > 0 && out[b].array().isFinite().any();
      if (!ok[b]) reasons[b] = "non-finite curve";
    } catch (const Error& e) {
      reasons[b] = e.what();
    }
  });
  BootstrapDraws d;
  d.requested = n_boot;
  int k = -1;
  for (int b = 0; b < n_boot; ++b) {
    if (!ok[b]) {
      ++d.failures;
      continue;
    }
    if (k < 0) k = static_cast<int>(out[b].size());
    if (out[b].size() != k) fail(ErrorCode::InvariantViolation, "bootstrap curves differ in length");
  }
  if (d.failures > kMaxBootstrapFailureShare * n_boot || k < 0) {
    std::string first;
    for (const auto& r : reasons)
      if (!r.empty()) {
        first = r;
        break;
      }
    fail(ErrorCode::BootstrapDegenerate, std::to_string(d.failures) + " of " + std::to_string(n_boot) +
                                             " replicates failed; first failure: " + first);
  }
  d.curves.resize(n_boot - d.failures, k);
  int r = 0;
  for (int b = 0; b < n_boot; ++b)
    if (ok[b]) d.curves.row(r++) = out[b].transpose();
  return d;
}

namespace {

// Sorted finite draws for every grid point.
std::vector<std::vector<double>> sorted_columns(const Eigen::MatrixXd& curves) {
  std::vector<std::vector<double>> cols(curves.cols());
  for (Eigen::Index j = 0; j < curves.cols(); ++j) {
    for (Eigen::Index b = 0; b < curves.rows(); ++b)
      if (std::isfinite(curves(b, j))) cols[j].push_back(curves(b, j));
    std::sort(cols[j].begin(), cols[j].end());
  }
  return cols;
}

double column_quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  return quantile_sorted(sorted.data(), sorted.size(), p);
}

}  // namespace

double zeta_star(const Eigen::MatrixXd& curves, double level, int lattice) {
  check_level(level);
  require(lattice >= 2, "zeta lattice needs at least two points");
  const double alpha = 1.0 - level;
  const int k = static_cast<int>(curves.cols());
  const int B = static_cast<int>(curves.rows());
  require(k >= 1 && B >= 1, "no bootstrap curves");
  const double hi = alpha / 2.0;
  const double lo = alpha / (2.0 * k);
  if (k == 1) return hi;
  const auto cols = sorted_columns(curves);
  std::vector<double> qlo(k), qhi(k);
  for (int l = lattice - 1; l >= 0; --l) {
    const double zeta = lo + (hi - lo) * l / (lattice - 1);
    for (int j = 0; j < k; ++j) {
      qlo[j] = column_quantile(cols[j], zeta);
      qhi[j] = column_quantile(cols[j], 1.0 - zeta);
    }
    int inside = 0;
    for (int b = 0; b < B; ++b) {
      bool in = true;
      for (int j = 0; j < k && in; ++j) {
        if (std::isnan(qlo[j])) continue;
        const double v = curves(b, j);
        in = std::isfinite(v) && v >= qlo[j] && v <= qhi[j];
      }
      inside += in;
    }
    if (inside >= level * B) return zeta;
  }
  return lo;
}

BandResult percentile_band(const Eigen::VectorXd& theta, const BootstrapDraws& draws, double level) {
  check_level(level);
  const int k = static_cast<int>(theta.size());
  require(draws.curves.cols() == k, "bootstrap curves and estimate differ in length");
  BandResult b;
  b.level = level;
  b.n_boot = draws.requested;
  b.failures = draws.failures;
  const double alpha = 1.0 - level;
  const auto cols = sorted_columns(draws.curves);
  const double zs = zeta_star(draws.curves, level);
  b.critical_pointwise = alpha / 2.0;
  b.critical_uniform = zs;
  b.se.resize(k);
  b.lo.resize(k);
  b.hi.resize(k);
  b.ulo.resize(k);
  b.uhi.resize(k);
  for (int j = 0; j < k; ++j) {
    const auto& c = cols[j];
    if (c.size() >= 2) {
      Eigen::Map<const Eigen::VectorXd> v(c.data(), c.size());
      b.se(j) = sd(v);
    } else {
      b.se(j) = std::numeric_limits<double>::infinity();
    }
    b.lo(j) = column_quantile(c, alpha / 2.0);
    b.hi(j) = column_quantile(c, 1.0 - alpha / 2.0);
    b.ulo(j) = std::min(column_quantile(c, zs), b.lo(j));
    b.uhi(j) = std::max(column_quantile(c, 1.0 - zs), b.hi(j));
  }
  return b;
}

BandResult nonparam_bootstrap_band(const CurveFn& fn, const Dataset& ds, const Eigen::VectorXd& theta, double level,
                                   int n_boot, std::uint64_t seed) {
  BandResult b = percentile_band(theta, bootstrap_curves(fn, ds, n_boot, seed), level);
  b.seed = seed;
  return b;
}

void apply_band(CmeCurve& curve, const BandResult& band, bool keep_pointwise) {
  const auto k = curve.grid.size();
  require(band.ulo.size() == k && band.uhi.size() == k, "band and curve differ in length");
  if (!keep_pointwise) {
    curve.se = band.se;
    curve.ci_lo = band.lo;
    curve.ci_hi = band.hi;
  }
  curve.uci_lo = band.ulo.cwiseMin(curve.ci_lo);
  curve.uci_hi = band.uhi.cwiseMax(curve.ci_hi);
  curve.diagnostics["level"] = band.level;
  curve.diagnostics["critical_uniform"] = band.critical_uniform;
  curve.diagnostics["n_boot"] = band.n_boot;
  if (band.failures > 0) curve.diagnostics["bootstrap_failures"] = band.failures;
}

HypothesisReport hypothesis_tests(const CmeCurve& curve, const std::optional<std::pair<double, double>>& beta3) {
  const auto k = curve.grid.size();
  HypothesisReport r;
  r.z.resize(k);
  r.p_two_sided.resize(k);
  r.p_upper.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double th = curve.theta(j), se = curve.se(j);
    double z;
    if (th == 0.0) z = 0.0;
    else if (se > 0.0) z = th / se;
    else z = th > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.z(j) = z;
    r.p_two_sided(j) = 2.0 * (1.0 - normal_cdf(std::abs(z)));
    r.p_upper(j) = 1.0 - normal_cdf(z);
    if (curve.uci_lo(j) > 0.0 || curve.uci_hi(j) < 0.0) r.uniform_region.push_back(static_cast<int>(j));
  }
  r.uniform_rejects = !r.uniform_region.empty();
  if (beta3) {
    const auto [b, se] = *beta3;
    r.beta3_z = se > 0 ? b / se : (b == 0 ? 0.0 : std::numeric_limits<double>::infinity());
    r.beta3_p = 2.0 * (1.0 - normal_cdf(std::abs(*r.beta3_z)));
  }
  return r;
}

}  // namespace cme
