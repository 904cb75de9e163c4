#include "cme/signals.hpp"

#include <algorithm>
#include <cmath>

#include "cme/errors.hpp"
#include "cme/linear.hpp"
#include "cme/spline.hpp"

namespace cme {

const char* to_string(SignalKind k) {
  switch (k) {
    case SignalKind::outcome: return "outcome";
    case SignalKind::ipw: return "ipw";
    case SignalKind::aipw: return "aipw";
    case SignalKind::cmet_outcome: return "cmet_outcome";
    case SignalKind::cmet_ipw: return "cmet_ipw";
    case SignalKind::cmet_aipw: return "cmet_aipw";
    case SignalKind::plrm_residuals: return "plrm_residuals";
  }
  return "?";
}

void SignalVector::validate() const {
  if (kind == SignalKind::plrm_residuals) {
    if (lambda.size() != 0 || y_tilde.size() == 0 || y_tilde.size() != d_tilde.size())
      fail(ErrorCode::InvariantViolation, "residual signal needs y_tilde and d_tilde only");
    if (!y_tilde.allFinite() || !d_tilde.allFinite())
      fail(ErrorCode::InvariantViolation, "non-finite residuals");
    return;
  }
  if (lambda.size() == 0) fail(ErrorCode::InvariantViolation, "empty signal");
  if (!lambda.allFinite()) fail(ErrorCode::InvariantViolation, "non-finite signal entries");
}

Eigen::VectorXd clip_propensity(const Eigen::VectorXd& pi, double alpha) {
  require(alpha > 0.0 && alpha < 0.5, "clipping level must lie in (0, 0.5)");
  return pi.cwiseMax(alpha).cwiseMin(1.0 - alpha);
}

namespace {

void check_lengths(const Dataset& ds, const Eigen::VectorXd& v, const char* what) {
  if (v.size() != ds.n()) fail(ErrorCode::InvalidArgument, std::string(what) + " has the wrong length");
}

void check_open_unit(const Eigen::VectorXd& p, const char* what) {
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (!(p(i) > 0.0 && p(i) < 1.0))
      fail(ErrorCode::UnclippedPropensity, std::string(what) + " = " + std::to_string(p(i)) + " at row " +
                                               std::to_string(i));
}

void check_binary(const Dataset& ds) {
  if (ds.treatment_type != TreatmentType::binary)
    fail(ErrorCode::InvalidArgument, "signal requires a binary treatment");
}

SignalVector make_signal(SignalKind kind, Eigen::VectorXd lambda) {
  SignalVector s;
  s.kind = kind;
  s.lambda = std::move(lambda);
  s.validate();
  return s;
}

}  // namespace

SignalVector outcome_signal(const Dataset& ds, const NuisanceFit& nf) {
  check_binary(ds);
  check_lengths(ds, nf.mu1, "mu1");
  check_lengths(ds, nf.mu0, "mu0");
  return make_signal(SignalKind::outcome, nf.mu1 - nf.mu0);
}

SignalVector ipw_signal(const Dataset& ds, const NuisanceFit& nf) {
  check_binary(ds);
  check_lengths(ds, nf.pi, "pi");
  check_open_unit(nf.pi, "propensity");
  const auto& d = ds.d.array();
  const auto& y = ds.y.array();
  const auto& p = nf.pi.array();
  return make_signal(SignalKind::ipw, (d * y / p - (1.0 - d) * y / (1.0 - p)).matrix());
}

SignalVector aipw_signal(const Dataset& ds, const NuisanceFit& nf) {
  check_binary(ds);
  check_lengths(ds, nf.mu1, "mu1");
  check_lengths(ds, nf.mu0, "mu0");
  check_lengths(ds, nf.pi, "pi");
  check_open_unit(nf.pi, "propensity");
  const auto& d = ds.d.array();
  const auto& y = ds.y.array();
  const auto& p = nf.pi.array();
  const auto& m1 = nf.mu1.array();
  const auto& m0 = nf.mu0.array();
  Eigen::VectorXd lambda = (m1 - m0 + d * (y - m1) / p - (1.0 - d) * (y - m0) / (1.0 - p)).matrix();
  return make_signal(SignalKind::aipw, std::move(lambda));
}

SignalVector cmet_signal(const Dataset& ds, const NuisanceFit& nf, const Eigen::VectorXd& p_x, SignalKind kind) {
  check_binary(ds);
  check_lengths(ds, p_x, "p_x");
  check_open_unit(p_x, "marginal propensity");
  const auto& d = ds.d.array();
  const auto& y = ds.y.array();
  const auto& px = p_x.array();
  switch (kind) {
    case SignalKind::cmet_outcome:
      check_lengths(ds, nf.mu0, "mu0");
      return make_signal(kind, ((y - nf.mu0.array()) * d / px).matrix());
    case SignalKind::cmet_ipw: {
      check_lengths(ds, nf.pi, "pi");
      check_open_unit(nf.pi, "propensity");
      const auto& p = nf.pi.array();
      return make_signal(kind, (y * (d - p) / (px * (1.0 - p))).matrix());
    }
    case SignalKind::cmet_aipw: {
      check_lengths(ds, nf.mu0, "mu0");
      check_lengths(ds, nf.pi, "pi");
      check_open_unit(nf.pi, "propensity");
      const auto& p = nf.pi.array();
      return make_signal(kind, ((y - nf.mu0.array()) * (d - p * (1.0 - d) / (1.0 - p)) / px).matrix());
    }
    default: fail(ErrorCode::InvalidArgument, "not a treated-effect signal kind");
  }
}

SignalVector plrm_residual_signal(const Dataset& ds, const NuisanceFit& nf) {
  check_lengths(ds, nf.g_hat, "g_hat");
  check_lengths(ds, nf.m_hat, "m_hat");
  SignalVector s;
  s.kind = SignalKind::plrm_residuals;
  s.y_tilde = ds.y - nf.g_hat;
  s.d_tilde = ds.d - nf.m_hat;
  s.validate();
  return s;
}

Eigen::VectorXd marginal_propensity(const Eigen::VectorXd& x, const Eigen::VectorXd& d, double alpha, int basis_df) {
  const auto basis = quantile_spline(x, 3, basis_df);
  const Eigen::MatrixXd B = bspline_basis(x, basis);
  const LinearFit fit = logit_irls(B, d);
  return clip_propensity(logistic(B * fit.coef), alpha);
}

namespace {

struct CellStats {
  int n1 = 0, n0 = 0;
  double s1 = 0.0, s0 = 0.0;
};

std::vector<double> cell_key(const Dataset& ds, int i) {
  std::vector<double> key(1 + ds.p());
  key[0] = ds.x(i);
  for (int j = 0; j < ds.p(); ++j) key[1 + j] = ds.z(i, j);
  return key;
}

std::map<std::vector<double>, CellStats> tabulate(const Dataset& ds) {
  check_binary(ds);
  std::map<std::vector<double>, CellStats> cells;
  for (int i = 0; i < ds.n(); ++i) {
    auto& c = cells[cell_key(ds, i)];
    if (ds.d(i) == 1.0) {
      ++c.n1;
      c.s1 += ds.y(i);
    } else {
      ++c.n0;
      c.s0 += ds.y(i);
    }
  }
  for (const auto& [key, c] : cells)
    if (c.n1 == 0 || c.n0 == 0)
      fail(ErrorCode::NoOverlapInCell, "covariate cell with X = " + std::to_string(key[0]) + " lacks a treatment arm");
  return cells;
}

}  // namespace

std::map<double, double> sdim_oracle(const Dataset& ds) {
  const auto cells = tabulate(ds);
  std::map<double, int> n_x;
  for (const auto& [key, c] : cells) n_x[key[0]] += c.n1 + c.n0;
  std::map<double, double> theta;
  for (const auto& [key, c] : cells) {
    const double w = static_cast<double>(c.n1 + c.n0) / n_x[key[0]];
    theta[key[0]] += w * (c.s1 / c.n1 - c.s0 / c.n0);
  }
  return theta;
}

NuisanceFit frequency_nuisances(const Dataset& ds) {
  const auto cells = tabulate(ds);
  NuisanceFit nf;
  nf.mu1.resize(ds.n());
  nf.mu0.resize(ds.n());
  nf.pi.resize(ds.n());
  for (int i = 0; i < ds.n(); ++i) {
    const auto& c = cells.at(cell_key(ds, i));
    nf.mu1(i) = c.s1 / c.n1;
    nf.mu0(i) = c.s0 / c.n0;
    nf.pi(i) = static_cast<double>(c.n1) / (c.n1 + c.n0);
  }
  return nf;
}

std::map<double, double> conditional_means(const Eigen::VectorXd& values, const Eigen::VectorXd& x) {
  require(values.size() == x.size(), "values and x differ in length");
  std::map<double, std::pair<double, int>> acc;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto& a = acc[x(i)];
    a.first += values(i);
    ++a.second;
  }
  std::map<double, double> out;
  for (const auto& [k, a] : acc) out[k] = a.first / a.second;
  return out;
}

PotentialOutcomeTable toy_population() {
  PotentialOutcomeTable t;
  t.x = {0, 0, 0, 0, 1, 1, 1, 2};
  t.z = {0, 0, 1, 1, 0, 0, 1, 1};
  t.y0 = {2, 2, 3, 5, 10, 4, 9, 1};
  t.y1 = {3, 0, 7, 3, 8, 1, 9, 0};
  t.d = {1, 0, 1, 0, 1, 0, 1, 0};
  t.weight = {1.0 / 2, 1.0 / 2, 1.0 / 2, 1.0 / 2, 2.0 / 3, 2.0 / 3, 1.0 / 3, 1.0};
  return t;
}

namespace {

double weighted_effect(const PotentialOutcomeTable& t, double x, bool treated_only) {
  double num = 0.0, den = 0.0;
  for (int i = 0; i < t.size(); ++i) {
    if (t.x[i] != x || (treated_only && t.d[i] != 1.0)) continue;
    num += t.weight[i] * (t.y1[i] - t.y0[i]);
    den += t.weight[i];
  }
  if (den <= 0.0) fail(ErrorCode::InvalidArgument, "no units with X = " + std::to_string(x));
  return num / den;
}

}  // namespace

double brute_force_cme(const PotentialOutcomeTable& t, double x) { return weighted_effect(t, x, false); }

double brute_force_cmet(const PotentialOutcomeTable& t, double x) { return weighted_effect(t, x, true); }

Dataset observed_dataset(const PotentialOutcomeTable& t) {
  const int n = t.size();
  Eigen::VectorXd y(n), d(n), x(n);
  Eigen::MatrixXd z(n, 1);
  for (int i = 0; i < n; ++i) {
    d(i) = t.d[i];
    y(i) = t.d[i] == 1.0 ? t.y1[i] : t.y0[i];
    x(i) = t.x[i];
    z(i, 0) = t.z[i];
  }
  return make_dataset(y, d, x, z);
}

std::vector<GateauxRow> gateaux_deviations(const Dataset& ds, const NuisanceFit& truth,
                                           const std::vector<Perturbation>& directions,
                                           const std::vector<double>& t_grid, SignalKind kind) {
  require(kind == SignalKind::aipw || kind == SignalKind::ipw, "Gateaux check supports the aipw and ipw signals");
  auto signal_mean = [&](const NuisanceFit& nf) {
    const SignalVector s = kind == SignalKind::aipw ? aipw_signal(ds, nf) : ipw_signal(ds, nf);
    return s.lambda.mean();
  };
  for (const auto& p : directions)
    if (p.target != NuisanceTarget::none) check_lengths(ds, p.h, "perturbation direction");
  const double base = signal_mean(truth);
  std::vector<GateauxRow> rows;
  for (double t : t_grid) {
    NuisanceFit nf = truth;
    for (const auto& p : directions) {
      switch (p.target) {
        case NuisanceTarget::none: break;
        case NuisanceTarget::mu1: nf.mu1 += t * p.h; break;
        case NuisanceTarget::mu0: nf.mu0 += t * p.h; break;
        case NuisanceTarget::pi: nf.pi += t * p.h; break;
      }
    }
    rows.push_back({t, std::abs(signal_mean(nf) - base)});
  }
  return rows;
}

}  // namespace cme
