#include "cme/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>

#include "cme/errors.hpp"

namespace cme {

double quantile_sorted(const double* sorted, std::size_t n, double p) {
  require(n > 0, "quantile of empty sample");
  require(p >= 0.0 && p <= 1.0, "quantile probability outside [0, 1]");
  const double h = (static_cast<double>(n) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values.data(), values.size(), p);
}

double quantile(const Eigen::VectorXd& values, double p) {
  return quantile(std::vector<double>(values.data(), values.data() + values.size()), p);
}

std::vector<double> quantiles(std::vector<double> values, const std::vector<double>& ps) {
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  out.reserve(ps.size());
  for (double p : ps) out.push_back(quantile_sorted(values.data(), values.size(), p));
  return out;
}

double mean(const Eigen::VectorXd& v) {
  require(v.size() > 0, "mean of empty vector");
  return v.mean();
}

double sd(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

double median(const Eigen::VectorXd& v) { return quantile(v, 0.5); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_pdf(double z) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

std::vector<double> unique_values(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

Eigen::VectorXd linspace(double lo, double hi, int n) {
  require(n >= 1, "linspace needs n >= 1");
  Eigen::VectorXd out(n);
  if (n == 1) {
    out(0) = lo;
    return out;
  }
  for (int i = 0; i < n; ++i) out(i) = lo + (hi - lo) * i / (n - 1.0);
  out(n - 1) = hi;
  return out;
}

Eigen::VectorXd logspace(double lo, double hi, int n) {
  require(lo > 0 && hi > 0, "logspace needs positive bounds");
  Eigen::VectorXd out = linspace(std::log(lo), std::log(hi), n);
  for (int i = 0; i < n; ++i) out(i) = std::exp(out(i));
  return out;
}

}  // namespace cme
