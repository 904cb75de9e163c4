#include "cme/kde.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cme/errors.hpp"
#include "cme/stats.hpp"

namespace cme {

double silverman_bandwidth(const Eigen::VectorXd& x) {
  if (x.size() < 2) fail(ErrorCode::DegenerateSample, "density estimate needs at least 2 points");
  const double s = sd(x);
  if (!(s > 0.0)) fail(ErrorCode::DegenerateSample, "zero standard deviation");
  std::vector<double> v(x.data(), x.data() + x.size());
  const auto q = quantiles(std::move(v), {0.25, 0.75});
  const double iqr = (q[1] - q[0]) / 1.34;
  const double spread = iqr > 0.0 ? std::min(s, iqr) : s;
  return 1.06 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

Eigen::VectorXd kde_gaussian(const Eigen::VectorXd& x, const Eigen::VectorXd& eval, double bandwidth) {
  const double h = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(x);
  const double norm = 1.0 / (static_cast<double>(x.size()) * h);
  // sorted data lets each evaluation skip points beyond 8.5 bandwidths (kernel < 1e-15)
  std::vector<double> s(x.data(), x.data() + x.size());
  std::sort(s.begin(), s.end());
  const double reach = 8.5 * h;
  Eigen::VectorXd out(eval.size());
  for (Eigen::Index k = 0; k < eval.size(); ++k) {
    const double e = eval(k);
    auto it = std::lower_bound(s.begin(), s.end(), e - reach);
    double acc = 0.0;
    for (; it != s.end() && *it <= e + reach; ++it) {
      const double u = (e - *it) / h;
      acc += std::exp(-0.5 * u * u);
    }
    out(k) = std::max(acc * norm / std::sqrt(2.0 * M_PI), std::numeric_limits<double>::min());
  }
  return out;
}

}  // namespace cme
