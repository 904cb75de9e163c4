#pragma once

#include <Eigen/Dense>

namespace cme {

//! 1.06 * min(sd, IQR / 1.34) * n^(-1/5); falls back to sd when the IQR is 0.
double silverman_bandwidth(const Eigen::VectorXd& x);

//! Gaussian kernel density estimate at eval points (Silverman bandwidth when
//! bandwidth <= 0). Throws DegenerateSample for n < 2 or zero spread.
Eigen::VectorXd kde_gaussian(const Eigen::VectorXd& x, const Eigen::VectorXd& eval, double bandwidth = 0.0);

}  // namespace cme
