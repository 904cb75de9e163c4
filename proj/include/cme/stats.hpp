#pragma once

#include <Eigen/Dense>
#include <vector>

namespace cme {

//! Sample quantile, linear interpolation between order statistics (type 7).
double quantile(std::vector<double> values, double p);
double quantile(const Eigen::VectorXd& values, double p);
//! Several probabilities from one sort.
std::vector<double> quantiles(std::vector<double> values, const std::vector<double>& ps);
//! Type-7 quantile of an already sorted range.
double quantile_sorted(const double* sorted, std::size_t n, double p);

double mean(const Eigen::VectorXd& v);
//! Sample standard deviation (n - 1 denominator).
double sd(const Eigen::VectorXd& v);
double median(const Eigen::VectorXd& v);

double normal_cdf(double z);
double normal_pdf(double z);
double normal_quantile(double p);

double logistic(double t);
double logit(double p);

//! Unique sorted values.
std::vector<double> unique_values(const Eigen::VectorXd& v);

//! n equally spaced points over [lo, hi].
Eigen::VectorXd linspace(double lo, double hi, int n);
//! n log-spaced points over [lo, hi].
Eigen::VectorXd logspace(double lo, double hi, int n);

}  // namespace cme
