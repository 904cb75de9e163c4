#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cme/forest.hpp"

namespace cme {

struct HistGbmOptions {
  double learning_rate = 0.1;
  int max_iter = 100;
  int max_leaf_nodes = 31;
  int min_samples_leaf = 20;
  int max_depth = 0;  // 0: unlimited
  double l2_regularization = 0.0;
  int max_bins = 256;
  bool classification = false;
};

//! Gradient boosting on binned features with leaf-wise tree growth.
//! Regression uses squared error; classification the logistic loss, with
//! Newton leaf values -G / (H + l2) shrunk by the learning rate.
class HistGbm {
 public:
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const HistGbmOptions& opt);
  //! Probabilities for classification, fitted values for regression.
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  Eigen::VectorXd raw_predict(const Eigen::MatrixXd& X) const;
  //! Training loss after each iteration (half mean squared error or mean log-loss).
  const std::vector<double>& loss_trace() const { return trace_; }
  int n_trees() const { return static_cast<int>(trees_.size()); }

 private:
  bool classification_ = false;
  double baseline_ = 0.0;
  std::vector<Tree> trees_;
  std::vector<double> trace_;
};

//! Bin edges for one feature: at most max_bins - 1 thresholds from
//! equal-frequency quantiles (midpoints between distinct values when there
//! are few of them). Value x falls in bin #{edges < x}.
std::vector<double> bin_edges(std::vector<double> values, int max_bins);

}  // namespace cme
