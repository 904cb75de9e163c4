#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace cme {

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0.0;  // x <= threshold goes left
  int left = -1, right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(const double* row, Eigen::Index stride) const;
};

struct ForestOptions {
  int n_estimators = 100;
  int max_depth = 0;  // 0: unlimited
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  double max_features = 1.0;  // fraction of features tried at each split
  bool bootstrap = true;
  bool classification = false;
  std::uint64_t seed = 0;
};

//! Bagged CART. Splits maximize the reduction in squared error; for 0/1
//! targets this is the same ordering as the Gini decrease. Ties keep the
//! lower feature index, then the lower threshold. Leaves hold the mean
//! (class fraction for classification).
class RandomForest {
 public:
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestOptions& opt);
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  int size() const { return static_cast<int>(trees_.size()); }
  const Tree& tree(int t) const { return trees_[t]; }

 private:
  std::vector<Tree> trees_;
};

}  // namespace cme
