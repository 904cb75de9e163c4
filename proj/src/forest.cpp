#include "cme/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cme/errors.hpp"
#include "cme/parallel.hpp"
#include "cme/rng.hpp"

namespace cme {

double Tree::predict(const double* row, Eigen::Index stride) const {
  int k = 0;
  while (nodes[k].feature >= 0) k = row[nodes[k].feature * stride] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
  return nodes[k].value;
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestOptions& opt, Rng& rng)
      : X_(X), y_(y), opt_(opt), rng_(rng) {
    const int p = static_cast<int>(X.cols());
    mtry_ = std::clamp(static_cast<int>(std::ceil(opt.max_features * p - 1e-9)), 1, p);
    features_.resize(p);
    std::iota(features_.begin(), features_.end(), 0);
  }

  Tree build(std::vector<int> rows) {
    rows_ = std::move(rows);
    Tree tree;
    struct Task {
      int node, begin, end, depth;
    };
    tree.nodes.emplace_back();
    std::vector<Task> stack{{0, 0, static_cast<int>(rows_.size()), 0}};
    while (!stack.empty()) {
      const Task t = stack.back();
      stack.pop_back();
      double s = 0.0, ss = 0.0;
      for (int k = t.begin; k < t.end; ++k) {
        const double v = y_(rows_[k]);
        s += v;
        ss += v * v;
      }
      const int n = t.end - t.begin;
      tree.nodes[t.node].value = s / n;
      const double impurity = ss - s * s / n;
      if (n < opt_.min_samples_split || n < 2 * opt_.min_samples_leaf || (opt_.max_depth > 0 && t.depth >= opt_.max_depth) ||
          impurity <= 1e-12 * std::max(ss, 1e-300))
        continue;
      const Split sp = best_split(t.begin, t.end, s);
      if (sp.feature < 0) continue;
      const auto mid = std::partition(rows_.begin() + t.begin, rows_.begin() + t.end,
                                      [&](int i) { return X_(i, sp.feature) <= sp.threshold; });
      const int m = static_cast<int>(mid - rows_.begin());
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      tree.nodes[t.node].feature = sp.feature;
      tree.nodes[t.node].threshold = sp.threshold;
      tree.nodes[t.node].left = left;
      tree.nodes[t.node].right = left + 1;
      stack.push_back({left + 1, m, t.end, t.depth + 1});
      stack.push_back({left, t.begin, m, t.depth + 1});
    }
    return tree;
  }

 private:
  Split best_split(int begin, int end, double total) {
    const int p = static_cast<int>(features_.size());
    for (int j = 0; j < mtry_; ++j) {
      const int r = j + static_cast<int>(rng_.below(p - j));
      std::swap(features_[j], features_[r]);
    }
    std::vector<int> cand(features_.begin(), features_.begin() + mtry_);
    std::sort(cand.begin(), cand.end());
    const int n = end - begin;
    const double base = total * total / n;
    Split best;
    pairs_.resize(n);
    for (int f : cand) {
      for (int k = 0; k < n; ++k) {
        const int i = rows_[begin + k];
        pairs_[k] = {X_(i, f), y_(i)};
      }
      std::sort(pairs_.begin(), pairs_.end());
      double sl = 0.0;
      for (int k = 0; k + 1 < n; ++k) {
        sl += pairs_[k].second;
        const int nl = k + 1, nr = n - nl;
        if (pairs_[k].first == pairs_[k + 1].first) continue;
        if (nl < opt_.min_samples_leaf || nr < opt_.min_samples_leaf) continue;
        const double sr = total - sl;
        const double gain = sl * sl / nl + sr * sr / nr - base;
        if (gain > best.gain * (1.0 + 1e-12) + 1e-300 && gain > 0.0) {
          best.gain = gain;
          best.feature = f;
          best.threshold = 0.5 * (pairs_[k].first + pairs_[k + 1].first);
          if (!(best.threshold < pairs_[k + 1].first)) best.threshold = pairs_[k].first;
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& y_;
  const ForestOptions& opt_;
  Rng& rng_;
  int mtry_ = 1;
  std::vector<int> features_;
  std::vector<int> rows_;
  std::vector<std::pair<double, double>> pairs_;
};

}  // namespace

void RandomForest::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestOptions& opt) {
  require(X.rows() == y.size() && X.rows() > 0, "forest: X and y differ in length");
  require(X.cols() > 0, "forest: no features");
  require(opt.n_estimators >= 1, "forest: n_estimators must be positive");
  require(opt.min_samples_split >= 2 && opt.min_samples_leaf >= 1, "forest: invalid minimum node sizes");
  require(opt.max_features > 0.0 && opt.max_features <= 1.0, "forest: max_features must lie in (0, 1]");
  const int n = static_cast<int>(X.rows());
  trees_.assign(opt.n_estimators, Tree{});
  parallel_for(opt.n_estimators, [&](int t) {
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(t)));
    std::vector<int> rows(n);
    if (opt.bootstrap) {
      for (int i = 0; i < n; ++i) rows[i] = static_cast<int>(rng.below(n));
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    TreeBuilder builder(X, y, opt, rng);
    trees_[t] = builder.build(std::move(rows));
  });
}

Eigen::VectorXd RandomForest::predict(const Eigen::MatrixXd& X) const {
  require(!trees_.empty(), "forest: predict before fit");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
  for (const Tree& t : trees_)
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) += t.predict(X.data() + i, X.rows());
  return out / static_cast<double>(trees_.size());
}

}  // namespace cme
