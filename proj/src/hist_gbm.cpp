#include "cme/hist_gbm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cme/errors.hpp"
#include "cme/stats.hpp"

namespace cme {

std::vector<double> bin_edges(std::vector<double> values, int max_bins) {
  require(max_bins >= 2, "histogram needs at least two bins");
  std::sort(values.begin(), values.end());
  std::vector<double> uniq;
  for (double v : values)
    if (uniq.empty() || v != uniq.back()) uniq.push_back(v);
  std::vector<double> edges;
  if (static_cast<int>(uniq.size()) <= max_bins) {
    for (std::size_t k = 0; k + 1 < uniq.size(); ++k) edges.push_back(0.5 * (uniq[k] + uniq[k + 1]));
    return edges;
  }
  for (int k = 1; k < max_bins; ++k) {
    const double q = quantile_sorted(values.data(), values.size(), static_cast<double>(k) / max_bins);
    if (edges.empty() || q > edges.back()) edges.push_back(q);
  }
  return edges;
}

namespace {

struct Bin {
  double g = 0.0, h = 0.0;
  int n = 0;
};

constexpr double kMinHessian = 1e-3;

struct Leaf {
  std::vector<int> rows;
  std::vector<Bin> hist;
  double g = 0.0, h = 0.0;
  int depth = 0;
  int node = 0;
  int feature = -1, bin = -1;
  double gain = 0.0;
};

class Grower {
 public:
  Grower(const std::vector<std::vector<double>>& edges, const std::vector<std::uint16_t>& codes, int n,
         const HistGbmOptions& opt)
      : edges_(edges), codes_(codes), n_(n), opt_(opt) {
    offset_.resize(edges.size() + 1, 0);
    for (std::size_t f = 0; f < edges.size(); ++f) offset_[f + 1] = offset_[f] + static_cast<int>(edges[f].size()) + 1;
  }

  Tree grow(const Eigen::VectorXd& g, const Eigen::VectorXd& h, Eigen::VectorXd& raw) {
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<Leaf> leaves(1);
    Leaf& root = leaves[0];
    root.rows.resize(n_);
    for (int i = 0; i < n_; ++i) root.rows[i] = i;
    build_hist(root, g, h);
    evaluate(root);
    for (;;) {
      if (static_cast<int>(leaves.size()) >= opt_.max_leaf_nodes) break;
      int pick = -1;
      for (std::size_t k = 0; k < leaves.size(); ++k)
        if (leaves[k].feature >= 0 && (pick < 0 || leaves[k].gain > leaves[pick].gain)) pick = static_cast<int>(k);
      if (pick < 0) break;
      Leaf parent = std::move(leaves[pick]);
      Leaf left, right;
      const int f = parent.feature;
      for (int i : parent.rows) (codes_[static_cast<std::size_t>(f) * n_ + i] <= parent.bin ? left : right).rows.push_back(i);
      left.depth = right.depth = parent.depth + 1;
      Leaf& small = left.rows.size() <= right.rows.size() ? left : right;
      Leaf& large = left.rows.size() <= right.rows.size() ? right : left;
      build_hist(small, g, h);
      large.hist = parent.hist;
      for (std::size_t b = 0; b < large.hist.size(); ++b) {
        large.hist[b].g -= small.hist[b].g;
        large.hist[b].h -= small.hist[b].h;
        large.hist[b].n -= small.hist[b].n;
      }
      large.g = parent.g - small.g;
      large.h = parent.h - small.h;
      const int li = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[parent.node];
      node.feature = f;
      node.threshold = edges_[f][parent.bin];
      node.left = li;
      node.right = li + 1;
      left.node = li;
      right.node = li + 1;
      evaluate(left);
      evaluate(right);
      leaves[pick] = std::move(left);
      leaves.push_back(std::move(right));
    }
    for (const Leaf& leaf : leaves) {
      const double v = -opt_.learning_rate * leaf.g / (leaf.h + opt_.l2_regularization);
      tree.nodes[leaf.node].value = v;
      for (int i : leaf.rows) raw(i) += v;
    }
    return tree;
  }

 private:
  void build_hist(Leaf& leaf, const Eigen::VectorXd& g, const Eigen::VectorXd& h) {
    leaf.hist.assign(offset_.back(), Bin{});
    leaf.g = leaf.h = 0.0;
    for (int i : leaf.rows) {
      leaf.g += g(i);
      leaf.h += h(i);
    }
    for (std::size_t f = 0; f + 1 < offset_.size(); ++f) {
      Bin* hist = leaf.hist.data() + offset_[f];
      const std::uint16_t* code = codes_.data() + f * n_;
      for (int i : leaf.rows) {
        Bin& b = hist[code[i]];
        b.g += g(i);
        b.h += h(i);
        ++b.n;
      }
    }
  }

  void evaluate(Leaf& leaf) const {
    leaf.feature = -1;
    leaf.gain = 0.0;
    const int n = static_cast<int>(leaf.rows.size());
    if (n < 2 * opt_.min_samples_leaf) return;
    if (opt_.max_depth > 0 && leaf.depth >= opt_.max_depth) return;
    const double lambda = opt_.l2_regularization;
    const double parent = leaf.g * leaf.g / (leaf.h + lambda);
    for (std::size_t f = 0; f + 1 < offset_.size(); ++f) {
      const Bin* hist = leaf.hist.data() + offset_[f];
      const int nb = offset_[f + 1] - offset_[f];
      double gl = 0.0, hl = 0.0;
      int nl = 0;
      for (int b = 0; b + 1 < nb; ++b) {
        gl += hist[b].g;
        hl += hist[b].h;
        nl += hist[b].n;
        const int nr = n - nl;
        if (nl < opt_.min_samples_leaf) continue;
        if (nr < opt_.min_samples_leaf) break;
        const double gr = leaf.g - gl, hr = leaf.h - hl;
        if (hl < kMinHessian || hr < kMinHessian) continue;
        const double gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
        if (gain > leaf.gain * (1.0 + 1e-12) + 1e-300 && gain > 1e-12 * (std::abs(parent) + 1e-300)) {
          leaf.gain = gain;
          leaf.feature = static_cast<int>(f);
          leaf.bin = b;
        }
      }
    }
  }

  const std::vector<std::vector<double>>& edges_;
  const std::vector<std::uint16_t>& codes_;
  int n_;
  const HistGbmOptions& opt_;
  std::vector<int> offset_;
};

double training_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& raw, bool classification) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (classification) {
      // log(1 + e^raw) - y raw, evaluated stably
      const double r = raw(i);
      s += (r > 0 ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r))) - y(i) * r;
    } else {
      s += 0.5 * (y(i) - raw(i)) * (y(i) - raw(i));
    }
  }
  return s / y.size();
}

}  // namespace

void HistGbm::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const HistGbmOptions& opt) {
  require(X.rows() == y.size() && X.rows() > 0, "hist_gbm: X and y differ in length");
  require(X.cols() > 0, "hist_gbm: no features");
  require(opt.learning_rate > 0.0, "hist_gbm: learning_rate must be positive");
  require(opt.max_iter >= 1 && opt.max_leaf_nodes >= 2 && opt.min_samples_leaf >= 1,
          "hist_gbm: invalid iteration or tree size settings");
  require(opt.max_bins >= 2 && opt.max_bins <= 65535, "hist_gbm: max_bins out of range");
  require(opt.l2_regularization >= 0.0, "hist_gbm: l2_regularization must be non-negative");
  const int n = static_cast<int>(X.rows()), p = static_cast<int>(X.cols());
  classification_ = opt.classification;
  std::vector<std::vector<double>> edges(p);
  std::vector<std::uint16_t> codes(static_cast<std::size_t>(p) * n);
  for (int f = 0; f < p; ++f) {
    edges[f] = bin_edges(std::vector<double>(X.col(f).data(), X.col(f).data() + n), opt.max_bins);
    for (int i = 0; i < n; ++i)
      codes[static_cast<std::size_t>(f) * n + i] = static_cast<std::uint16_t>(
          std::lower_bound(edges[f].begin(), edges[f].end(), X(i, f)) - edges[f].begin());
  }
  const double ybar = y.mean();
  if (classification_) {
    const double pbar = std::clamp(ybar, 1e-12, 1.0 - 1e-12);
    baseline_ = std::log(pbar / (1.0 - pbar));
  } else {
    baseline_ = ybar;
  }
  Eigen::VectorXd raw = Eigen::VectorXd::Constant(n, baseline_);
  Eigen::VectorXd g(n), h(n);
  trees_.clear();
  trace_.clear();
  Grower grower(edges, codes, n, opt);
  for (int it = 0; it < opt.max_iter; ++it) {
    if (classification_) {
      for (int i = 0; i < n; ++i) {
        const double pr = logistic(raw(i));
        g(i) = pr - y(i);
        h(i) = pr * (1.0 - pr);
      }
    } else {
      g = raw - y;
      h.setOnes();
    }
    trees_.push_back(grower.grow(g, h, raw));
    trace_.push_back(training_loss(y, raw, classification_));
  }
}

Eigen::VectorXd HistGbm::raw_predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(X.rows(), baseline_);
  for (const Tree& t : trees_)
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) += t.predict(X.data() + i, X.rows());
  return out;
}

Eigen::VectorXd HistGbm::predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd raw = raw_predict(X);
  if (classification_) raw = raw.unaryExpr([](double r) { return logistic(r); });
  return raw;
}

}  // namespace cme
