#include "cme/design.hpp"

#include "cme/dataset.hpp"
#include "cme/errors.hpp"

namespace cme {

namespace {

bool is_binary_column(const Eigen::VectorXd& v) {
  bool has0 = false, has1 = false;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) == 0.0)
      has0 = true;
    else if (v(i) == 1.0)
      has1 = true;
    else
      return false;
  }
  return has0 && has1;
}

struct BlockValues {
  Eigen::MatrixXd cols;
  std::vector<std::string> names;
};

BlockValues block_values(const DesignSpec::Block& b, const Eigen::VectorXd& v) {
  BlockValues out;
  if (b.binary || b.raw) {
    out.cols = v;
    out.names = {b.name};
    return out;
  }
  const Eigen::MatrixXd B = bspline_basis(v, b.basis);
  out.cols = B.rightCols(B.cols() - 1);
  for (Eigen::Index j = 1; j < B.cols(); ++j) out.names.push_back(b.name + "_bs" + std::to_string(j + 1));
  return out;
}

}  // namespace

DesignSpec fit_design(const Eigen::MatrixXd& V, const std::vector<std::string>& names,
                      bool interactions, bool expanded, int degree, int basis_df) {
  require(static_cast<Eigen::Index>(names.size()) == V.cols(), "design: one name per column");
  DesignSpec spec;
  spec.interactions = interactions;
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    DesignSpec::Block b;
    b.name = names[j];
    b.binary = is_binary_column(V.col(j));
    b.raw = !expanded;
    if (!b.binary && expanded) b.basis = quantile_spline(V.col(j), degree, basis_df);
    spec.blocks.push_back(std::move(b));
  }
  return spec;
}

DesignMatrix apply_design(const DesignSpec& spec, const Eigen::MatrixXd& V) {
  require(V.cols() == static_cast<Eigen::Index>(spec.blocks.size()), "design: column count mismatch");
  const Eigen::Index n = V.rows();
  std::vector<BlockValues> blocks;
  Eigen::Index width = spec.intercept ? 1 : 0;
  for (std::size_t j = 0; j < spec.blocks.size(); ++j) {
    blocks.push_back(block_values(spec.blocks[j], V.col(j)));
    width += blocks.back().cols.cols();
  }
  if (spec.interactions)
    for (std::size_t a = 0; a < blocks.size(); ++a)
      for (std::size_t b = a + 1; b < blocks.size(); ++b)
        width += blocks[a].cols.cols() * blocks[b].cols.cols();

  DesignMatrix dm;
  dm.has_intercept = spec.intercept;
  dm.X.resize(n, width);
  Eigen::Index c = 0;
  if (spec.intercept) {
    dm.X.col(c++).setOnes();
    dm.names.push_back("(Intercept)");
  }
  for (const auto& bv : blocks) {
    dm.X.middleCols(c, bv.cols.cols()) = bv.cols;
    c += bv.cols.cols();
    dm.names.insert(dm.names.end(), bv.names.begin(), bv.names.end());
  }
  if (spec.interactions) {
    for (std::size_t a = 0; a < blocks.size(); ++a)
      for (std::size_t b = a + 1; b < blocks.size(); ++b)
        for (Eigen::Index i = 0; i < blocks[a].cols.cols(); ++i)
          for (Eigen::Index k = 0; k < blocks[b].cols.cols(); ++k) {
            dm.X.col(c++) = blocks[a].cols.col(i).cwiseProduct(blocks[b].cols.col(k));
            dm.names.push_back(blocks[a].names[i] + ":" + blocks[b].names[k]);
          }
  }
  return dm;
}

std::vector<std::string> covariate_names(const Dataset& ds) {
  std::vector<std::string> names = {ds.x_name};
  for (int j = 0; j < ds.p(); ++j)
    names.push_back(j < static_cast<int>(ds.z_names.size()) ? ds.z_names[j] : "Z" + std::to_string(j + 1));
  return names;
}

DesignMatrix expand_design(const Dataset& ds, bool include_interactions) {
  const Eigen::MatrixXd V = covariates(ds);
  return apply_design(fit_design(V, covariate_names(ds), include_interactions), V);
}

}  // namespace cme
