#include "cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cme/classic.hpp"
#include "cme/dml.hpp"
#include "cme/errors.hpp"
#include "cme/parallel.hpp"
#include "cme/simlab.hpp"
#include "cme/stats.hpp"

namespace cme::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kVersion = "1.0.0";
constexpr int kHistogramBins = 30;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numerical: return 4;
  }
  return 4;
}

const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numerical: return "numerical";
  }
  return "numerical";
}

void report_error(const std::string& code, const std::string& category, const std::string& message,
                  const std::string& field = "") {
  json e{{"code", code}, {"category", category}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  std::cerr << json{{"error", e}}.dump() << std::endl;
}

std::string field_of(const std::string& message) {
  const auto pos = message.find("--");
  if (pos == std::string::npos) return "";
  auto end = message.find_first_of(" ,:", pos);
  return message.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v(i)));
  return a;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write " + p.string());
  return out;
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::InvalidArgument, "expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

double to_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, what + ": '" + s + "' is not a number");
  }
}

std::string trim_space(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::vector<double> number_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_number(trim_space(item), what));
  return out;
}

ParamMap param_map(const std::vector<std::string>& items) {
  ParamMap m;
  for (const auto& it : items) {
    const auto [k, v] = split_assignment(it);
    m[k] = to_number(v, k);
  }
  return m;
}

ParamGrid grid_from_items(const std::vector<std::string>& items) {
  ParamGrid g;
  for (const auto& it : items) {
    const auto [k, v] = split_assignment(it);
    g.emplace_back(k, number_list(v, k));
  }
  return g;
}

// [y] / [t] sections of "key = v1, v2, ..." lines; '#' starts a comment.
std::pair<ParamGrid, ParamGrid> read_cv_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidArgument, "cannot open cv grid file " + path);
  ParamGrid y, t;
  ParamGrid* cur = nullptr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_space(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line == "[y]") {
      cur = &y;
    } else if (line == "[t]") {
      cur = &t;
    } else {
      if (!cur) fail(ErrorCode::InvalidArgument, path + ":" + std::to_string(lineno) + ": entry outside [y] or [t]");
      const auto [k, v] = split_assignment(line);
      cur->emplace_back(trim_space(k), number_list(v, trim_space(k)));
    }
  }
  return {y, t};
}

// Every option of a subcommand with its resolved value.
json resolved_options(const CLI::App* app) {
  json cfg = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->get_expected_max() == 0) {
      cfg[name] = opt->count() > 0;
      continue;
    }
    const auto& res = opt->results();
    if (opt->count() == 0) {
      cfg[name] = opt->get_default_str();
    } else if (res.size() == 1) {
      cfg[name] = res[0];
    } else {
      cfg[name] = res;
    }
  }
  return cfg;
}

json library_versions() {
  return json{{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"boost", BOOST_LIB_VERSION},
              {"cli11", CLI11_VERSION},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

void write_manifest(const fs::path& dir, const std::string& command, const CLI::App* sub, json extra) {
  json m;
  m["schema"] = "cme.manifest/1";
  m["tool"] = {{"name", "cme"}, {"version", kVersion}};
  m["libraries"] = library_versions();
  m["command"] = command;
  m["config"] = resolved_options(sub);
  for (auto& [k, v] : extra.items()) m[k] = v;
  auto out = open_out(dir / "manifest.json");
  out << m.dump(2) << "\n";
}

// ---- data options ---------------------------------------------------------

struct DataOptions {
  std::string path, y, d, x;
  std::vector<std::string> z;
  std::string treat_type = "binary";
  std::string outcome_type = "continuous";
  bool na_rm = false;
  std::vector<double> trim_x;
};

void add_data_options(CLI::App* app, DataOptions& o) {
  app->add_option("--data", o.path, "Input CSV with a header row")->required();
  app->add_option("--y", o.y, "Outcome column")->required();
  app->add_option("--d", o.d, "Treatment column")->required();
  app->add_option("--x", o.x, "Moderator column")->required();
  app->add_option("--z", o.z, "Covariate columns")->delimiter(',');
  app->add_option("--treat-type", o.treat_type, "binary or continuous")->capture_default_str();
  app->add_option("--outcome-type", o.outcome_type, "continuous or binary")->capture_default_str();
  app->add_flag("--na-rm", o.na_rm, "Drop rows with missing values");
  app->add_option("--trim-x", o.trim_x, "Keep rows with X between these two quantiles, e.g. 0.025,0.975")
      ->delimiter(',')
      ->expected(2);
}

struct Loaded {
  Dataset data;
  int dropped = 0;
  int trimmed = 0;
};

Loaded load(const DataOptions& o) {
  ColumnMap map;
  map.y = o.y;
  map.d = o.d;
  map.x = o.x;
  map.z = o.z;
  map.treatment_type = parse_treatment_type(o.treat_type);
  map.outcome_type = parse_outcome_type(o.outcome_type);
  IngestResult r = ingest_csv(o.path, map, o.na_rm);
  Loaded out{std::move(r.data), r.dropped, 0};
  if (!o.trim_x.empty()) {
    const int before = out.data.n();
    out.data = trim(out.data, TrimSpec{TrimMode::moderator_quantile, o.trim_x[0], o.trim_x[1]});
    out.trimmed = before - out.data.n();
  }
  return out;
}

json data_summary(const DataOptions& o, const Loaded& l) {
  return json{{"path", o.path}, {"rows", l.data.n()}, {"dropped_missing", l.dropped}, {"trimmed", l.trimmed}};
}

// ---- histograms -------------------------------------------------------------

struct Histogram {
  std::vector<double> edges;
  std::vector<int> treated, control, all;
};

Histogram moderator_histogram(const Dataset& ds, int bins) {
  Histogram h;
  const double lo = ds.x.minCoeff(), hi = ds.x.maxCoeff();
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(hi > lo ? lo + b * width : lo + b - bins / 2.0);
  h.treated.assign(bins, 0);
  h.control.assign(bins, 0);
  h.all.assign(bins, 0);
  for (int i = 0; i < ds.n(); ++i) {
    int b = hi > lo ? static_cast<int>((ds.x(i) - lo) / width) : bins / 2;
    b = std::clamp(b, 0, bins - 1);
    ++h.all[b];
    if (ds.treatment_type == TreatmentType::binary) ++(ds.d(i) == 1.0 ? h.treated : h.control)[b];
  }
  return h;
}

json histogram_json(const Dataset& ds, const Histogram& h) {
  json j{{"bins", static_cast<int>(h.all.size())}, {"edges", h.edges}};
  if (ds.treatment_type == TreatmentType::binary) {
    j["treated"] = h.treated;
    j["control"] = h.control;
  } else {
    j["all"] = h.all;
  }
  return j;
}

// ---- estimate ---------------------------------------------------------------

struct EstimateOptions {
  DataOptions data;
  std::string estimator = "linear";
  int grid = 50;
  int nbins = 3;
  std::vector<double> cutoffs;
  std::optional<double> bandwidth;
  std::string model_y = "lasso", model_t = "lasso";
  std::vector<std::string> param_y, param_t, grid_y, grid_t;
  std::string cv_grid;
  std::string tuning = "global";
  int k = 5;
  std::uint64_t seed = 0;
  std::string smoother = "bspline";
  int spline_df = 6;
  std::string span = "auto";
  std::string vartype = "sandwich";
  int nboots = -1;
  double level = 0.95;
  double clip = kDefaultClip;
  std::string signal = "aipw";
  bool no_expand = false, no_interactions = false;
  int basis_df = 6;
  int lasso_folds = 10;
  std::string out = ".";
};

SmootherSpec smoother_spec(const EstimateOptions& o) {
  SmootherSpec s;
  s.method = parse_smoother(o.smoother);
  s.df = o.spline_df;
  s.seed = o.seed;
  if (o.span != "auto") s.span = to_number(o.span, "--span");
  s.validate();
  return s;
}

LearnerSpec learner_spec(const std::string& kind, const std::vector<std::string>& params, std::uint64_t seed) {
  LearnerSpec s;
  s.kind = parse_learner_kind(kind);
  if (s.kind == LearnerKind::oracle) fail(ErrorCode::InvalidArgument, "oracle learners are not available here");
  s.params = param_map(params);
  s.seed = seed;
  s.validate();
  return s;
}

CmeCurve estimate_curve(const EstimateOptions& o, const Dataset& ds, json& extra) {
  require(o.grid >= 2, "--grid must be at least 2");
  const Eigen::VectorXd grid = default_grid(ds.x, o.grid);
  const std::string& e = o.estimator;
  const VarType vt = parse_vartype(o.vartype);
  if (e == "linear" || e == "kernel") {
    ClassicInference inf;
    inf.vartype = vt;
    inf.level = o.level;
    inf.seed = o.seed;
    if (o.nboots >= 0) inf.n_boot = o.nboots;
    extra["seeds"] = {{"bootstrap", o.seed}};
    if (e == "linear") return linear_cme(ds, grid, inf);
    KernelOptions ko;
    ko.h0 = o.bandwidth;
    ko.seed = o.seed;
    extra["seeds"]["kernel_cv"] = o.seed;
    return kernel_cme(ds, grid, ko, inf);
  }
  if (e == "binning") {
    const auto cutoffs = o.cutoffs.empty() ? equal_frequency_cutoffs(ds.x, o.nbins) : o.cutoffs;
    extra["cutoffs"] = cutoffs;
    return binning_curve(binning_cme(ds, cutoffs), o.level);
  }
  if (e == "dml") {
    const LearnerSpec y = learner_spec(o.model_y, o.param_y, o.seed);
    const LearnerSpec t = learner_spec(o.model_t, o.param_t, o.seed);
    DmlOptions opt;
    opt.clip = o.clip;
    opt.level = o.level;
    opt.seed = o.seed;
    opt.smoother = smoother_spec(o);
    opt.tuning = parse_tuning_mode(o.tuning);
    if (o.nboots >= 0) opt.n_multiplier = o.nboots;
    opt.y_grid = grid_from_items(o.grid_y);
    opt.t_grid = grid_from_items(o.grid_t);
    if (!o.cv_grid.empty()) {
      auto [gy, gt] = read_cv_grid(o.cv_grid);
      opt.y_grid.insert(opt.y_grid.end(), gy.begin(), gy.end());
      opt.t_grid.insert(opt.t_grid.end(), gt.begin(), gt.end());
    }
    json grids = json::object();
    for (const auto& [name, g] : {std::pair{"y", &opt.y_grid}, std::pair{"t", &opt.t_grid}})
      for (const auto& [key, vals] : *g) grids[name][key] = vals;
    extra["cv_grids"] = grids;
    extra["seeds"] = {{"folds", o.seed}, {"learners", o.seed}, {"multiplier", o.seed}};
    const FoldAssignment folds = assign_folds(ds, o.k, o.seed);
    DmlResult r = ds.treatment_type == TreatmentType::binary ? dml_binary_cme(ds, folds, y, t, grid, opt)
                                                             : dml_continuous_cme(ds, folds, y, t, grid, opt);
    json tuned = json::object();
    for (const auto& [name, spec] : {std::pair{"y", &r.y_spec}, std::pair{"t", &r.t_spec}})
      for (const auto& [key, v] : spec->params) tuned[name][key] = v;
    extra["tuned_params"] = tuned;
    return std::move(r.curve);
  }
  if (e == "aipw-lasso" || e == "po-lasso") {
    LassoCmeOptions lo;
    lo.expand = !o.no_expand;
    lo.interactions = !o.no_interactions;
    lo.spline_df = o.basis_df;
    lo.cv_folds = o.lasso_folds;
    lo.clip = o.clip;
    lo.smoother = smoother_spec(o);
    lo.level = o.level;
    lo.seed = o.seed;
    if (o.signal == "aipw")
      lo.signal = SignalKind::aipw;
    else if (o.signal == "ipw")
      lo.signal = SignalKind::ipw;
    else if (o.signal == "outcome")
      lo.signal = SignalKind::outcome;
    else
      fail(ErrorCode::InvalidArgument, "--signal must be aipw, ipw or outcome");
    if (vt == VarType::sandwich && o.nboots < 0)
      lo.n_boot = 0;
    else if (o.nboots >= 0)
      lo.n_boot = o.nboots;
    extra["seeds"] = {{"lasso_cv", o.seed}, {"bootstrap", o.seed}};
    return (e == "aipw-lasso" ? aipw_lasso_cme(ds, grid, lo) : po_lasso_cme(ds, grid, lo)).curve;
  }
  fail(ErrorCode::InvalidArgument, "unknown estimator '" + e + "'");
}

void write_curve_csv(const CmeCurve& c, std::ostream& out) {
  out << "grid,theta,se,ci_lo,ci_hi,uci_lo,uci_hi\n";
  for (int j = 0; j < c.size(); ++j)
    out << num(c.grid(j)) << ',' << num(c.theta(j)) << ',' << num(c.se(j)) << ',' << num(c.ci_lo(j)) << ','
        << num(c.ci_hi(j)) << ',' << num(c.uci_lo(j)) << ',' << num(c.uci_hi(j)) << '\n';
}

json plot_data(const CmeCurve& c, const Dataset& ds, double level) {
  json diag = json::object();
  for (const auto& [k, v] : c.diagnostics) diag[k] = finite_or_null(v);
  return json{{"schema", "cme.plotdata/1"},
              {"estimator", c.estimator_tag},
              {"level", level},
              {"moderator", ds.x_name},
              {"grid", vector_json(c.grid)},
              {"theta", vector_json(c.theta)},
              {"se", vector_json(c.se)},
              {"ci_lo", vector_json(c.ci_lo)},
              {"ci_hi", vector_json(c.ci_hi)},
              {"uci_lo", vector_json(c.uci_lo)},
              {"uci_hi", vector_json(c.uci_hi)},
              {"histogram", histogram_json(ds, moderator_histogram(ds, kHistogramBins))},
              {"flags", c.flags},
              {"diagnostics", diag}};
}

void run_estimate(const EstimateOptions& o, const CLI::App* sub) {
  const Loaded l = load(o.data);
  json extra;
  extra["data"] = data_summary(o.data, l);
  const CmeCurve curve = estimate_curve(o, l.data, extra);
  curve.validate();
  const fs::path dir(o.out);
  {
    auto out = open_out(dir / "curve.csv");
    write_curve_csv(curve, out);
  }
  {
    auto out = open_out(dir / "curve_plotdata.json");
    out << plot_data(curve, l.data, o.level).dump(2) << "\n";
  }
  extra["outputs"] = {"curve.csv", "curve_plotdata.json"};
  write_manifest(dir, "estimate", sub, extra);
}

// ---- simulate ---------------------------------------------------------------

struct SimulateOptions {
  std::string dgp = "dgp1";
  int n = 1000;
  std::uint64_t seed = 0;
  std::string out = "data.csv";
};

void run_simulate(const SimulateOptions& o, const CLI::App* sub) {
  const SimDraw s = generate(parse_dgp(o.dgp), o.n, o.seed);
  const fs::path path(o.out);
  {
    auto out = open_out(path);
    write_csv(s.data, out);
  }
  const Eigen::VectorXd grid = support_grid(s.oracle);
  Eigen::VectorXd theta(grid.size());
  for (Eigen::Index j = 0; j < grid.size(); ++j) theta(j) = s.oracle.theta(grid(j));
  json extra;
  extra["seeds"] = {{"generator", o.seed}};
  extra["truth"] = {{"grid", vector_json(grid)}, {"theta", vector_json(theta)}};
  extra["outputs"] = {path.filename().string()};
  write_manifest(path.parent_path(), "simulate", sub, extra);
}

// ---- bench ------------------------------------------------------------------

struct BenchOptions {
  std::vector<std::string> dgps{"dgp1"};
  std::vector<std::string> estimators{"dml"};
  std::vector<std::string> learners{"hgb"};
  std::vector<int> sizes{1000};
  std::vector<std::string> learner_params;
  int replicates = 1;
  std::uint64_t seed = 0;
  int k = 5;
  int grid = 50;
  int cell_threads = 1;
  bool inner_parallel = false;
  std::string out = "bench_results.csv";
};

// Fills bench options not given on the command line from an INI/TOML file.
void apply_matrix(CLI::App* bench, const std::string& path) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path);
  } catch (const CLI::FileError& e) {
    fail(ErrorCode::InvalidArgument, e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == "bench"))
      fail(ErrorCode::InvalidArgument, path + ": unexpected section for '" + item.name + "'");
    CLI::Option* opt = bench->get_option_no_throw("--" + item.name);
    if (!opt || item.name == "matrix") fail(ErrorCode::InvalidArgument, path + ": unknown key '" + item.name + "'");
    if (opt->count() > 0) continue;
    std::vector<std::string> values;
    for (const auto& v : item.inputs) {
      std::stringstream ss(v);
      std::string part;
      while (std::getline(ss, part, ',')) values.push_back(trim_space(part));
    }
    try {
      opt->add_result(values);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      fail(ErrorCode::InvalidArgument, path + ": " + item.name + ": " + e.what());
    }
  }
}

void run_bench_command(const BenchOptions& o, const CLI::App* sub) {
  BenchConfig cfg;
  cfg.dgps.clear();
  for (const auto& d : o.dgps) cfg.dgps.push_back(parse_dgp(d));
  cfg.estimators.clear();
  for (const auto& e : o.estimators) {
    std::string name = e;
    std::replace(name.begin(), name.end(), '-', '_');
    if (name != "linear" && name != "kernel" && name != "aipw_lasso" && name != "po_lasso" && name != "dml")
      fail(ErrorCode::InvalidArgument, "unknown bench estimator '" + e + "'");
    cfg.estimators.push_back(name);
  }
  cfg.learners.clear();
  for (const auto& l : o.learners) cfg.learners.push_back(parse_learner_kind(l));
  for (const auto& item : o.learner_params) {
    const auto [key, value] = split_assignment(item);
    const auto dot = key.find('.');
    if (dot == std::string::npos) fail(ErrorCode::InvalidArgument, "--learner-param expects learner.key=value");
    cfg.learner_params[parse_learner_kind(key.substr(0, dot))][key.substr(dot + 1)] = to_number(value, key);
  }
  cfg.sizes = o.sizes;
  for (int n : cfg.sizes) require(n >= 10, "bench sizes must be at least 10");
  cfg.replicates = o.replicates;
  cfg.seed = o.seed;
  cfg.folds = o.k;
  cfg.grid_points = o.grid;
  cfg.threads = o.cell_threads;
  cfg.inner_parallel = o.inner_parallel;
  const auto rows = run_bench(cfg);
  const fs::path path(o.out);
  {
    auto out = open_out(path);
    write_bench_csv(rows, out);
  }
  json seeds = json::array();
  for (int r = 0; r < cfg.replicates; ++r) {
    BenchCell c;
    c.replicate = r;
    seeds.push_back(bench_seed(cfg, c));
  }
  int failed = 0;
  for (const auto& r : rows) failed += !r.ok;
  json extra;
  extra["seeds"] = {{"master", o.seed}, {"replicates", seeds}};
  extra["cells"] = rows.size();
  extra["failed_cells"] = failed;
  extra["outputs"] = {path.filename().string()};
  write_manifest(path.parent_path(), "bench", sub, extra);
}

// ---- diagnose ---------------------------------------------------------------

struct DiagnoseOptions {
  DataOptions data;
  std::string model_t = "lasso";
  std::vector<std::string> param_t;
  int nbins = 3;
  std::uint64_t seed = 0;
  std::string out = ".";
};

json quantile_summary(const Eigen::VectorXd& v) {
  return json{{"min", v.minCoeff()},          {"q05", quantile(v, 0.05)}, {"q25", quantile(v, 0.25)},
              {"median", quantile(v, 0.5)},   {"q75", quantile(v, 0.75)}, {"q95", quantile(v, 0.95)},
              {"max", v.maxCoeff()},          {"mean", v.mean()}};
}

void run_diagnose(const DiagnoseOptions& o, const CLI::App* sub) {
  const Loaded l = load(o.data);
  const Dataset& ds = l.data;
  json report;
  report["schema"] = "cme.diagnose/1";
  report["n"] = ds.n();
  json warnings = json::array();
  const Histogram h = moderator_histogram(ds, kHistogramBins);
  report["histogram"] = histogram_json(ds, h);
  if (ds.treatment_type == TreatmentType::binary) {
    const int treated = static_cast<int>(ds.d.sum());
    report["treated"] = treated;
    report["control"] = ds.n() - treated;
    if (treated == 0) warnings.push_back("no treated rows: overlap fails everywhere");
    if (treated == ds.n()) warnings.push_back("no control rows: overlap fails everywhere");
    try {
      LearnerSpec spec = learner_spec(o.model_t, o.param_t, o.seed);
      spec.task = Task::classification;
      const Eigen::VectorXd pi = fit_learner(spec, covariates(ds), ds.d).predict(covariates(ds));
      int outside = 0;
      for (Eigen::Index i = 0; i < pi.size(); ++i) outside += pi(i) < 0.05 || pi(i) > 0.95;
      const double share = static_cast<double>(outside) / ds.n();
      report["propensity"] = {{"learner", o.model_t}, {"summary", quantile_summary(pi)}, {"share_outside_05_95", share}};
      if (share > 0.1) warnings.push_back("more than 10% of propensity scores lie outside [0.05, 0.95]");
    } catch (const Error& e) {
      report["propensity"] = nullptr;
      warnings.push_back(std::string("propensity not estimated: ") + e.what());
    }
  } else {
    report["propensity"] = nullptr;
  }
  const auto cutoffs = equal_frequency_cutoffs(ds.x, o.nbins);
  const BinningResult bins = bin_summary(ds, cutoffs);
  json per_bin = json::array();
  for (int b = 0; b < bins.nbins(); ++b) {
    per_bin.push_back({{"bin", b},
                       {"rows", bins.n_rows[b]},
                       {"treated", bins.n_treated[b]},
                       {"control", bins.n_control[b]},
                       {"treatment_variation", static_cast<bool>(bins.identified[b])}});
    if (!bins.identified[b]) warnings.push_back("bin " + std::to_string(b) + " has no treatment variation");
  }
  report["bins"] = {{"cutoffs", cutoffs}, {"cells", per_bin}};
  report["warnings"] = warnings;
  for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << "\n";
  const fs::path dir(o.out);
  {
    auto out = open_out(dir / "diagnose.json");
    out << report.dump(2) << "\n";
  }
  json extra;
  extra["data"] = data_summary(o.data, l);
  extra["seeds"] = {{"propensity", o.seed}};
  extra["outputs"] = {"diagnose.json"};
  write_manifest(dir, "diagnose", sub, extra);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Conditional marginal effect estimation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Configuration file; command-line flags take precedence");
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: hardware concurrency)");
  app.set_version_flag("--version", kVersion);

  EstimateOptions est;
  CLI::App* estimate = app.add_subcommand("estimate", "Estimate a CME curve from a CSV file");
  add_data_options(estimate, est.data);
  estimate->add_option("--estimator", est.estimator, "linear, binning, kernel, dml, aipw-lasso or po-lasso")
      ->capture_default_str();
  estimate->add_option("--grid", est.grid, "Number of evaluation points")->capture_default_str();
  estimate->add_option("--nbins", est.nbins, "Bins for the binning estimator")->capture_default_str();
  estimate->add_option("--cutoffs", est.cutoffs, "Explicit bin cutoffs")->delimiter(',');
  estimate->add_option("--bandwidth", est.bandwidth, "Kernel bandwidth (cross-validated when absent)");
  estimate->add_option("--model-y", est.model_y, "Outcome learner: lasso, rf or hgb")->capture_default_str();
  estimate->add_option("--model-t", est.model_t, "Treatment learner: lasso, rf or hgb")->capture_default_str();
  estimate->add_option("--param-y", est.param_y, "Outcome learner parameter key=value");
  estimate->add_option("--param-t", est.param_t, "Treatment learner parameter key=value");
  estimate->add_option("--grid-y", est.grid_y, "Outcome tuning grid key=v1,v2,...");
  estimate->add_option("--grid-t", est.grid_t, "Treatment tuning grid key=v1,v2,...");
  estimate->add_option("--cv-grid", est.cv_grid, "Tuning grid file with [y] and [t] sections");
  estimate->add_option("--tuning", est.tuning, "global or per_fold")->capture_default_str();
  estimate->add_option("--k", est.k, "Cross-fitting folds")->capture_default_str();
  estimate->add_option("--seed", est.seed, "Master seed")->capture_default_str();
  estimate->add_option("--smoother", est.smoother, "bspline or loess")->capture_default_str();
  estimate->add_option("--spline-df", est.spline_df, "Projection spline degrees of freedom")->capture_default_str();
  estimate->add_option("--span", est.span, "Loess span or auto")->capture_default_str();
  estimate->add_option("--vartype", est.vartype, "sandwich or bootstrap")->capture_default_str();
  estimate->add_option("--nboots", est.nboots, "Bootstrap or multiplier draws (-1: estimator default)")
      ->capture_default_str();
  estimate->add_option("--level", est.level, "Confidence level")->capture_default_str();
  estimate->add_option("--clip", est.clip, "Propensity clipping")->capture_default_str();
  estimate->add_option("--signal", est.signal, "aipw, ipw or outcome (aipw-lasso)")->capture_default_str();
  estimate->add_flag("--no-expand", est.no_expand, "Use raw covariates in the Lasso design");
  estimate->add_flag("--no-interactions", est.no_interactions, "Drop pairwise basis interactions");
  estimate->add_option("--basis-df", est.basis_df, "Covariate spline degrees of freedom")->capture_default_str();
  estimate->add_option("--lasso-folds", est.lasso_folds, "Lasso cross-validation folds")->capture_default_str();
  estimate->add_option("--out", est.out, "Output directory")->capture_default_str();

  SimulateOptions sim;
  CLI::App* simulate = app.add_subcommand("simulate", "Draw a sample from a built-in design");
  simulate->add_option("--dgp", sim.dgp, "Design id")->capture_default_str();
  simulate->add_option("--n", sim.n, "Sample size")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Seed")->capture_default_str();
  simulate->add_option("--out", sim.out, "Output CSV")->capture_default_str();

  BenchOptions bo;
  CLI::App* bench = app.add_subcommand("bench", "Run a simulation benchmark matrix");
  std::string matrix;
  bench->add_option("--matrix", matrix, "Benchmark matrix file of key = value lines");
  bench->add_option("--dgps", bo.dgps, "Design ids")->delimiter(',')->capture_default_str();
  bench->add_option("--estimators", bo.estimators, "linear, kernel, aipw_lasso, po_lasso, dml")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--learners", bo.learners, "DML learners")->delimiter(',')->capture_default_str();
  bench->add_option("--sizes", bo.sizes, "Sample sizes")->delimiter(',')->capture_default_str();
  bench->add_option("--learner-param", bo.learner_params, "learner.key=value");
  bench->add_option("--replicates", bo.replicates, "Replications per cell")->capture_default_str();
  bench->add_option("--seed", bo.seed, "Master seed")->capture_default_str();
  bench->add_option("--k", bo.k, "Cross-fitting folds")->capture_default_str();
  bench->add_option("--grid", bo.grid, "Evaluation points")->capture_default_str();
  bench->add_option("--cell-threads", bo.cell_threads, "Cells run concurrently")->capture_default_str();
  bench->add_flag("--inner-parallel", bo.inner_parallel, "Allow worker threads inside a cell");
  bench->add_option("--out", bo.out, "Results CSV")->capture_default_str();

  DiagnoseOptions dg;
  CLI::App* diagnose = app.add_subcommand("diagnose", "Overlap and treatment-variation report");
  add_data_options(diagnose, dg.data);
  diagnose->add_option("--model-t", dg.model_t, "Propensity learner")->capture_default_str();
  diagnose->add_option("--param-t", dg.param_t, "Propensity learner parameter key=value");
  diagnose->add_option("--nbins", dg.nbins, "Moderator bins for treatment-variation flags")->capture_default_str();
  diagnose->add_option("--seed", dg.seed, "Seed")->capture_default_str();
  diagnose->add_option("--out", dg.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(e.get_name(), "config", e.what(), field_of(e.what()));
    return 2;
  }

  try {
    if (threads < 0) fail(ErrorCode::InvalidArgument, "--threads must be non-negative");
    set_default_threads(threads);
    if (!matrix.empty()) apply_matrix(bench, matrix);
    if (estimate->parsed()) run_estimate(est, estimate);
    if (simulate->parsed()) run_simulate(sim, simulate);
    if (bench->parsed()) run_bench_command(bo, bench);
    if (diagnose->parsed()) run_diagnose(dg, diagnose);
  } catch (const Error& e) {
    report_error(to_string(e.code()), category_name(e.category()), e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    report_error("Internal", "numerical", e.what());
    return 4;
  }
  return 0;
}

}  // namespace cme::cli
