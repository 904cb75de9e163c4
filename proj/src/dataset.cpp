#include "cme/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cme/errors.hpp"
#include "cme/rng.hpp"
#include "cme/stats.hpp"

namespace cme {

const char* to_string(TreatmentType t) {
  return t == TreatmentType::binary ? "binary" : "continuous";
}

const char* to_string(OutcomeType t) {
  return t == OutcomeType::binary ? "binary" : "continuous";
}

TreatmentType parse_treatment_type(const std::string& s) {
  if (s == "binary" || s == "discrete") return TreatmentType::binary;
  if (s == "continuous") return TreatmentType::continuous;
  fail(ErrorCode::InvalidArgument, "unknown treatment type '" + s + "'");
}

OutcomeType parse_outcome_type(const std::string& s) {
  if (s == "binary" || s == "discrete") return OutcomeType::binary;
  if (s == "continuous") return OutcomeType::continuous;
  fail(ErrorCode::InvalidArgument, "unknown outcome type '" + s + "'");
}

namespace {

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

bool is_zero_one(const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) != 0.0 && v(i) != 1.0) return false;
  return true;
}

}  // namespace

void Dataset::validate() const {
  const auto n = y.size();
  if (n < 1) fail(ErrorCode::InvariantViolation, "dataset has no rows");
  if (d.size() != n || x.size() != n || z.rows() != n)
    fail(ErrorCode::InvariantViolation, "columns differ in length");
  if (!all_finite(y) || !all_finite(d) || !all_finite(x) || !all_finite(z))
    fail(ErrorCode::InvariantViolation, "non-finite values present");
  if (treatment_type == TreatmentType::binary && !is_zero_one(d))
    fail(ErrorCode::InvariantViolation, "binary treatment must take values in {0,1}");
  if (outcome_type == OutcomeType::binary && !is_zero_one(y))
    fail(ErrorCode::InvariantViolation, "binary outcome must take values in {0,1}");
  if (static_cast<Eigen::Index>(row_ids.size()) != n)
    fail(ErrorCode::InvariantViolation, "row_ids length differs from n");
  if (!z_names.empty() && static_cast<Eigen::Index>(z_names.size()) != z.cols())
    fail(ErrorCode::InvariantViolation, "z_names length differs from z columns");
}

Dataset make_dataset(Eigen::VectorXd y, Eigen::VectorXd d, Eigen::VectorXd x,
                     Eigen::MatrixXd z, TreatmentType treatment, OutcomeType outcome) {
  Dataset ds;
  ds.y = std::move(y);
  ds.d = std::move(d);
  ds.x = std::move(x);
  ds.z = std::move(z);
  if (ds.z.cols() == 0) ds.z.resize(ds.y.size(), 0);
  ds.treatment_type = treatment;
  ds.outcome_type = outcome;
  ds.row_ids.resize(ds.y.size());
  for (std::size_t i = 0; i < ds.row_ids.size(); ++i) ds.row_ids[i] = static_cast<std::int64_t>(i);
  for (Eigen::Index j = 0; j < ds.z.cols(); ++j) ds.z_names.push_back("Z" + std::to_string(j + 1));
  ds.validate();
  return ds;
}

Eigen::MatrixXd covariates(const Dataset& ds) {
  Eigen::MatrixXd v(ds.n(), 1 + ds.p());
  v.col(0) = ds.x;
  if (ds.p() > 0) v.rightCols(ds.p()) = ds.z;
  return v;
}

Dataset subset(const Dataset& ds, const std::vector<int>& rows) {
  Dataset out;
  const int m = static_cast<int>(rows.size());
  out.y.resize(m);
  out.d.resize(m);
  out.x.resize(m);
  out.z.resize(m, ds.p());
  out.row_ids.resize(m);
  for (int i = 0; i < m; ++i) {
    const int r = rows[i];
    out.y(i) = ds.y(r);
    out.d(i) = ds.d(r);
    out.x(i) = ds.x(r);
    if (ds.p() > 0) out.z.row(i) = ds.z.row(r);
    out.row_ids[i] = ds.row_ids[r];
  }
  out.treatment_type = ds.treatment_type;
  out.outcome_type = ds.outcome_type;
  out.y_name = ds.y_name;
  out.d_name = ds.d_name;
  out.x_name = ds.x_name;
  out.z_names = ds.z_names;
  return out;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<int>(j);
  return -1;
}

CsvTable read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  int line = 1;
  char c;
  auto end_field = [&] {
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(record);
    record.clear();
  };
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      if (field_started && !field.empty())
        fail(ErrorCode::ParseError, "stray quote on line " + std::to_string(line));
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      end_record();
      ++line;
    } else if (c == '\n') {
      end_record();
      ++line;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) fail(ErrorCode::ParseError, "unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();
  if (records.empty()) fail(ErrorCode::ParseError, "missing header row");

  CsvTable table;
  table.header = records.front();
  if (!table.header.empty() && table.header[0].rfind("\xEF\xBB\xBF", 0) == 0)
    table.header[0].erase(0, 3);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size())
      fail(ErrorCode::ParseError, "record " + std::to_string(r) + " has " +
                                      std::to_string(records[r].size()) + " fields, header has " +
                                      std::to_string(table.header.size()));
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ParseError, "cannot open '" + path + "'");
  return read_csv(in);
}

namespace {

bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "NULL" || s == "null";
}

// Returns false for missing or non-finite values; throws on malformed text.
bool parse_number(const std::string& raw, double& out, const std::string& column, std::size_t row) {
  std::size_t b = 0, e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  const std::string s = raw.substr(b, e - b);
  if (is_missing_token(s)) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto res = std::from_chars(first, s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    fail(ErrorCode::ParseError, "column '" + column + "' row " + std::to_string(row + 1) +
                                    ": cannot parse '" + raw + "'");
  return std::isfinite(out);
}

}  // namespace

IngestResult ingest_table(const CsvTable& table, const ColumnMap& map, bool na_rm) {
  std::vector<std::string> names = {map.y, map.d, map.x};
  names.insert(names.end(), map.z.begin(), map.z.end());
  std::vector<int> cols;
  for (const auto& name : names) {
    const int c = table.column(name);
    if (name.empty() || c < 0) fail(ErrorCode::MissingColumn, "column '" + name + "' not found");
    cols.push_back(c);
  }
  const std::size_t width = names.size();
  std::vector<std::vector<double>> kept;
  std::vector<std::int64_t> ids;
  int dropped = 0;
  std::vector<double> row(width);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    bool complete = true;
    for (std::size_t j = 0; j < width; ++j)
      if (!parse_number(table.rows[r][cols[j]], row[j], names[j], r)) complete = false;
    if (!complete) {
      if (!na_rm)
        fail(ErrorCode::ParseError,
             "missing or non-finite value in row " + std::to_string(r + 1) + " (set na_rm)");
      ++dropped;
      continue;
    }
    kept.push_back(row);
    ids.push_back(static_cast<std::int64_t>(r));
  }
  if (kept.empty()) fail(ErrorCode::EmptyAfterDrop, "no complete rows");

  const int n = static_cast<int>(kept.size());
  const int p = static_cast<int>(map.z.size());
  Dataset ds;
  ds.y.resize(n);
  ds.d.resize(n);
  ds.x.resize(n);
  ds.z.resize(n, p);
  for (int i = 0; i < n; ++i) {
    ds.y(i) = kept[i][0];
    ds.d(i) = kept[i][1];
    ds.x(i) = kept[i][2];
    for (int j = 0; j < p; ++j) ds.z(i, j) = kept[i][3 + j];
  }
  ds.row_ids = std::move(ids);
  ds.treatment_type = map.treatment_type;
  ds.outcome_type = map.outcome_type;
  ds.y_name = map.y;
  ds.d_name = map.d;
  ds.x_name = map.x;
  ds.z_names = map.z;
  ds.validate();
  return {std::move(ds), dropped};
}

IngestResult ingest_csv(const std::string& path, const ColumnMap& map, bool na_rm) {
  return ingest_table(read_csv_file(path), map, na_rm);
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void put_number(std::ostream& out, double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.write(buf, res.ptr - buf);
}

}  // namespace

void write_csv(const Dataset& ds, std::ostream& out) {
  out << csv_escape(ds.y_name) << ',' << csv_escape(ds.d_name) << ',' << csv_escape(ds.x_name);
  for (int j = 0; j < ds.p(); ++j)
    out << ',' << csv_escape(j < static_cast<int>(ds.z_names.size()) ? ds.z_names[j]
                                                                     : "Z" + std::to_string(j + 1));
  out << '\n';
  for (int i = 0; i < ds.n(); ++i) {
    put_number(out, ds.y(i));
    out << ',';
    put_number(out, ds.d(i));
    out << ',';
    put_number(out, ds.x(i));
    for (int j = 0; j < ds.p(); ++j) {
      out << ',';
      put_number(out, ds.z(i, j));
    }
    out << '\n';
  }
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  write_csv(ds, out);
}

std::vector<int> FoldAssignment::rows_in(int fold) const {
  std::vector<int> rows;
  if (k == 1) {
    for (std::size_t i = 0; i < fold_of.size(); ++i) rows.push_back(static_cast<int>(i));
    return rows;
  }
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) rows.push_back(static_cast<int>(i));
  return rows;
}

std::vector<int> FoldAssignment::rows_out(int fold) const {
  std::vector<int> rows;
  if (k == 1) return rows_in(fold);
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) rows.push_back(static_cast<int>(i));
  return rows;
}

FoldAssignment assign_folds(int n, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::InvalidArgument, "need at least 2 folds");
  if (k > n) fail(ErrorCode::KTooLarge, std::to_string(k) + " folds for " + std::to_string(n) + " rows");
  Rng rng(seed);
  const auto order = permutation(n, rng);
  FoldAssignment f;
  f.k = k;
  f.seed = seed;
  f.fold_of.assign(n, 0);
  for (int pos = 0; pos < n; ++pos) f.fold_of[order[pos]] = pos % k;
  return f;
}

FoldAssignment assign_folds(const Dataset& ds, int k, std::uint64_t seed) {
  return assign_folds(ds.n(), k, seed);
}

FoldAssignment full_sample_folds(int n) {
  FoldAssignment f;
  f.k = 1;
  f.fold_of.assign(n, 0);
  return f;
}

std::pair<double, double> trim_bounds(const Eigen::VectorXd& values, const TrimSpec& spec) {
  require(0.0 <= spec.lower_q && spec.lower_q < spec.upper_q && spec.upper_q <= 1.0,
          "trim quantiles must satisfy 0 <= lower < upper <= 1");
  std::vector<double> v(values.data(), values.data() + values.size());
  const auto q = quantiles(std::move(v), {spec.lower_q, spec.upper_q});
  return {q[0], q[1]};
}

std::vector<int> rows_within(const Eigen::VectorXd& values, double lo, double hi) {
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (values(i) >= lo && values(i) <= hi) rows.push_back(static_cast<int>(i));
  return rows;
}

Dataset trim(const Dataset& ds, const TrimSpec& spec, const std::optional<Eigen::VectorXd>& propensity) {
  const Eigen::VectorXd* values = &ds.x;
  if (spec.mode == TrimMode::propensity_quantile) {
    require(propensity.has_value(), "propensity trimming needs a propensity vector");
    require(propensity->size() == ds.n(), "propensity length differs from n");
    require((propensity->array() > 0.0).all() && (propensity->array() < 1.0).all(),
            "propensity values must lie in (0, 1)");
    values = &*propensity;
  }
  const auto [lo, hi] = trim_bounds(*values, spec);
  const auto rows = rows_within(*values, lo, hi);
  if (rows.empty()) fail(ErrorCode::EmptyAfterTrim, "no rows inside trim bounds");
  Dataset out = subset(ds, rows);
  out.validate();
  return out;
}

}  // namespace cme
