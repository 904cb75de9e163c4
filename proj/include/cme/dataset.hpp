#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cme {

enum class TreatmentType { binary, continuous };
enum class OutcomeType { continuous, binary };

const char* to_string(TreatmentType t);
const char* to_string(OutcomeType t);
TreatmentType parse_treatment_type(const std::string& s);
OutcomeType parse_outcome_type(const std::string& s);

//! Observed (Y, D, X, Z). Immutable once validated.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::VectorXd d;
  Eigen::VectorXd x;
  Eigen::MatrixXd z;  // n x p, p may be 0
  TreatmentType treatment_type = TreatmentType::binary;
  OutcomeType outcome_type = OutcomeType::continuous;
  std::vector<std::int64_t> row_ids;

  std::string y_name = "Y";
  std::string d_name = "D";
  std::string x_name = "X";
  std::vector<std::string> z_names;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(z.cols()); }

  //! Throws InvariantViolation when the invariants do not hold.
  void validate() const;
};

//! Builds and validates a dataset; row ids default to 0..n-1.
Dataset make_dataset(Eigen::VectorXd y, Eigen::VectorXd d, Eigen::VectorXd x,
                     Eigen::MatrixXd z,
                     TreatmentType treatment = TreatmentType::binary,
                     OutcomeType outcome = OutcomeType::continuous);

//! V = [X, Z].
Eigen::MatrixXd covariates(const Dataset& ds);

//! Rows in the given order (duplicates allowed, e.g. for resampling).
Dataset subset(const Dataset& ds, const std::vector<int>& rows);

struct ColumnMap {
  std::string y, d, x;
  std::vector<std::string> z;
  TreatmentType treatment_type = TreatmentType::binary;
  OutcomeType outcome_type = OutcomeType::continuous;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // -1 when absent
};

//! RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF line ends.
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

struct IngestResult {
  Dataset data;
  int dropped = 0;
};

IngestResult ingest_csv(const std::string& path, const ColumnMap& map, bool na_rm);
IngestResult ingest_table(const CsvTable& table, const ColumnMap& map, bool na_rm);

//! Writes Y, D, X, Z columns with round-trip precision.
void write_csv(const Dataset& ds, std::ostream& out);
void write_csv(const Dataset& ds, const std::string& path);

struct FoldAssignment {
  int k = 0;
  std::vector<int> fold_of;
  std::uint64_t seed = 0;

  //! Rows belonging to the fold (its evaluation set).
  std::vector<int> rows_in(int fold) const;
  //! Rows outside the fold (its training set).
  std::vector<int> rows_out(int fold) const;
  std::vector<int> train_rows(int fold) const { return rows_out(fold); }
  std::vector<int> test_rows(int fold) const { return rows_in(fold); }
};

//! Seeded shuffle followed by round-robin dealing.
FoldAssignment assign_folds(int n, int k, std::uint64_t seed);
FoldAssignment assign_folds(const Dataset& ds, int k, std::uint64_t seed);
//! Degenerate single "fold": training and evaluation rows are the full sample.
FoldAssignment full_sample_folds(int n);

enum class TrimMode { moderator_quantile, propensity_quantile };

struct TrimSpec {
  TrimMode mode = TrimMode::moderator_quantile;
  double lower_q = 0.0;
  double upper_q = 1.0;
};

//! Quantile bounds of the trim variable.
std::pair<double, double> trim_bounds(const Eigen::VectorXd& values, const TrimSpec& spec);
//! Indices of rows whose value lies inside [lo, hi].
std::vector<int> rows_within(const Eigen::VectorXd& values, double lo, double hi);

Dataset trim(const Dataset& ds, const TrimSpec& spec,
             const std::optional<Eigen::VectorXd>& propensity = std::nullopt);

}  // namespace cme
