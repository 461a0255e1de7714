#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace costq {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define COSTQ_DEFINE_ERROR(Name)              \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

COSTQ_DEFINE_ERROR(InvalidPath);
COSTQ_DEFINE_ERROR(MissingBlock);
COSTQ_DEFINE_ERROR(DimMismatch);
COSTQ_DEFINE_ERROR(EmptyData);
COSTQ_DEFINE_ERROR(DegenerateDesign);
COSTQ_DEFINE_ERROR(LabelOutOfRange);
COSTQ_DEFINE_ERROR(InsufficientSupport);
COSTQ_DEFINE_ERROR(TooFewRecords);
COSTQ_DEFINE_ERROR(WrongStage);
COSTQ_DEFINE_ERROR(NoPositives);
COSTQ_DEFINE_ERROR(ConfigError);

/// Malformed input file; carries the 1-based data row when known.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& message, std::size_t row = 0)
      : Error(row == 0 ? message : "row " + std::to_string(row) + ": " + message),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

#undef COSTQ_DEFINE_ERROR

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Information states and acquisition paths
// ---------------------------------------------------------------------------

/// Which test blocks have been acquired. S1only/S2only hold exactly one test.
enum class InformationState : std::uint8_t { S0 = 0, S1only = 1, S2only = 2, S12 = 3 };

inline constexpr std::array<InformationState, 4> kAllStates = {
    InformationState::S0, InformationState::S1only, InformationState::S2only,
    InformationState::S12};

std::string_view to_string(InformationState s);
InformationState state_from_string(std::string_view name);

/// True when `block` (0, 1 or 2) is observed at `state`.
bool observes_block(InformationState state, int block);

/// Number of acquired tests (0, 1 or 2).
int tests_taken(InformationState state);

/// State reached after acquiring only test j (j in {1, 2}).
InformationState single_test_state(int j);

/// The other test: 1 -> 2, 2 -> 1.
inline constexpr int other_test(int j) noexcept { return 3 - j; }

/// Ordered pair (S1, S2) of acquired tests; 0 means stop.
struct AcquisitionPath {
  int s1 = 0;
  int s2 = 0;

  friend bool operator==(const AcquisitionPath&, const AcquisitionPath&) = default;
};

inline constexpr std::array<AcquisitionPath, 5> kValidPaths = {
    AcquisitionPath{0, 0}, AcquisitionPath{1, 0}, AcquisitionPath{2, 0},
    AcquisitionPath{1, 2}, AcquisitionPath{2, 1}};

bool is_valid_path(AcquisitionPath path) noexcept;

/// Throws InvalidPath for repeats such as (1,1) or resume-after-stop such as (0,1).
InformationState state_of_path(AcquisitionPath path);

std::string to_string(AcquisitionPath path);

/// Index of `path` in kValidPaths.
std::size_t path_index(AcquisitionPath path);

// ---------------------------------------------------------------------------
// Costs
// ---------------------------------------------------------------------------

/// Per-test acquisition costs on the loss scale. The baseline block is free.
class CostSchedule {
 public:
  CostSchedule() = default;
  CostSchedule(double c1, double c2);

  double c1() const noexcept { return c1_; }
  double c2() const noexcept { return c2_; }
  double test_cost(int j) const;
  double cumulative(InformationState s) const noexcept;
  CostSchedule scaled(double factor) const;

  /// The cheaper test; ties go to test 1.
  int cheaper_test() const noexcept { return c1_ <= c2_ ? 1 : 2; }

  friend bool operator==(const CostSchedule&, const CostSchedule&) = default;

 private:
  double c1_ = 0.0;
  double c2_ = 0.0;
};

// ---------------------------------------------------------------------------
// Records and datasets
// ---------------------------------------------------------------------------

enum class OutcomeKind : std::uint8_t { binary, continuous };

std::string_view to_string(OutcomeKind kind);

struct BlockDims {
  int p0 = 1;
  int p1 = 1;
  int p2 = 1;

  int of(int block) const;
  int at_state(InformationState s) const;
  friend bool operator==(const BlockDims&, const BlockDims&) = default;
};

/// One subject. Unacquired test blocks are empty optionals, never sentinels.
struct Record {
  Vector x0;
  std::optional<Vector> x1;
  std::optional<Vector> x2;
  double y = 0.0;
  AcquisitionPath path;

  const std::optional<Vector>& block(int j) const;
  bool fully_observed() const noexcept { return x1.has_value() && x2.has_value(); }
  InformationState state() const { return state_of_path(path); }
};

/// Concatenation (x0, x1, x2) restricted to the blocks observed at `state`.
/// Throws MissingBlock when the record lacks one of them.
Vector features_at_state(const Record& record, InformationState state);

/// Immutable, validated collection of records sharing dimensions and outcome kind.
class Dataset {
 public:
  Dataset(std::vector<Record> records, BlockDims dims, OutcomeKind outcome);

  std::size_t size() const noexcept { return records_.size(); }
  const Record& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<Record>& records() const noexcept { return records_; }
  const BlockDims& dims() const noexcept { return dims_; }
  OutcomeKind outcome() const noexcept { return outcome_; }
  bool fully_observed() const;

  /// Rows of `rows` stacked as the state-specific feature matrix.
  Matrix design(InformationState state, std::span<const std::size_t> rows) const;
  Vector outcomes(std::span<const std::size_t> rows) const;

  Dataset subset(std::span<const std::size_t> rows) const;

 private:
  std::vector<Record> records_;
  BlockDims dims_;
  OutcomeKind outcome_;
};

std::vector<std::size_t> all_rows(const Dataset& data);

}  // namespace costq
