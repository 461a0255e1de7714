#include "costq/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace costq {

std::string_view to_string(InformationState s) {
  switch (s) {
    case InformationState::S0: return "S0";
    case InformationState::S1only: return "S1only";
    case InformationState::S2only: return "S2only";
    case InformationState::S12: return "S12";
  }
  return "?";
}

InformationState state_from_string(std::string_view name) {
  for (auto s : kAllStates) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown information state '" + std::string(name) + "'");
}

bool observes_block(InformationState state, int block) {
  switch (block) {
    case 0: return true;
    case 1: return state == InformationState::S1only || state == InformationState::S12;
    case 2: return state == InformationState::S2only || state == InformationState::S12;
    default: throw std::out_of_range("block index must be 0, 1 or 2");
  }
}

int tests_taken(InformationState state) {
  switch (state) {
    case InformationState::S0: return 0;
    case InformationState::S1only:
    case InformationState::S2only: return 1;
    case InformationState::S12: return 2;
  }
  return 0;
}

InformationState single_test_state(int j) {
  if (j == 1) return InformationState::S1only;
  if (j == 2) return InformationState::S2only;
  throw std::out_of_range("test index must be 1 or 2");
}

bool is_valid_path(AcquisitionPath path) noexcept {
  return std::find(kValidPaths.begin(), kValidPaths.end(), path) != kValidPaths.end();
}

InformationState state_of_path(AcquisitionPath path) {
  if (path.s1 < 0 || path.s1 > 2 || path.s2 < 0 || path.s2 > 2) {
    throw InvalidPath("path " + to_string(path) + ": actions must lie in {0,1,2}");
  }
  if (path.s1 == 0) {
    if (path.s2 != 0) throw InvalidPath("path " + to_string(path) + ": testing resumed after stop");
    return InformationState::S0;
  }
  if (path.s2 == 0) return single_test_state(path.s1);
  if (path.s2 == path.s1) throw InvalidPath("path " + to_string(path) + ": test repeated");
  return InformationState::S12;
}

std::string to_string(AcquisitionPath path) {
  return "(" + std::to_string(path.s1) + "," + std::to_string(path.s2) + ")";
}

std::size_t path_index(AcquisitionPath path) {
  auto it = std::find(kValidPaths.begin(), kValidPaths.end(), path);
  if (it == kValidPaths.end()) throw InvalidPath("path " + to_string(path) + " is not admissible");
  return static_cast<std::size_t>(it - kValidPaths.begin());
}

CostSchedule::CostSchedule(double c1, double c2) : c1_(c1), c2_(c2) {
  if (!(c1 >= 0.0) || !(c2 >= 0.0) || !std::isfinite(c1) || !std::isfinite(c2)) {
    throw ConfigError("test costs must be finite and nonnegative");
  }
}

double CostSchedule::test_cost(int j) const {
  if (j == 1) return c1_;
  if (j == 2) return c2_;
  throw std::out_of_range("test index must be 1 or 2");
}

double CostSchedule::cumulative(InformationState s) const noexcept {
  switch (s) {
    case InformationState::S0: return 0.0;
    case InformationState::S1only: return c1_;
    case InformationState::S2only: return c2_;
    case InformationState::S12: return c1_ + c2_;
  }
  return 0.0;
}

CostSchedule CostSchedule::scaled(double factor) const {
  return CostSchedule(c1_ * factor, c2_ * factor);
}

std::string_view to_string(OutcomeKind kind) {
  return kind == OutcomeKind::binary ? "binary" : "continuous";
}

int BlockDims::of(int block) const {
  switch (block) {
    case 0: return p0;
    case 1: return p1;
    case 2: return p2;
    default: throw std::out_of_range("block index must be 0, 1 or 2");
  }
}

int BlockDims::at_state(InformationState s) const {
  int d = p0;
  if (observes_block(s, 1)) d += p1;
  if (observes_block(s, 2)) d += p2;
  return d;
}

const std::optional<Vector>& Record::block(int j) const {
  if (j == 1) return x1;
  if (j == 2) return x2;
  throw std::out_of_range("test block index must be 1 or 2");
}

Vector features_at_state(const Record& record, InformationState state) {
  Eigen::Index dim = record.x0.size();
  for (int j : {1, 2}) {
    if (!observes_block(state, j)) continue;
    if (!record.block(j)) {
      throw MissingBlock("state " + std::string(to_string(state)) + " requires block x" +
                         std::to_string(j) + " which is not observed");
    }
    dim += record.block(j)->size();
  }
  Vector out(dim);
  Eigen::Index at = 0;
  out.segment(at, record.x0.size()) = record.x0;
  at += record.x0.size();
  for (int j : {1, 2}) {
    if (!observes_block(state, j)) continue;
    const Vector& b = *record.block(j);
    out.segment(at, b.size()) = b;
    at += b.size();
  }
  return out;
}

Dataset::Dataset(std::vector<Record> records, BlockDims dims, OutcomeKind outcome)
    : records_(std::move(records)), dims_(dims), outcome_(outcome) {
  if (records_.empty()) throw EmptyData("dataset has no records");
  if (dims_.p0 < 1 || dims_.p1 < 1 || dims_.p2 < 1) throw DimMismatch("block dimensions must be >= 1");
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const Record& r = records_[i];
    const std::size_t row = i + 1;
    if (r.x0.size() != dims_.p0) throw SchemaError("x0 has wrong dimension", row);
    if (!is_valid_path(r.path)) throw SchemaError("invalid acquisition path " + to_string(r.path), row);
    const InformationState s = state_of_path(r.path);
    for (int j : {1, 2}) {
      const bool visited = observes_block(s, j);
      const auto& b = r.block(j);
      if (visited != b.has_value()) {
        throw SchemaError("block x" + std::to_string(j) +
                              (visited ? " missing although the path visits test "
                                       : " present although the path never visits test ") +
                              std::to_string(j),
                          row);
      }
      if (b && b->size() != dims_.of(j)) {
        throw SchemaError("x" + std::to_string(j) + " has wrong dimension", row);
      }
    }
    if (!std::isfinite(r.y)) throw SchemaError("outcome is not finite", row);
    if (outcome_ == OutcomeKind::binary && r.y != 0.0 && r.y != 1.0) {
      throw SchemaError("binary outcome must be 0 or 1", row);
    }
  }
}

bool Dataset::fully_observed() const {
  return std::all_of(records_.begin(), records_.end(),
                     [](const Record& r) { return r.fully_observed(); });
}

Matrix Dataset::design(InformationState state, std::span<const std::size_t> rows) const {
  Matrix X(static_cast<Eigen::Index>(rows.size()), dims_.at_state(state));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    X.row(static_cast<Eigen::Index>(k)) = features_at_state(records_.at(rows[k]), state).transpose();
  }
  return X;
}

Vector Dataset::outcomes(std::span<const std::size_t> rows) const {
  Vector y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) y[static_cast<Eigen::Index>(k)] = records_.at(rows[k]).y;
  return y;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  std::vector<Record> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) out.push_back(records_.at(i));
  return Dataset(std::move(out), dims_, outcome_);
}

std::vector<std::size_t> all_rows(const Dataset& data) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace costq
