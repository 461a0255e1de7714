#pragma once

#include "costq/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>

namespace costq {

// CSV layout: x0_1..x0_p0, x1_1..x1_p1, x2_1..x2_p2, y, s1, s2.
// Unacquired blocks are empty fields. Doubles are written with 17 significant digits.

void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// Parses and validates a dataset. When `outcome` is not given it is binary iff every
/// y is 0 or 1. Violations raise SchemaError naming the 1-based data row.
Dataset read_dataset_csv(std::istream& in, std::optional<OutcomeKind> outcome = std::nullopt);
Dataset read_dataset_csv(const std::filesystem::path& path,
                         std::optional<OutcomeKind> outcome = std::nullopt);

/// Formats a double so that parsing it back yields the same value.
std::string format_double(double v);

}  // namespace costq
