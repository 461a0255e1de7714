#include "costq/dataset_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace costq {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, std::size_t row, const std::string& column) {
  const std::string f = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
    throw SchemaError("column " + column + ": '" + f + "' is not a finite number", row);
  }
  return v;
}

int parse_action(const std::string& field, std::size_t row, const std::string& column) {
  const std::string f = trim(field);
  int v = -1;
  const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
    throw SchemaError("column " + column + ": '" + f + "' is not an integer", row);
  }
  if (v < 0 || v > 2) throw SchemaError("column " + column + " must be 0, 1 or 2, got " + f, row);
  return v;
}

// Counts leading header columns named <prefix>1, <prefix>2, ... starting at `at`.
int count_block(const std::vector<std::string>& header, std::size_t at, const std::string& prefix) {
  int k = 0;
  while (at + k < header.size() && trim(header[at + k]) == prefix + std::to_string(k + 1)) ++k;
  return k;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  const BlockDims& d = data.dims();
  std::string header;
  for (int b = 0; b < 3; ++b) {
    for (int k = 1; k <= d.of(b); ++k) {
      header += "x" + std::to_string(b) + "_" + std::to_string(k) + ",";
    }
  }
  out << header << "y,s1,s2\n";
  for (const Record& r : data.records()) {
    std::string line;
    auto put_block = [&](const std::optional<Vector>& block, int dim) {
      for (int k = 0; k < dim; ++k) {
        if (block) line += format_double((*block)[k]);
        line += ',';
      }
    };
    put_block(r.x0, d.p0);
    put_block(r.x1, d.p1);
    put_block(r.x2, d.p2);
    line += format_double(r.y) + "," + std::to_string(r.path.s1) + "," + std::to_string(r.path.s2);
    out << line << '\n';
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_dataset_csv(out, data);
}

Dataset read_dataset_csv(std::istream& in, std::optional<OutcomeKind> outcome) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file: missing header");
  const std::vector<std::string> header = split_fields(line);
  BlockDims dims;
  std::size_t at = 0;
  dims.p0 = count_block(header, at, "x0_");
  at += dims.p0;
  dims.p1 = count_block(header, at, "x1_");
  at += dims.p1;
  dims.p2 = count_block(header, at, "x2_");
  at += dims.p2;
  if (dims.p0 < 1 || dims.p1 < 1 || dims.p2 < 1 || header.size() != at + 3 ||
      trim(header[at]) != "y" || trim(header[at + 1]) != "s1" || trim(header[at + 2]) != "s2") {
    throw SchemaError("header must be x0_1..x0_p0,x1_1..x1_p1,x2_1..x2_p2,y,s1,s2");
  }

  std::vector<Record> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != header.size()) {
      throw SchemaError("expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(f.size()),
                        row);
    }
    Record r;
    std::size_t col = 0;
    auto read_block = [&](int b, int dim) -> std::optional<Vector> {
      int empty = 0;
      for (int k = 0; k < dim; ++k) empty += trim(f[col + k]).empty() ? 1 : 0;
      if (empty == dim && b != 0) {
        col += dim;
        return std::nullopt;
      }
      if (empty != 0) throw SchemaError("block x" + std::to_string(b) + " is partially empty", row);
      Vector v(dim);
      for (int k = 0; k < dim; ++k) {
        v[k] = parse_number(f[col + k], row, trim(header[col + k]));
      }
      col += dim;
      return v;
    };
    r.x0 = *read_block(0, dims.p0);
    r.x1 = read_block(1, dims.p1);
    r.x2 = read_block(2, dims.p2);
    r.y = parse_number(f[col], row, "y");
    r.path.s1 = parse_action(f[col + 1], row, "s1");
    r.path.s2 = parse_action(f[col + 2], row, "s2");
    if (!is_valid_path(r.path)) {
      throw SchemaError("invalid acquisition path " + to_string(r.path), row);
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw SchemaError("file has a header but no records");

  OutcomeKind kind = OutcomeKind::binary;
  if (outcome) {
    kind = *outcome;
  } else {
    for (const Record& r : records) {
      if (r.y != 0.0 && r.y != 1.0) {
        kind = OutcomeKind::continuous;
        break;
      }
    }
  }
  return Dataset(std::move(records), dims, kind);
}

Dataset read_dataset_csv(const std::filesystem::path& path, std::optional<OutcomeKind> outcome) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_dataset_csv(in, outcome);
}

}  // namespace costq
