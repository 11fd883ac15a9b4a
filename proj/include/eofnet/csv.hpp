#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eofnet/types.hpp"

namespace eofnet::csv {

/// One parsed CSV record with the 1-based line number it came from.
struct Row {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

/// Reads a comma-separated file. The first non-empty line is returned as the
/// header; blank lines are skipped. Double-quoted fields may contain commas.
struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column position of `name` in the header, if present.
  std::optional<std::size_t> column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
std::vector<std::string> split_line(std::string_view line);

/// Strict numeric parse of a whole field; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

/// Shortest representation that round-trips to the same double.
std::string format_double(double value);

/// Headerless numeric matrix, one row per line.
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

}  // namespace eofnet::csv
