#pragma once

// Delimited-text helpers shared by every file format in the project.
// Numbers are written in shortest round-trip form so that save/load
// cycles reproduce doubles bit-for-bit.

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace khm::io {

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// Parse a full cell as a double; throws ValidationError naming `where`.
double parse_double(std::string_view cell, std::string_view where);

/// Split one line on commas, tabs, semicolons or runs of spaces.
std::vector<std::string> split_cells(std::string_view line);

struct Table {
  std::vector<std::string> header;  // empty when read without header
  std::vector<std::vector<std::string>> rows;
};

/// Read a delimited file; blank lines and lines starting with '#' are skipped.
Table read_table(const std::filesystem::path& path, bool has_header);

/// Numeric matrix from a header-less delimited file (rows x cols as stored).
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

/// Convert table rows into a numeric matrix; all rows must have equal width.
Eigen::MatrixXd to_matrix(const Table& table, const std::filesystem::path& path);

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);

/// Write `contents` to a sibling temp file and rename it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace khm::io
