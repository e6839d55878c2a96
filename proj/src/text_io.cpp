#include "khm/text_io.hpp"

#include "khm/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace khm::io {

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view cell, std::string_view where) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
    cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw ValidationError("non-numeric cell '" + std::string(cell) + "' at " + std::string(where));
  }
  return value;
}

std::vector<std::string> split_cells(std::string_view line) {
  std::vector<std::string> cells;
  const bool structured = line.find_first_of(",;\t") != std::string_view::npos;
  std::string current;
  bool in_cell = false;
  for (char ch : line) {
    if (ch == '\r' || ch == '\n') continue;
    const bool sep = structured ? (ch == ',' || ch == ';' || ch == '\t') : (ch == ' ');
    if (sep) {
      if (structured || in_cell) cells.push_back(current);
      current.clear();
      in_cell = false;
    } else {
      if (!structured && ch == ' ') continue;
      current.push_back(ch);
      in_cell = true;
    }
  }
  if (structured || in_cell) cells.push_back(current);
  for (auto& c : cells) {
    auto b = c.find_first_not_of(' ');
    auto e = c.find_last_not_of(' ');
    c = (b == std::string::npos) ? std::string() : c.substr(b, e - b + 1);
  }
  return cells;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Table read_table(const std::filesystem::path& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  Table table;
  std::string line;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    auto cells = split_cells(line);
    if (header_pending) {
      table.header = std::move(cells);
      header_pending = false;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  return table;
}

Eigen::MatrixXd to_matrix(const Table& table, const std::filesystem::path& path) {
  const auto rows = static_cast<Eigen::Index>(table.rows.size());
  if (rows == 0) throw ValidationError("no data rows in " + path.string());
  const auto cols = static_cast<Eigen::Index>(table.rows.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = table.rows[static_cast<size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw ValidationError(path.string() + ": row " + std::to_string(i + 1) + " has " +
                            std::to_string(row.size()) + " cells, expected " +
                            std::to_string(cols));
    }
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = parse_double(row[static_cast<size_t>(j)],
                             path.string() + " row " + std::to_string(i + 1) + " column " +
                                 std::to_string(j + 1));
    }
  }
  return m;
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  return to_matrix(read_table(path, false), path);
}

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out.push_back(',');
      out += format_double(m(i, j));
    }
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace khm::io
