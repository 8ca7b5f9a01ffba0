#pragma once

// Plain CSV in and out. Numbers are written with 10 significant digits so that
// output files are byte-stable across runs and platforms.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "flrboot/errors.hpp"
#include "flrboot/hilbert.hpp"

namespace flrboot {

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Accepts what format_number writes, including inf and nan.
inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s == "inf" || s == "+inf" || s == "Inf") {
    out = INFINITY;
    return true;
  }
  if (s == "-inf" || s == "-Inf") {
    out = -INFINITY;
    return true;
  }
  if (s == "nan" || s == "NaN") {
    out = NAN;
    return true;
  }
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Rectangular numeric table. Blank lines are skipped; row and column numbers in
// errors refer to the file.
inline Matrix read_numeric_csv(std::istream& in, bool header = false, const std::string& name = "input") {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  bool skipped_header = !header;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    const auto cells = split_csv_line(line);
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_double(cells[c], row[c]))
        throw ParseError(name + ": non-numeric cell '" + cells[c] + "'", lineno, c + 1);
    }
    if (rows.empty())
      width = row.size();
    else if (row.size() != width)
      throw ParseError(name + ": expected " + std::to_string(width) + " columns, found " + std::to_string(row.size()),
                       lineno, 0);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(name + ": no data rows");
  Matrix M(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < width; ++c) M(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return M;
}

inline Matrix read_numeric_csv(const std::string& path, bool header = false) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read_numeric_csv(in, header, path);
}

// A single column or a single row, flattened.
inline Vector read_vector_csv(const std::string& path, bool header = false) {
  const Matrix M = read_numeric_csv(path, header);
  if (M.cols() != 1 && M.rows() != 1) throw ParseError(path + ": expected a single row or column of numbers");
  return M.cols() == 1 ? Vector(M.col(0)) : Vector(M.row(0).transpose());
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

inline void write_matrix_csv(std::ostream& out, const Matrix& M, const std::vector<std::string>& header = {}) {
  if (!header.empty()) write_csv_row(out, header);
  for (Index r = 0; r < M.rows(); ++r) {
    std::vector<std::string> cells;
    for (Index c = 0; c < M.cols(); ++c) cells.push_back(format_number(M(r, c)));
    write_csv_row(out, cells);
  }
}

}  // namespace flrboot
