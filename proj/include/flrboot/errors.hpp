#pragma once

#include <cstddef>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>

namespace flrboot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Curves or operators defined on different grids, or length mismatches.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A truncation level outside [1, rank] or a degenerate retained eigenvalue.
class TruncationError : public Error {
 public:
  explicit TruncationError(const std::string& what, std::size_t max_admissible = 0)
      : Error(what), max_admissible_(max_admissible) {}
  std::size_t max_admissible() const noexcept { return max_admissible_; }

 private:
  std::size_t max_admissible_;
};

class InvalidOperatorError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Numerical failure of a whole procedure, e.g. every bootstrap replicate degenerate.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; row and column are 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0, std::size_t col = 0)
      : Error(format(what, row, col)), row_(row), col_(col) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  static std::string format(const std::string& what, std::size_t row, std::size_t col) {
    if (row == 0) return what;
    std::string s = what + " (row " + std::to_string(row);
    if (col != 0) s += ", column " + std::to_string(col);
    return s + ")";
  }
  std::size_t row_;
  std::size_t col_;
};

// Process-wide warning sink. Defaults to stderr; tests and the CLI may redirect it.
using WarningSink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}
}  // namespace detail

inline WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(detail::warning_mutex());
  return std::exchange(detail::warning_sink(), std::move(sink));
}

inline void warn(const std::string& msg) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_sink()) detail::warning_sink()(msg);
}

}  // namespace flrboot
