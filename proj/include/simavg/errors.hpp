#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace simavg {

//! Every admissible kernel weight in one smoother row underflowed to zero.
//! Usually means the bandwidth is too small for the spread of the index.
class DegenerateRowError : public std::runtime_error {
public:
  explicit DegenerateRowError(std::ptrdiff_t row)
    : std::runtime_error("smoother row " + std::to_string(row) +
                         " is degenerate: all admissible kernel weights underflowed "
                         "(bandwidth too small)")
    , row_(row)
  {
  }
  std::ptrdiff_t row() const { return row_; }

private:
  std::ptrdiff_t row_;
};

//! Every point of a bandwidth scale grid produced a degenerate smoother.
class NoValidBandwidthError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

//! A matrix that must be positive semidefinite fails the tolerance check.
class ConditioningError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

//! Every candidate score is infinite, so no model can be selected.
class NoSelectableModelError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

//! Pre-screening produced no candidate beyond the anchor-only model.
class DegenerateScreenError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

//! Input data that parses but cannot be used (missing columns, shape
//! mismatches between files).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

//! CSV parse failure with 1-based line and column location.
class CsvError : public std::runtime_error {
public:
  CsvError(const std::string& message, long line, long column)
    : std::runtime_error("csv error at line " + std::to_string(line) + ", column " +
                         std::to_string(column) + ": " + message)
    , line_(line)
    , column_(column)
  {
  }
  long line() const { return line_; }
  long column() const { return column_; }

private:
  long line_;
  long column_;
};

} // namespace simavg
