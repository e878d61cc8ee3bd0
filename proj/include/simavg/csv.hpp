#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "simavg/data.hpp"
#include "simavg/errors.hpp"

namespace simavg {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

//! Shortest decimal string that round-trips the value.
inline std::string format_double(double x)
{
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, long lineno)
{
  std::vector<std::string> fields;
  std::string cur;
  std::size_t i = 0;
  const std::size_t len = line.size();
  while (true) {
    cur.clear();
    if (i < len && line[i] == '"') {
      ++i;
      bool closed = false;
      while (i < len) {
        if (line[i] == '"') {
          if (i + 1 < len && line[i + 1] == '"') {
            cur.push_back('"');
            i += 2;
          } else {
            ++i;
            closed = true;
            break;
          }
        } else {
          cur.push_back(line[i]);
          ++i;
        }
      }
      if (!closed) {
        throw CsvError("unterminated quoted field", lineno, static_cast<long>(i) + 1);
      }
      if (i < len && line[i] != ',') {
        throw CsvError("text after closing quote", lineno, static_cast<long>(i) + 1);
      }
    } else {
      while (i < len && line[i] != ',') {
        cur.push_back(line[i]);
        ++i;
      }
    }
    fields.push_back(cur);
    if (i >= len) {
      break;
    }
    ++i; // consume comma
  }
  return fields;
}

} // namespace detail

inline CsvTable read_csv(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CsvError("cannot open file '" + path + "'", 1, 1);
  }
  CsvTable table;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    auto fields = detail::split_csv_line(line, lineno);
    if (lineno == 1) {
      table.header = std::move(fields);
    } else {
      if (fields.size() != table.header.size()) {
        throw CsvError("expected " + std::to_string(table.header.size()) + " fields, got " +
                         std::to_string(fields.size()),
                       lineno, 1);
      }
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

inline double parse_csv_number(const std::string& cell, long line, long column)
{
  std::size_t a = cell.find_first_not_of(" \t");
  if (a == std::string::npos) {
    throw CsvError("empty numeric field", line, column);
  }
  std::size_t b = cell.find_last_not_of(" \t");
  double value = 0.0;
  auto res = std::from_chars(cell.data() + a, cell.data() + b + 1, value);
  if (res.ec != std::errc{} || res.ptr != cell.data() + b + 1) {
    throw CsvError("cannot parse number '" + cell + "'", line, column);
  }
  return value;
}

//! Dataset CSV layout: header row, response in the first column, one
//! covariate per remaining column.
inline Dataset load_dataset_csv(const std::string& path)
{
  CsvTable table = read_csv(path);
  if (table.header.size() < 2) {
    throw CsvError("need a response column plus at least one covariate", 1, 1);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(table.rows.size());
  const Eigen::Index p = static_cast<Eigen::Index>(table.header.size()) - 1;
  if (n < 2) {
    throw CsvError("need at least 2 data rows", 1, 1);
  }
  Eigen::VectorXd y(n);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    const long lineno = static_cast<long>(i) + 2;
    y[i] = parse_csv_number(row[0], lineno, 1);
    if (!std::isfinite(y[i])) {
      throw CsvError("non-finite value", lineno, 1);
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      X(i, j) = parse_csv_number(row[static_cast<std::size_t>(j) + 1], lineno, static_cast<long>(j) + 2);
      if (!std::isfinite(X(i, j))) {
        throw CsvError("non-finite value", lineno, static_cast<long>(j) + 2);
      }
    }
  }
  std::vector<std::string> names(table.header.begin() + 1, table.header.end());
  Dataset data(std::move(y), std::move(X), std::move(names));
  data.response_name = table.header.front();
  return data;
}

namespace detail {

inline std::string csv_escape(const std::string& field)
{
  if (field.find_first_of(",\"\n") == std::string::npos) {
    return field;
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') {
      out += "\"\"";
    } else {
      out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

} // namespace detail

inline void write_csv(const std::string& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write file '" + path + "'");
  }
  auto write_row = [&out](const std::vector<std::string>& row) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k > 0) {
        out << ',';
      }
      out << detail::csv_escape(row[k]);
    }
    out << '\n';
  };
  write_row(header);
  for (const auto& row : rows) {
    write_row(row);
  }
}

inline void save_dataset_csv(const Dataset& data, const std::string& path)
{
  std::vector<std::string> header;
  header.push_back(data.response_name);
  for (Eigen::Index j = 0; j < data.p(); ++j) {
    header.push_back(data.names.empty() ? "x" + std::to_string(j + 1)
                                        : data.names[static_cast<std::size_t>(j)]);
  }
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(data.n()));
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    std::vector<std::string> row;
    row.reserve(static_cast<std::size_t>(data.p()) + 1);
    row.push_back(format_double(data.y[i]));
    for (Eigen::Index j = 0; j < data.p(); ++j) {
      row.push_back(format_double(data.X(i, j)));
    }
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

} // namespace simavg
