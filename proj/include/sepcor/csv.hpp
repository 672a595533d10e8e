#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sepcor/matrix_kit.hpp"

namespace sepcor::csv {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal form that round-trips to the same double (so emitted
/// files re-ingest bit-identically).
inline std::string format_double(double v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

namespace detail {

inline std::string_view trimmed(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline double parse_cell(std::string_view cell, const std::string& context,
                         std::size_t line, std::size_t column) {
  const std::string_view t = trimmed(cell);
  const std::string where = context + ": line " + std::to_string(line) +
                            ", column " + std::to_string(column);
  if (t.empty()) {
    throw CsvError(where + ": empty cell");
  }
  std::string_view body = t;
  if (body.front() == '+') body.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(body.data(), body.data() + body.size(), value);
  if (res.ec != std::errc{} || res.ptr != body.data() + body.size()) {
    throw CsvError(where + ": non-numeric cell '" + std::string(t) + "'");
  }
  if (!std::isfinite(value)) {
    throw CsvError(where + ": non-finite cell '" + std::string(t) + "'");
  }
  return value;
}

}  // namespace detail

/// Strict numeric CSV reader: comma separators, '.' decimal point, optional
/// single header line, no quoting or locale handling. Ragged rows, empty
/// cells, and non-finite values are hard errors with line/column positions.
/// Trailing blank lines are tolerated.
inline Matrix parse_matrix(std::istream& in, bool header,
                           const std::string& context) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    lines.push_back(std::move(line));
  }
  while (!lines.empty() && detail::trimmed(lines.back()).empty()) {
    lines.pop_back();
  }
  std::size_t first = 0;
  if (header) {
    if (lines.empty()) {
      throw CsvError(context + ": missing header line");
    }
    first = 1;
  }
  if (first >= lines.size()) {
    throw CsvError(context + ": no data rows");
  }

  std::vector<std::vector<double>> rows;
  std::size_t cols = 0;
  for (std::size_t li = first; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    std::vector<double> row;
    std::size_t start = 0;
    std::size_t column = 1;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      const std::string_view cell(line.data() + start,
                                  (comma == std::string::npos ? line.size()
                                                              : comma) -
                                      start);
      row.push_back(detail::parse_cell(cell, context, li + 1, column));
      if (comma == std::string::npos) break;
      start = comma + 1;
      ++column;
    }
    if (rows.empty()) {
      cols = row.size();
    } else if (row.size() != cols) {
      throw CsvError(context + ": line " + std::to_string(li + 1) +
                     ": expected " + std::to_string(cols) + " cells, found " +
                     std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }

  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  return out;
}

inline Matrix read_matrix(const std::string& path, bool header = false) {
  std::ifstream in(path);
  if (!in) {
    throw CsvError(path + ": cannot open file");
  }
  return parse_matrix(in, header, path);
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

inline void write_matrix_file(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) {
    throw CsvError(path + ": cannot open file for writing");
  }
  write_matrix(out, m);
  if (!out) {
    throw CsvError(path + ": write failed");
  }
}

}  // namespace sepcor::csv
