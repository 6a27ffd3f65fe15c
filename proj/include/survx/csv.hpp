#pragma once

// Minimal CSV reading/writing with locale-independent number formatting.

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "survx/error.hpp"

namespace survx::csv {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Comma-separated fields; double quotes group a field and "" escapes a quote.
inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

/// Shortest representation that reads back to the same double.
inline std::string format(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  s = trim(s);
  if (s == "NA" || s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError(where + ": cannot parse '" + std::string(s) + "' as a number");
  return v;
}

inline long parse_long(std::string_view s, const std::string& where) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError(where + ": cannot parse '" + std::string(s) + "' as an integer");
  return v;
}

struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  bool has(const std::string& column) const {
    for (const auto& h : header)
      if (h == column) return true;
    return false;
  }

  std::size_t column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw InputError(source + ": missing column '" + name + "'");
  }

  std::string where(std::size_t row, const std::string& col) const {
    return source + " line " + std::to_string(line_numbers[row]) + " column '" + col + "'";
  }

  double number(std::size_t row, const std::string& col) const {
    return parse_double(rows[row][column(col)], where(row, col));
  }

  long integer(std::size_t row, const std::string& col) const {
    return parse_long(rows[row][column(col)], where(row, col));
  }
};

/// Reads a headed table. Blank lines and lines starting with '#' are skipped;
/// every row must have as many fields as the header.
inline Table read(std::istream& in, const std::string& source) {
  Table t;
  t.source = source;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    auto fields = split(s);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw InputError(source + " line " + std::to_string(n) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(n);
  }
  if (t.header.empty()) throw InputError(source + ": empty file (no header)");
  return t;
}

/// Requires the header to be exactly `expected` followed by any of `optional`.
inline void require_header(const Table& t, const std::vector<std::string>& expected,
                           const std::vector<std::string>& optional = {}) {
  bool ok = t.header.size() >= expected.size();
  for (std::size_t j = 0; ok && j < expected.size(); ++j) ok = t.header[j] == expected[j];
  for (std::size_t j = expected.size(); ok && j < t.header.size(); ++j) {
    bool found = false;
    for (const auto& o : optional) found = found || o == t.header[j];
    ok = found;
  }
  if (!ok) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    std::string got;
    for (const auto& e : t.header) got += (got.empty() ? "" : ",") + e;
    throw InputError(t.source + ": header must be '" + want + "' (got '" + got + "')");
  }
}

}  // namespace survx::csv
