#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "qsignal/error.hpp"

namespace qsignal::csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> to_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Shortest representation that parses back to the identical double.
inline std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string fmt(std::optional<double> v) { return v ? fmt(*v) : std::string{}; }

// Reads the header line and fails unless it matches exactly.
inline void expect_header(std::istream& in, std::string_view header) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header, expected '" + std::string(header) + "'");
  if (trim(line) != header)
    throw ParseError(1, "unexpected header '" + std::string(trim(line)) + "', expected '" +
                            std::string(header) + "'");
}

inline double require_double(std::string_view field, std::size_t line, std::string_view name) {
  auto v = to_double(field);
  if (!v) throw ParseError(line, "field '" + std::string(name) + "' is not a number: '" + std::string(field) + "'");
  return *v;
}

inline std::int64_t require_int(std::string_view field, std::size_t line, std::string_view name) {
  auto v = to_int(field);
  if (!v) throw ParseError(line, "field '" + std::string(name) + "' is not an integer: '" + std::string(field) + "'");
  return *v;
}

}  // namespace qsignal::csv
