#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qsignal {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class OrderingError : public Error {
 public:
  using Error::Error;
};

// Names the offending configuration key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NoDataError : public Error {
 public:
  using Error::Error;
};

class MeasurementUnavailable : public Error {
 public:
  using Error::Error;
};

class DegenerateService : public Error {
 public:
  using Error::Error;
};

}  // namespace qsignal
