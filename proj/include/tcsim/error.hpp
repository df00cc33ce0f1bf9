#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcsim {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (bad lane id, mismatched
// accumulator variant, unbound fragment, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// The requested architecture / shape / precision combination does not exist
// on the modeled hardware.
class UnsupportedFeature : public Error {
 public:
  using Error::Error;
};

class OutOfBounds : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t line, std::size_t column)
      : Error(format(msg, line, column)), line_(line), column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  static std::string format(const std::string& msg, std::size_t line,
                            std::size_t column) {
    std::string where;
    if (line != 0) where += "line " + std::to_string(line);
    if (column != 0) {
      if (!where.empty()) where += ", ";
      where += "column " + std::to_string(column);
    }
    return where.empty() ? msg : where + ": " + msg;
  }

  std::size_t line_;
  std::size_t column_;
};

// Failure while running a trace file; carries the offending line.
class TraceError : public Error {
 public:
  TraceError(const std::string& msg, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace tcsim
