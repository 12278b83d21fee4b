#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sensorbp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A table, message or belief whose entries sum to zero. Raised when the
/// evidence (or a message combination) has probability zero under the model.
class ZeroMassError : public Error {
 public:
  using Error::Error;
};

/// Structural problem with a model: bad scope, cardinality mismatch, etc.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Exact inference refused to run because the enumeration is too large.
class SizeGuardError : public Error {
 public:
  using Error::Error;
};

/// Text input error with a 1-based line/column.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// JSON document that parses but violates the schema. `path` is a JSON
/// pointer to the offending field.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace sensorbp
