#pragma once

#include <stdexcept>
#include <string>

namespace fedaia {

// Base class of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parameter vector / feature width does not match a model shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument was violated (empty batch, zero budget, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Non-finite values entered a numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid federated / experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset content violates an invariant (empty cluster, non-binary attribute).
class DataError : public Error {
 public:
  using Error::Error;
};

// CSV ingestion failure. Carries the offending 1-based row and column name.
class IngestError : public Error {
 public:
  IngestError(const std::string& what, long row, std::string column)
      : Error(what + " (row " + std::to_string(row) + ", column '" + column + "')"),
        row_(row),
        column_(std::move(column)) {}

  long row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  long row_;
  std::string column_;
};

// The simulated protocol did not deliver what an attack expected.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// The sensitive-attribute coefficient is zero, so the closed-form attack is undefined.
class DegenerateAttributeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedaia
