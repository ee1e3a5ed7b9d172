#pragma once

#include <stdexcept>
#include <string>

namespace minp {

// Base of all library errors. Two subfamilies drive the CLI exit-code
// contract: DataError -> exit 2, NumericError -> exit 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericError {
 public:
  using NumericError::NumericError;
};

class NonConvergence : public NumericError {
 public:
  using NumericError::NumericError;
};

class RankDeficient : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateVariance : public NumericError {
 public:
  using NumericError::NumericError;
};

class SingularCovariance : public NumericError {
 public:
  using NumericError::NumericError;
};

class BootstrapDegenerate : public NumericError {
 public:
  using NumericError::NumericError;
};

// Contract misuse (wrong argument combination), not a data or numeric failure.
class ArityMismatch : public Error {
 public:
  using Error::Error;
};

class MissingColumn : public DataError {
 public:
  explicit MissingColumn(const std::string& name)
      : DataError("missing column: " + name), column(name) {}
  std::string column;
};

class NonNumericCell : public DataError {
 public:
  NonNumericCell(long row_1based, const std::string& col)
      : DataError("non-numeric cell at row " + std::to_string(row_1based) +
                  ", column " + col),
        row(row_1based),
        column(col) {}
  long row;
  std::string column;
};

class TooFewRows : public DataError {
 public:
  using DataError::DataError;
};

class ConfigInvalid : public DataError {
 public:
  explicit ConfigInvalid(const std::string& field, const std::string& why = "")
      : DataError("invalid config field '" + field + "'" +
                  (why.empty() ? "" : ": " + why)),
        field(field) {}
  std::string field;
};

// Rejected at configuration validation: an ARCH data-generating process with
// lag coefficients summing to one or more has no stationary variance.
class ExplosiveVariance : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace minp
