// errors.hpp — error taxonomy shared by all conjflow modules.
//
// Everything derives from conjflow::Error. The CLI maps the subtree to exit
// codes: SchemaError -> 2, quality failures -> 3, everything else -> 4.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace conjflow {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// An operation was called outside its stated domain (bad dimension, t outside
// the interval, non-positive operator, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Dimension mismatch between operands.
class DimensionError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

// Eigensolver failed to converge. Never silent.
class EigensolverError : public Error {
 public:
  using Error::Error;
};

// Chart evaluated at a Lagrangian not transversal to the companion; carries
// the offending singular value.
class ChartDomainError : public PreconditionError {
 public:
  ChartDomainError(const std::string& what, double gap)
      : PreconditionError(what), gap_(gap) {}
  double gap() const { return gap_; }

 private:
  double gap_ = 0.0;
};

// spectral_split found eigenvalues inside the dead zone (kernel_tol, gap_tol).
class AmbiguousSplitError : public Error {
 public:
  AmbiguousSplitError(const std::string& what, std::vector<double> offenders)
      : Error(what), offenders_(std::move(offenders)) {}
  const std::vector<double>& offenders() const { return offenders_; }

 private:
  std::vector<double> offenders_;
};

// A numerical quality gate failed (drift bound, lifting mismatch,
// postcondition residual, ...). CLI exit code 3.
class QualityError : public Error {
 public:
  QualityError(const std::string& what, double metric = 0.0)
      : Error(what), metric_(metric) {}
  double metric() const { return metric_; }

 private:
  double metric_ = 0.0;
};

// One-step integration exceeded its configured symplecticity-drift bound.
class IntegrationQualityError : public QualityError {
 public:
  using QualityError::QualityError;
};

// Scenario file violates the schema; carries the JSON path of the offending
// field. CLI exit code 2.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& path, const std::string& message)
      : Error(path + ": " + message), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace conjflow
