#pragma once

#include <stdexcept>
#include <string>

namespace converge {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidMatrix : Error {
  using Error::Error;
};

// Cholesky precondition failure; carries the offending smallest eigenvalue.
struct NotPositiveDefinite : Error {
  double lambda_min;
  explicit NotPositiveDefinite(double lmin)
      : Error("matrix not positive definite, lambda_min = " + std::to_string(lmin)),
        lambda_min(lmin) {}
};

struct SingularFactor : Error {
  using Error::Error;
};

struct InvalidShape : Error {
  using Error::Error;
};

struct InvalidDomain : Error {
  using Error::Error;
};

struct InvalidWindow : Error {
  using Error::Error;
};

struct TransferUnavailable : Error {
  using Error::Error;
};

struct ParseError : Error {
  int line;
  int col;
  ParseError(int line_, int col_, const std::string& msg)
      : Error("parse error at " + std::to_string(line_) + ":" + std::to_string(col_) + ": " + msg),
        line(line_),
        col(col_) {}
};

// Evaluation left the function domain (sqrt of negative, log of non-positive,
// division by zero); carries a rendering of the offending node.
struct EvalDomainError : Error {
  std::string node;
  explicit EvalDomainError(const std::string& node_)
      : Error("domain error in " + node_), node(node_) {}
};

// Declared analytic jacobian disagrees with forward-mode differentiation.
struct JacobianMismatch : Error {
  using Error::Error;
};

struct NonSmoothPoint : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace converge
