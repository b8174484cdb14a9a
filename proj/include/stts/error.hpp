#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace stts {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Category carried by every error raised by the library. The CLI prints it
// as the machine-parsable part of its one-line error message.
enum class ErrorKind {
  invalid_argument,
  parse,
  io,
  config,
  dimension,
  numeric,
  divergence,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::divergence: return "divergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace stts
