#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace moss {

/// Base of every error thrown by the library. The CLI maps the concrete
/// subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arguments or tensor shapes that violate an operation's preconditions.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A linear system whose factorization broke down.
class SingularSystem : public Error {
 public:
  SingularSystem(const std::string& what, std::size_t pivot)
      : Error(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Shooting / Newton iteration that failed to reach its tolerance.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Optimizer refused to apply an update because a gradient was not finite.
class UpdateAborted : public Error {
 public:
  explicit UpdateAborted(std::string parameter)
      : Error("non-finite gradient in parameter '" + parameter + "'"), parameter_(std::move(parameter)) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

/// Training produced a NaN/Inf loss.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Camera does not see any part of the robot.
class DegenerateView : public Error {
 public:
  using Error::Error;
};

/// Problems with files on disk: schema, missing payloads, checksum mismatch.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::vector<std::string> files = {})
      : Error(compose(what, files)), files_(std::move(files)) {}
  const std::vector<std::string>& files() const noexcept { return files_; }

 private:
  static std::string compose(const std::string& what, const std::vector<std::string>& files) {
    std::string out = what;
    for (const auto& f : files) out += "\n  " + f;
    return out;
  }
  std::vector<std::string> files_;
};

}  // namespace moss
