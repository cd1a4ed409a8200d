#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace logsae {

/// Broad category of a failure; the CLI maps it onto an exit code.
enum class ErrorKind {
  Usage,      // bad arguments or configuration
  Data,       // malformed or invalid input data
  Numerical,  // the model cannot be evaluated or fitted on this data
};

/// Base class for every error raised by the library.  `name()` is the
/// machine-readable error class reported by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string_view name, ErrorKind kind, const std::string& what)
      : std::runtime_error(what), name_(name), kind_(kind) {}

  const std::string& name() const noexcept { return name_; }
  ErrorKind kind() const noexcept { return kind_; }

 private:
  std::string name_;
  ErrorKind kind_;
};

#define LOGSAE_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(#Name, Kind, what) {} \
  };

LOGSAE_DEFINE_ERROR(InvalidArgument, ErrorKind::Usage)
LOGSAE_DEFINE_ERROR(ParseError, ErrorKind::Data)
LOGSAE_DEFINE_ERROR(NonPositiveValue, ErrorKind::Data)
LOGSAE_DEFINE_ERROR(NonPsdSigma, ErrorKind::Data)
LOGSAE_DEFINE_ERROR(InsufficientAreas, ErrorKind::Data)
LOGSAE_DEFINE_ERROR(DegenerateVariance, ErrorKind::Numerical)
LOGSAE_DEFINE_ERROR(Overflow, ErrorKind::Numerical)
LOGSAE_DEFINE_ERROR(ResamplingFailed, ErrorKind::Numerical)

#undef LOGSAE_DEFINE_ERROR

/// The moment matrix of the beta equation is numerically singular.  When
/// raised from a leave-one-out refit, `left_out()` names the dropped area.
class SingularMomentMatrix : public Error {
 public:
  explicit SingularMomentMatrix(const std::string& what, long left_out = -1)
      : Error("SingularMomentMatrix", ErrorKind::Numerical, what), left_out_(left_out) {}

  long left_out() const noexcept { return left_out_; }

 private:
  long left_out_;
};

}  // namespace logsae
