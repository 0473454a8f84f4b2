#pragma once

#include <stdexcept>
#include <string>

namespace ovoda {

/// Process exit codes used by the CLI. Every ovoda::Error maps to one of them.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 1,
  kData = 2,
  kProvider = 3,
};

/// Base class of every error thrown by the library.
///
/// `kind()` is a stable machine-readable name (it ends up in the CLI's error
/// JSON), `exit_code()` is the process exit status the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, ExitCode code, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)), code_(code) {}

  const std::string& kind() const noexcept { return kind_; }
  ExitCode exit_code() const noexcept { return code_; }

 private:
  std::string kind_;
  ExitCode code_;
};

#define OVODA_DEFINE_ERROR(Name, Code)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message)                           \
        : Error(#Name, ExitCode::Code, message) {}                      \
  };

// Configuration problems.
OVODA_DEFINE_ERROR(ConfigError, kConfig)

// Data problems: malformed files, broken invariants, I/O.
OVODA_DEFINE_ERROR(SchemaError, kData)
OVODA_DEFINE_ERROR(ValidationError, kData)
OVODA_DEFINE_ERROR(IoError, kData)

// Contract violations raised by the algorithms themselves.
OVODA_DEFINE_ERROR(CoincidentCenters, kData)
OVODA_DEFINE_ERROR(DimensionMismatch, kData)
OVODA_DEFINE_ERROR(ShapeMismatch, kData)
OVODA_DEFINE_ERROR(VocabMismatch, kData)
OVODA_DEFINE_ERROR(IncompatibleAttribute, kData)
OVODA_DEFINE_ERROR(EmptyEvidence, kData)
OVODA_DEFINE_ERROR(OutOfOrderFrame, kData)
OVODA_DEFINE_ERROR(EmptyNovelSet, kData)
OVODA_DEFINE_ERROR(NonFiniteGradient, kData)

#undef OVODA_DEFINE_ERROR

/// Failure of an embedding provider (transport, model, protocol).
class ProviderError : public Error {
 public:
  ProviderError(const std::string& message, bool retryable)
      : Error("ProviderError", ExitCode::kProvider, message),
        retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

}  // namespace ovoda
