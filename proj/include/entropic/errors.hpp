#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace entropic {

// Process exit codes shared by the CLI and the manifest runner.
enum class ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kValidation = 2,
  kNonConvergence = 3,
  kInfeasibleMoments = 4,
  kDomain = 5,
  kCheckFailed = 6,
};

// Root of every error the library throws. `kind()` is the stable, typed
// name surfaced in reports and CLI diagnostics.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual std::string_view kind() const noexcept { return "Error"; }
  virtual ExitCode exit_code() const noexcept { return ExitCode::kInternal; }
};

#define ENTROPIC_DECLARE_ERROR(Name, Base, Code)                             \
  class Name : public Base {                                                 \
   public:                                                                   \
    using Base::Base;                                                        \
    std::string_view kind() const noexcept override { return #Name; }        \
    ExitCode exit_code() const noexcept override { return ExitCode::Code; }  \
  };

ENTROPIC_DECLARE_ERROR(ValidationError, Error, kValidation)
ENTROPIC_DECLARE_ERROR(UnknownSymbol, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(ArityError, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(DimensionError, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(InvalidGrid, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(UnknownCatalogName, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(FrequencySumError, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(UnmatchedSupportPoint, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(EmptySample, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(SimplePotentialsError, ValidationError, kValidation)
ENTROPIC_DECLARE_ERROR(DomainError, Error, kDomain)
ENTROPIC_DECLARE_ERROR(InfeasibleMoments, Error, kInfeasibleMoments)
ENTROPIC_DECLARE_ERROR(NonConvergence, Error, kNonConvergence)

#undef ENTROPIC_DECLARE_ERROR

// Parse failure with the byte offset into the source and the tokens that
// would have been accepted there.
class SyntaxError : public ValidationError {
 public:
  SyntaxError(std::size_t position, std::vector<std::string> expected,
              const std::string& found);

  std::string_view kind() const noexcept override { return "SyntaxError"; }
  std::size_t position() const noexcept { return position_; }
  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  std::size_t position_;
  std::vector<std::string> expected_;
};

// Manifest problem, located by a JSON-pointer-like path and field name.
class ConfigError : public ValidationError {
 public:
  ConfigError(std::string path, const std::string& message);

  std::string_view kind() const noexcept override { return "ConfigError"; }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace entropic
