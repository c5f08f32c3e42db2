#pragma once

#include <stdexcept>
#include <string>

namespace dkparc {

/// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorKind {
  Format,       // malformed file contents
  Unsupported,  // valid file, feature not handled
  Truncation,   // payload shorter than the header promises
  Io,
  Transform,
  Config,
  Schema,
  Data,
  Contract,     // backend violated its declared shape/class contract
  Backend,      // backend process or protocol failure
  Argument,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define DKPARC_DEFINE_ERROR(Name, Kind)                                     \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

DKPARC_DEFINE_ERROR(FormatError, Format)
DKPARC_DEFINE_ERROR(UnsupportedError, Unsupported)
DKPARC_DEFINE_ERROR(TruncationError, Truncation)
DKPARC_DEFINE_ERROR(IoError, Io)
DKPARC_DEFINE_ERROR(TransformError, Transform)
DKPARC_DEFINE_ERROR(ConfigError, Config)
DKPARC_DEFINE_ERROR(SchemaError, Schema)
DKPARC_DEFINE_ERROR(DataError, Data)
DKPARC_DEFINE_ERROR(ContractError, Contract)
DKPARC_DEFINE_ERROR(BackendError, Backend)
DKPARC_DEFINE_ERROR(ArgumentError, Argument)

#undef DKPARC_DEFINE_ERROR

/// Wraps a failure raised inside a named pipeline stage. Keeps the original kind.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), stage + ": " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace dkparc
