#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maskqa {

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  EmptyForeground,
  MagicMismatch,
  Truncated,
  DimensionOverflow,
  MalformedFile,
  ConfigParse,
  MissingFile,
  SchemaMismatch,
  UndefinedMetric,
  NotPositiveDefinite,
  NonFiniteLoss,
  Io,
  Logic,
};

std::string_view error_kind_name(ErrorKind kind) noexcept;

/// Process exit code for a failure of the given kind (always nonzero).
int exit_code_for(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace maskqa
