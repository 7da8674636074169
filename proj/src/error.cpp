#include "maskqa/error.hpp"

namespace maskqa {

std::string_view error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::EmptyForeground: return "empty-foreground";
    case ErrorKind::MagicMismatch: return "magic-mismatch";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::DimensionOverflow: return "dimension-overflow";
    case ErrorKind::MalformedFile: return "malformed-file";
    case ErrorKind::ConfigParse: return "config-parse";
    case ErrorKind::MissingFile: return "missing-file";
    case ErrorKind::SchemaMismatch: return "schema-mismatch";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::NotPositiveDefinite: return "not-positive-definite";
    case ErrorKind::NonFiniteLoss: return "non-finite-loss";
    case ErrorKind::Io: return "io";
    case ErrorKind::Logic: return "logic";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ConfigParse: return 2;
    case ErrorKind::MissingFile: return 3;
    case ErrorKind::SchemaMismatch: return 4;
    case ErrorKind::UndefinedMetric: return 5;
    case ErrorKind::InvalidArgument: return 6;
    case ErrorKind::DimensionMismatch: return 7;
    case ErrorKind::EmptyForeground: return 8;
    case ErrorKind::MagicMismatch:
    case ErrorKind::Truncated:
    case ErrorKind::DimensionOverflow:
    case ErrorKind::MalformedFile: return 9;
    case ErrorKind::NotPositiveDefinite: return 10;
    case ErrorKind::NonFiniteLoss: return 11;
    case ErrorKind::Io: return 12;
    case ErrorKind::Logic: return 13;
  }
  return 1;
}

}  // namespace maskqa
