#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eva {

enum class ErrorKind {
  malformed_document,
  schema,
  missing_source,
  unsupported_value,
  missing_dimension,
  no_rated_turns,
  undefined_score,
  out_of_range,
  missing_metric,
  empty_input,
  unbalanced_design,
  degenerate_input,
  mismatched_lengths,
  inconsistent_script,
  no_scorable_turns,
  config,
  io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::malformed_document: return "malformed_document";
    case ErrorKind::schema: return "schema";
    case ErrorKind::missing_source: return "missing_source";
    case ErrorKind::unsupported_value: return "unsupported_value";
    case ErrorKind::missing_dimension: return "missing_dimension";
    case ErrorKind::no_rated_turns: return "no_rated_turns";
    case ErrorKind::undefined_score: return "undefined_score";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::missing_metric: return "missing_metric";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::unbalanced_design: return "unbalanced_design";
    case ErrorKind::degenerate_input: return "degenerate_input";
    case ErrorKind::mismatched_lengths: return "mismatched_lengths";
    case ErrorKind::inconsistent_script: return "inconsistent_script";
    case ErrorKind::no_scorable_turns: return "no_scorable_turns";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the engine carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace eva
