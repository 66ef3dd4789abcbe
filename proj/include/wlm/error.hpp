#pragma once

#include <stdexcept>
#include <string>

namespace wlm {

enum class ErrorKind {
  dimension,
  degenerate_row,
  no_signal,
  contract,
  unstepped_parameter,
  config,
  ingestion,
  empty_sentence,
  range,
  length,
  degenerate_sequence,
  io,
  corruption,
  incompatible,
  undefined_similarity,
  undefined_correlation,
  numeric,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::degenerate_row: return "degenerate-row";
    case ErrorKind::no_signal: return "no-signal";
    case ErrorKind::contract: return "contract";
    case ErrorKind::unstepped_parameter: return "unstepped-parameter";
    case ErrorKind::config: return "config";
    case ErrorKind::ingestion: return "ingestion";
    case ErrorKind::empty_sentence: return "empty-sentence";
    case ErrorKind::range: return "range";
    case ErrorKind::length: return "length";
    case ErrorKind::degenerate_sequence: return "degenerate-sequence";
    case ErrorKind::io: return "io";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::incompatible: return "incompatible";
    case ErrorKind::undefined_similarity: return "undefined-similarity";
    case ErrorKind::undefined_correlation: return "undefined-correlation";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

// Every failure in the library is reported through this type; kind() lets
// callers (the CLI in particular) map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace wlm
