#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xtok {

/// Stable error kinds. Names are part of the public contract (CLI output,
/// scripting bindings), so never renumber or rename existing entries.
enum class ErrorKind {
  MergeOrderViolation,
  DuplicateToken,
  BoundOutOfRange,
  ParseError,
  LevelMismatch,
  UnknownSymbol,
  InvalidEncoding,
  InvalidBasis,
  BackendUnavailable,
  PrefixContainsEos,
  DeadEnd,
  ZeroProbabilityChoice,
  BudgetExceeded,
  NegativeResult,
  MaxRejections,
  ShapeMismatch,
  ComplementUnderflow,
  BudgetIntractable,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MergeOrderViolation: return "MergeOrderViolation";
    case ErrorKind::DuplicateToken: return "DuplicateToken";
    case ErrorKind::BoundOutOfRange: return "BoundOutOfRange";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::LevelMismatch: return "LevelMismatch";
    case ErrorKind::UnknownSymbol: return "UnknownSymbol";
    case ErrorKind::InvalidEncoding: return "InvalidEncoding";
    case ErrorKind::InvalidBasis: return "InvalidBasis";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::PrefixContainsEos: return "PrefixContainsEos";
    case ErrorKind::DeadEnd: return "DeadEnd";
    case ErrorKind::ZeroProbabilityChoice: return "ZeroProbabilityChoice";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::NegativeResult: return "NegativeResult";
    case ErrorKind::MaxRejections: return "MaxRejections";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ComplementUnderflow: return "ComplementUnderflow";
    case ErrorKind::BudgetIntractable: return "BudgetIntractable";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace xtok
