#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tenslim {

/// Failure classes raised by the toolkit. Each maps to one CLI exit code.
enum class Errc {
  ShapeMismatch,
  InvalidMode,
  IndexOutOfBounds,
  EmptyInput,
  RankChainBroken,
  BudgetInfeasible,
  SingularUpdate,
  RankTooLarge,
  EmptySupport,
  ModeMismatch,
  InvalidStep,
  ScheduleRegression,
  NonFiniteLogits,
  NonFiniteGradient,
  ZeroNorm,
  BadMagic,
  VersionUnsupported,
  CorruptOffsets,
  TruncatedPayload,
  BadManifest,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InvalidMode: return "InvalidMode";
    case Errc::IndexOutOfBounds: return "IndexOutOfBounds";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::RankChainBroken: return "RankChainBroken";
    case Errc::BudgetInfeasible: return "BudgetInfeasible";
    case Errc::SingularUpdate: return "SingularUpdate";
    case Errc::RankTooLarge: return "RankTooLarge";
    case Errc::EmptySupport: return "EmptySupport";
    case Errc::ModeMismatch: return "ModeMismatch";
    case Errc::InvalidStep: return "InvalidStep";
    case Errc::ScheduleRegression: return "ScheduleRegression";
    case Errc::NonFiniteLogits: return "NonFiniteLogits";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::ZeroNorm: return "ZeroNorm";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::CorruptOffsets: return "CorruptOffsets";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::BadManifest: return "BadManifest";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Process exit code for a failure class: 2 config, 3 data/format, 4 numerical.
constexpr int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError:
    case Errc::BudgetInfeasible:
      return 2;
    case Errc::BadMagic:
    case Errc::VersionUnsupported:
    case Errc::CorruptOffsets:
    case Errc::TruncatedPayload:
    case Errc::BadManifest:
    case Errc::IoError:
    case Errc::ShapeMismatch:
    case Errc::InvalidMode:
    case Errc::IndexOutOfBounds:
    case Errc::EmptyInput:
    case Errc::RankChainBroken:
    case Errc::ModeMismatch:
      return 3;
    default:
      return 4;
  }
}

}  // namespace tenslim
