#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace progrs {

enum class ErrorCode {
  // core_model
  MixedPromptIds,
  EmptyGroup,
  ScoreLengthMismatch,
  OutcomeNotBinary,
  InvalidScore,
  NonFiniteLogProb,
  EmptyTrajectory,
  InvalidConfig,
  // step_scoring
  ScorerEvaluationFailure,
  HorizonTooLarge,
  NonDeterministicScorer,
  // advantage
  MissingStepScores,
  LengthMismatch,
  // grpo
  EmptyBatch,
  MissingState,
  // harness
  ParseError,
  IoError,
};

/// Coarse grouping used to pick a process exit code.
enum class ErrorCategory { Config, Data, Internal };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MixedPromptIds: return "MixedPromptIds";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::ScoreLengthMismatch: return "ScoreLengthMismatch";
    case ErrorCode::OutcomeNotBinary: return "OutcomeNotBinary";
    case ErrorCode::InvalidScore: return "InvalidScore";
    case ErrorCode::NonFiniteLogProb: return "NonFiniteLogProb";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ScorerEvaluationFailure: return "ScorerEvaluationFailure";
    case ErrorCode::HorizonTooLarge: return "HorizonTooLarge";
    case ErrorCode::NonDeterministicScorer: return "NonDeterministicScorer";
    case ErrorCode::MissingStepScores: return "MissingStepScores";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::MissingState: return "MissingState";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
      return ErrorCategory::Config;
    case ErrorCode::MixedPromptIds:
    case ErrorCode::EmptyGroup:
    case ErrorCode::ScoreLengthMismatch:
    case ErrorCode::OutcomeNotBinary:
    case ErrorCode::InvalidScore:
    case ErrorCode::NonFiniteLogProb:
    case ErrorCode::EmptyTrajectory:
    case ErrorCode::ScorerEvaluationFailure:
    case ErrorCode::MissingStepScores:
    case ErrorCode::LengthMismatch:
    case ErrorCode::ParseError:
    case ErrorCode::IoError:
      return ErrorCategory::Data;
    default:
      return ErrorCategory::Internal;
  }
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace progrs
