#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stt {

enum class ErrorCode {
  // task graph / run state
  ParseError,
  ValidationError,
  UnknownTask,
  IllegalTransition,
  SecondInProgress,
  TaskNotStarted,
  InvalidFinding,
  NoAnchor,
  NotACandidate,
  NothingInProgress,
  GraphMismatch,
  // pipeline
  InvalidTarget,
  WrongPhase,
  WrongMode,
  NoCandidates,
  SelectionUnrecognized,
  // llm gateway
  CredentialMissing,
  Timeout,
  ProviderError,
  ScriptExhausted,
  // session store
  SequenceGap,
  StorageFailure,
  OutOfOrderCheckpoint,
  SessionStillLive,
  EmptyInput,
  // cli / service
  FixtureInvalid,
  InvalidArgument,
  NotFound,
  Busy,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Load-time graph validation failure. Carries every problem found, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> issues);

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// True for failures that originate at the model provider (transport, auth, script).
bool is_provider_failure(ErrorCode code) noexcept;

}  // namespace stt
