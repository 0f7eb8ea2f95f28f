#include "stt/error.hpp"

namespace stt {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::SecondInProgress: return "SecondInProgress";
    case ErrorCode::TaskNotStarted: return "TaskNotStarted";
    case ErrorCode::InvalidFinding: return "InvalidFinding";
    case ErrorCode::NoAnchor: return "NoAnchor";
    case ErrorCode::NotACandidate: return "NotACandidate";
    case ErrorCode::NothingInProgress: return "NothingInProgress";
    case ErrorCode::GraphMismatch: return "GraphMismatch";
    case ErrorCode::InvalidTarget: return "InvalidTarget";
    case ErrorCode::WrongPhase: return "WrongPhase";
    case ErrorCode::WrongMode: return "WrongMode";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::SelectionUnrecognized: return "SelectionUnrecognized";
    case ErrorCode::CredentialMissing: return "CredentialMissing";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::SequenceGap: return "SequenceGap";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::OutOfOrderCheckpoint: return "OutOfOrderCheckpoint";
    case ErrorCode::SessionStillLive: return "SessionStillLive";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::FixtureInvalid: return "FixtureInvalid";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Busy: return "Busy";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
  std::string out = std::to_string(issues.size()) + " problem(s)";
  for (const auto& issue : issues) {
    out += "\n  - ";
    out += issue;
  }
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> issues)
    : Error(ErrorCode::ValidationError, join_issues(issues)), issues_(std::move(issues)) {}

bool is_provider_failure(ErrorCode code) noexcept {
  return code == ErrorCode::CredentialMissing || code == ErrorCode::Timeout ||
         code == ErrorCode::ProviderError || code == ErrorCode::ScriptExhausted;
}

}  // namespace stt
