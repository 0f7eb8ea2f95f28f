#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "stt/prompts.hpp"
#include "stt/response_parsing.hpp"
#include "stt/task_state.hpp"

namespace stt {

enum class PipelineMode { Guided, Baseline };

std::string_view to_string(PipelineMode mode) noexcept;
std::optional<PipelineMode> parse_pipeline_mode(std::string_view text) noexcept;

enum class PhaseKind {
  Initialization,
  AwaitingToolOutput,
  Summarization,
  StatusUpdate,
  Selection,
  CommandGeneration,
  Terminated,
};

enum class Outcome { Succeeded, Failed, Exhausted, Aborted };

std::string_view to_string(Outcome outcome) noexcept;
std::optional<Outcome> parse_outcome(std::string_view text) noexcept;

struct Phase {
  PhaseKind kind = PhaseKind::Initialization;
  Outcome outcome = Outcome::Succeeded;  // meaningful only when Terminated

  static constexpr Phase terminated(Outcome o) noexcept { return {PhaseKind::Terminated, o}; }
  constexpr bool is(PhaseKind k) const noexcept { return kind == k; }
  constexpr bool is_terminated() const noexcept { return kind == PhaseKind::Terminated; }

  friend constexpr bool operator==(const Phase& a, const Phase& b) noexcept {
    return a.kind == b.kind && (a.kind != PhaseKind::Terminated || a.outcome == b.outcome);
  }
};

/// "AwaitingToolOutput", "Terminated(Failed)", ...
std::string to_string(const Phase& phase);
std::string_view to_string(PhaseKind kind) noexcept;

/// The pipeline's transition relation:
///   Initialization -> AwaitingToolOutput (guided) | CommandGeneration (baseline)
///   AwaitingToolOutput -> Summarization | CommandGeneration (invalid command)
///                       | StatusUpdate (task marked done or failed without a summary)
///   Summarization -> StatusUpdate -> Selection | CommandGeneration
///   Selection -> CommandGeneration;  CommandGeneration -> AwaitingToolOutput
///   any non-terminal phase -> Terminated; Terminated is absorbing.
bool is_legal_transition(const Phase& from, const Phase& to) noexcept;

struct PipelineConfig {
  int max_invalid_commands = 5;
  std::size_t repetition_window = 3;
  int selection_reprompts = 2;
  bool auto_select_singletons = false;
};

enum class Origin { Engine, Operator };
std::string_view to_string(Origin origin) noexcept;

struct CommandResult {
  enum class Kind { Success, InvalidCommand, ToolOutput };

  Kind kind = Kind::ToolOutput;
  std::string text;

  static CommandResult output(std::string text) { return {Kind::ToolOutput, std::move(text)}; }
  static CommandResult invalid(std::string text = {}) {
    return {Kind::InvalidCommand, std::move(text)};
  }
  static CommandResult success(std::string text = {}) { return {Kind::Success, std::move(text)}; }
};

std::string_view to_string(CommandResult::Kind kind) noexcept;
/// Accepts "output", "invalid", "success".
std::optional<CommandResult::Kind> parse_classification(std::string_view text) noexcept;

// State deltas, reported so a caller can journal them and later fold them back.
struct StatusChange {
  TaskId task;
  TaskStatus from;
  TaskStatus to;
  Origin origin;
};
struct SelectionCommit {
  TaskId task;
  TaskId anchor;
  Origin origin;
  bool forced = false;
  std::vector<TaskId> candidates;  // the set in force at commit time
};
struct InvalidCommandCount {
  TaskId task;
  int count = 0;
};
using StateChange = std::variant<StatusChange, SelectionCommit, InvalidCommandCount>;

struct PhaseChange {
  Phase from;
  Phase to;
  std::optional<BacktrackOutcome> backtrack;
  int invalid_count = 0;
};

enum class StatusDecision { Complete, Continue, Fail };

struct SelectionResponse {
  std::optional<TaskId> proposal;  // empty when a re-prompt is due
  bool forced = false;             // budget exhausted, first candidate taken
  bool reprompt = false;
};

/// LLM-maintained tree text of the self-guided baseline. The engine treats it as opaque;
/// the only reader is the reasoning prompt builder, and reads are counted.
class BaselinePtt {
 public:
  const std::string& text_for_reasoning_prompt() const {
    ++reads_;
    return text_;
  }
  int revision() const noexcept { return revision_; }
  std::size_t reads() const noexcept { return reads_; }
  bool empty() const noexcept { return text_.empty(); }

  void reset(std::string text) {
    text_ = std::move(text);
    revision_ = 0;
  }
  void revise(std::string text) {
    text_ = std::move(text);
    ++revision_;
  }

 private:
  std::string text_;
  int revision_ = 0;
  mutable std::size_t reads_ = 0;
};

/// A record of each commit, with the candidate set that was in force.
struct CommitRecord {
  TaskId chosen;
  std::vector<TaskId> candidates;
};

/// Orchestration state machine for one penetration-test session. Performs no I/O: callers
/// send the envelopes it builds and hand the responses back.
class Session {
 public:
  /// Throws InvalidTarget for an empty target.
  static std::pair<Session, PromptEnvelope> start(GraphPtr graph, PipelineMode mode,
                                                  std::string target, PipelineConfig config = {});

  PipelineMode mode() const noexcept { return mode_; }
  const Phase& phase() const noexcept { return phase_; }
  const std::string& target() const noexcept { return target_; }
  const PipelineConfig& config() const noexcept { return config_; }
  const SttState& stt() const noexcept { return stt_; }
  const BaselinePtt& ptt() const noexcept { return ptt_; }
  const std::optional<std::string>& current_command() const noexcept { return current_command_; }
  const std::optional<Recommendation>& pending_recommendation() const noexcept {
    return pending_recommendation_;
  }
  const std::optional<TaskId>& pending_selection() const noexcept { return pending_selection_; }
  bool pending_selection_forced() const noexcept { return pending_forced_; }
  int selection_failures() const noexcept { return selection_failures_; }
  int baseline_invalid_commands() const noexcept { return baseline_invalid_; }
  const RepetitionWindow& repetition_window() const noexcept { return window_; }
  const std::vector<std::pair<Phase, Phase>>& transitions() const noexcept { return transitions_; }
  const std::vector<CommitRecord>& commits() const noexcept { return commits_; }

  /// Deltas accumulated since the previous call.
  std::vector<StateChange> take_changes();

  /// Current candidate list (guided, Selection phase), empty otherwise.
  std::vector<Candidate> candidates() const;

  /// Response to the Initial / BaselineInitial envelope.
  void accept_initial_response(std::string_view response);

  PhaseChange record_command_result(const CommandResult& result);

  PromptEnvelope build_summarization_prompt(std::string_view tool_output) const;
  void accept_summary(const SummaryOutcome& summary, std::uint64_t source_event,
                      const std::string& recorded_at);

  PhaseChange apply_status(StatusDecision decision, Origin origin);
  /// Operator decision from AwaitingToolOutput or StatusUpdate. Completed/Failed apply to
  /// the in-progress task; InProgress on it means "continue" (StatusUpdate only).
  PhaseChange override_status(const TaskId& task, TaskStatus to);

  PromptEnvelope build_selection_prompt() const;
  SelectionResponse accept_selection_response(std::string_view response);
  void commit_selection(const TaskId& task, Origin origin);

  PromptEnvelope build_command_prompt() const;
  void accept_command(std::string_view response);

  PromptEnvelope build_baseline_reasoning_prompt(std::string_view tool_output) const;
  void accept_reasoning(std::string_view response);

  /// Call once per LLM response, in order. Abort terminates the session as Failed.
  RepetitionVerdict observe_llm_response(std::string_view response);

  void terminate(Outcome outcome);

 private:
  Session(GraphPtr graph, PipelineMode mode, std::string target, PipelineConfig config);

  void move_to(Phase to);
  void require_phase(PhaseKind kind, std::string_view op) const;
  void require_mode(PipelineMode mode, std::string_view op) const;
  void enter_selection_or_finish();
  TaskId in_progress_or_throw(std::string_view op) const;

  PipelineMode mode_;
  PipelineConfig config_;
  std::string target_;
  Phase phase_{};
  SttState stt_;
  BaselinePtt ptt_;
  RepetitionWindow window_;

  std::optional<std::string> current_command_;
  std::string baseline_subtask_;
  std::optional<Recommendation> pending_recommendation_;
  std::optional<TaskId> pending_selection_;
  bool pending_forced_ = false;
  int selection_failures_ = 0;
  int baseline_invalid_ = 0;

  std::vector<std::pair<Phase, Phase>> transitions_;
  std::vector<StateChange> changes_;
  std::vector<CommitRecord> commits_;
};

/// "Active Scanning (T1595): <description>"
std::string describe_task(const GraphTask& task);

}  // namespace stt
