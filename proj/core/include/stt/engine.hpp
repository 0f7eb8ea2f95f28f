#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "stt/llm_gateway.hpp"
#include "stt/metrics.hpp"
#include "stt/pipeline.hpp"
#include "stt/transcript.hpp"

namespace stt {

enum class FailurePolicy {
  Terminate,  // provider failure ends the session as Failed
  Rollback,   // provider failure restores the pre-call state so the step can be retried
};

struct DriverOptions {
  PipelineMode mode = PipelineMode::Guided;
  std::string target;
  PipelineConfig pipeline;
  /// Apply status recommendations and selection proposals without operator confirmation.
  bool auto_apply = true;
  FailurePolicy on_provider_failure = FailurePolicy::Terminate;
  std::size_t turn_budget = 0;
};

/// Files kept for one session: transcript.jsonl, state.json, session.json, metrics.json.
class SessionDirectory {
 public:
  explicit SessionDirectory(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path transcript_path() const { return root_ / "transcript.jsonl"; }
  std::filesystem::path state_path() const { return root_ / "state.json"; }
  std::filesystem::path meta_path() const { return root_ / "session.json"; }
  std::filesystem::path metrics_path() const { return root_ / "metrics.json"; }

  void write_meta(const nlohmann::json& meta) const;
  void write_state(const SttState& state) const;
  void write_metrics(const SessionMetrics& metrics) const;

  nlohmann::json read_meta() const;
  SessionMetrics read_metrics() const;

 private:
  std::filesystem::path root_;
};

/// Writes `body` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& body);

/// Drives a Session: sends every prompt through the gateway, journals every prompt,
/// response, input and state change, and stops where tool output or (when auto_apply is
/// off) an operator decision is needed.
class SessionDriver {
 public:
  SessionDriver(GraphPtr graph, std::shared_ptr<Provider> provider,
                std::unique_ptr<TranscriptLog> log, DriverOptions options);

  /// Issues the first prompt. Provider failures are journaled, handled per policy, and
  /// rethrown.
  void start();

  /// Phase and mode errors are thrown before anything is journaled.
  void submit(const CommandResult& result);
  void override_status(const TaskId& task, TaskStatus to);
  void override_selection(const TaskId& task);

  /// Accepts the pending recommendation or selection proposal.
  void confirm();

  /// Operator abort: Terminated(Aborted).
  void abort(const std::string& reason);

  /// Ends a live session with the given outcome (used by replay when scripts run out).
  void finish(Outcome outcome, const std::string& reason);

  /// Continues driving after a rolled-back provider failure.
  void resume();

  bool started() const noexcept { return session_.has_value(); }
  const Session& session() const;
  const Phase& phase() const;
  bool terminated() const;
  /// Paused at StatusUpdate or Selection waiting for confirm() or an override.
  bool awaiting_operator() const;
  const std::optional<SummaryOutcome>& last_summary() const noexcept { return last_summary_; }
  const std::optional<std::string>& last_ptt_response() const noexcept { return last_ptt_; }

  TranscriptLog& log() noexcept { return *log_; }
  const TranscriptLog& log() const noexcept { return *log_; }
  const Gateway& gateway() const noexcept { return gateway_; }
  const DriverOptions& options() const noexcept { return options_; }
  const GraphPtr& graph() const noexcept { return graph_; }

  /// Persist state.json after every step (and metrics.json on termination).
  void attach_directory(std::shared_ptr<SessionDirectory> dir, int subtasks_total);

 private:
  struct Reply {
    std::string text;
    TranscriptEvent event;
  };

  Session& live();
  void require_live() const;
  Reply query(const PromptEnvelope& prompt,
              const std::function<nlohmann::json(const std::string&)>& annotate = {});
  void drive();
  void step_summarization();
  void step_selection();
  void step_command();
  void flush_changes();
  void note_termination(const std::string& reason);
  void persist();
  template <typename F>
  void guarded(F&& body);

  GraphPtr graph_;
  DriverOptions options_;
  Gateway gateway_;
  std::unique_ptr<TranscriptLog> log_;
  std::optional<Session> session_;
  PromptEnvelope initial_prompt_;
  std::string pending_tool_output_;
  std::optional<SummaryOutcome> last_summary_;
  std::optional<std::string> last_ptt_;
  std::string termination_reason_;
  bool termination_logged_ = false;
  std::uint64_t rollback_from_ = 0;
  std::shared_ptr<SessionDirectory> directory_;
  int subtasks_total_ = 0;
};

}  // namespace stt
