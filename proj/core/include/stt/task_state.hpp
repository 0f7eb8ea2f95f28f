#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stt/task_graph.hpp"

namespace stt {

/// One summarized insight attached to a task.
struct Finding {
  std::string text;
  std::uint64_t source_event = 0;  // transcript sequence number it was summarized from
  std::string recorded_at;

  friend bool operator==(const Finding&, const Finding&) = default;
};

/// Dynamic half of a task: status, findings and the invalid-command counter.
struct TaskRunState {
  TaskId task;
  TaskStatus status = TaskStatus::ToDo;
  std::vector<Finding> findings;
  int invalid_command_count = 0;

  friend bool operator==(const TaskRunState&, const TaskRunState&) = default;
};

/// Selection context under one completed anchor task.
struct SelectionFrame {
  TaskId anchor;
  std::vector<TaskId> excluded;  // set semantics, insertion ordered
  std::optional<TaskId> chosen;

  friend bool operator==(const SelectionFrame&, const SelectionFrame&) = default;
};

struct Candidate {
  TaskId id;
  std::string name;
  std::string description;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct BacktrackOutcome {
  enum class Kind { NewCandidates, PoppedFrame, SessionExhausted };

  Kind kind = Kind::SessionExhausted;
  TaskId failed;
  std::vector<Candidate> candidates;  // empty for SessionExhausted
  int frames_popped = 0;
};

std::string_view to_string(BacktrackOutcome::Kind kind) noexcept;

/// Live run state over an immutable AttackGraph.
///
/// Invariants held after every public call:
///  - at most one task is InProgress;
///  - the InProgress task is the top frame's `chosen`, or the initial task when the
///    selection stack is empty;
///  - Completed and Failed are never left.
/// Mutators validate before touching anything, so a throwing call leaves the state as it was.
class SttState {
 public:
  explicit SttState(GraphPtr graph);

  const AttackGraph& graph() const noexcept { return *graph_; }
  const GraphPtr& graph_ptr() const noexcept { return graph_; }

  const TaskRunState& task_state(const TaskId& id) const;
  TaskStatus status(const TaskId& id) const { return task_state(id).status; }
  std::span<const TaskRunState> task_states() const noexcept { return states_; }
  std::span<const SelectionFrame> selection_stack() const noexcept { return stack_; }
  std::optional<TaskId> in_progress() const;

  /// Throws UnknownTask, IllegalTransition, SecondInProgress. Setting a task other than the
  /// initial one InProgress must go through commit_selection (NotACandidate otherwise).
  /// Setting Failed runs fail_and_backtrack.
  void set_status(const TaskId& id, TaskStatus to);

  /// Throws TaskNotStarted for a ToDo task, InvalidFinding for empty text or source_event 0.
  void add_finding(const TaskId& id, Finding finding);

  /// Increments the counter of the InProgress task and returns the new count.
  int record_invalid_command(const TaskId& id);

  /// Completed task whose next-list is currently being chosen from, if any.
  std::optional<TaskId> current_anchor() const;

  /// anchor.next minus excluded, Completed and Failed tasks; graph edge order. Throws NoAnchor.
  std::vector<Candidate> candidate_next_tasks() const;

  /// Throws NotACandidate (or NoAnchor).
  void commit_selection(const TaskId& chosen);

  /// Throws NothingInProgress.
  BacktrackOutcome fail_and_backtrack();

  /// Initial task followed by each frame's chosen task.
  std::vector<TaskId> selection_path() const;

  /// Numbered text tree along the selection path (1., 1.1, 1.1.1) with statuses and
  /// findings as bullets one level deeper. Deterministic.
  std::string snapshot() const;

  friend bool operator==(const SttState& a, const SttState& b) {
    return a.graph_->content_hash() == b.graph_->content_hash() && a.states_ == b.states_ &&
           a.stack_ == b.stack_;
  }

 private:
  friend SttState state_from_json(const nlohmann::json& doc, GraphPtr graph);

  TaskRunState& mutable_state(const TaskId& id);
  std::vector<Candidate> candidates_for(const TaskId& anchor,
                                        std::span<const TaskId> excluded) const;
  void render(std::string& out, const TaskId& id, const std::string& number, std::size_t depth,
              std::size_t frame) const;

  GraphPtr graph_;
  std::vector<TaskRunState> states_;  // parallel to graph().tasks()
  std::vector<SelectionFrame> stack_;
};

/// Session state file body: header with the graph content hash, task states, selection stack.
nlohmann::json state_to_json(const SttState& state);

/// Throws GraphMismatch when the header hash differs from `graph`, ParseError on bad shape.
SttState state_from_json(const nlohmann::json& doc, GraphPtr graph);

}  // namespace stt
