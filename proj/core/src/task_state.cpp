#include "stt/task_state.hpp"

#include <algorithm>

#include "stt/error.hpp"

namespace stt {

std::string_view to_string(BacktrackOutcome::Kind kind) noexcept {
  switch (kind) {
    case BacktrackOutcome::Kind::NewCandidates: return "NewCandidates";
    case BacktrackOutcome::Kind::PoppedFrame: return "PoppedFrame";
    case BacktrackOutcome::Kind::SessionExhausted: return "SessionExhausted";
  }
  return "SessionExhausted";
}

namespace {

bool contains(std::span<const TaskId> ids, const TaskId& id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

SttState::SttState(GraphPtr graph) : graph_(std::move(graph)) {
  if (!graph_) throw Error(ErrorCode::InvalidArgument, "SttState needs a graph");
  states_.reserve(graph_->size());
  for (const auto& t : graph_->tasks()) states_.push_back(TaskRunState{t.id, TaskStatus::ToDo, {}, 0});
}

const TaskRunState& SttState::task_state(const TaskId& id) const {
  auto idx = graph_->index_of(id);
  if (!idx) throw Error(ErrorCode::UnknownTask, "no task '" + id.str() + "'");
  return states_[*idx];
}

TaskRunState& SttState::mutable_state(const TaskId& id) {
  return const_cast<TaskRunState&>(task_state(id));
}

std::optional<TaskId> SttState::in_progress() const {
  for (const auto& s : states_) {
    if (s.status == TaskStatus::InProgress) return s.task;
  }
  return std::nullopt;
}

void SttState::set_status(const TaskId& id, TaskStatus to) {
  auto& st = mutable_state(id);
  if (!is_legal_transition(st.status, to)) {
    throw Error(ErrorCode::IllegalTransition, id.str() + ": " + std::string(to_string(st.status)) +
                                                  " -> " + std::string(to_string(to)));
  }
  switch (to) {
    case TaskStatus::InProgress: {
      if (auto cur = in_progress()) {
        throw Error(ErrorCode::SecondInProgress, cur->str() + " is already in-progress");
      }
      if (!stack_.empty() || id != graph_->initial_task()) {
        throw Error(ErrorCode::NotACandidate,
                    id.str() + " can only become in-progress through task selection");
      }
      st.status = TaskStatus::InProgress;
      st.invalid_command_count = 0;
      return;
    }
    case TaskStatus::Completed:
      st.status = TaskStatus::Completed;
      return;
    case TaskStatus::Failed:
      fail_and_backtrack();
      return;
    case TaskStatus::ToDo:
      break;
  }
}

void SttState::add_finding(const TaskId& id, Finding finding) {
  auto& st = mutable_state(id);
  if (st.status == TaskStatus::ToDo) {
    throw Error(ErrorCode::TaskNotStarted, id.str() + " has not been started");
  }
  if (finding.text.empty()) throw Error(ErrorCode::InvalidFinding, "finding text is empty");
  if (finding.source_event == 0) {
    throw Error(ErrorCode::InvalidFinding, "finding must reference a transcript event");
  }
  st.findings.push_back(std::move(finding));
}

int SttState::record_invalid_command(const TaskId& id) {
  auto& st = mutable_state(id);
  if (st.status != TaskStatus::InProgress) {
    throw Error(ErrorCode::NothingInProgress, id.str() + " is not in-progress");
  }
  return ++st.invalid_command_count;
}

std::optional<TaskId> SttState::current_anchor() const {
  if (stack_.empty()) {
    if (status(graph_->initial_task()) == TaskStatus::Completed) return graph_->initial_task();
    return std::nullopt;
  }
  const auto& top = stack_.back();
  if (!top.chosen) return top.anchor;
  if (status(*top.chosen) == TaskStatus::Completed) return *top.chosen;
  return std::nullopt;
}

std::vector<Candidate> SttState::candidates_for(const TaskId& anchor,
                                                std::span<const TaskId> excluded) const {
  std::vector<Candidate> out;
  for (const auto& n : graph_->task(anchor).next) {
    if (contains(excluded, n)) continue;
    if (is_terminal(status(n))) continue;
    const auto& t = graph_->task(n);
    out.push_back(Candidate{t.id, t.name, t.description});
  }
  return out;
}

std::vector<Candidate> SttState::candidate_next_tasks() const {
  auto anchor = current_anchor();
  if (!anchor) throw Error(ErrorCode::NoAnchor, "current task is not completed");
  if (!stack_.empty() && !stack_.back().chosen) {
    return candidates_for(*anchor, stack_.back().excluded);
  }
  return candidates_for(*anchor, {});
}

void SttState::commit_selection(const TaskId& chosen) {
  const auto candidates = candidate_next_tasks();
  const bool ok = std::any_of(candidates.begin(), candidates.end(),
                              [&](const Candidate& c) { return c.id == chosen; });
  if (!ok) {
    throw Error(ErrorCode::NotACandidate, chosen.str() + " is not in the candidate set");
  }
  if (!stack_.empty() && !stack_.back().chosen) {
    stack_.back().chosen = chosen;
  } else {
    stack_.push_back(SelectionFrame{*current_anchor(), {}, chosen});
  }
  auto& st = mutable_state(chosen);
  st.status = TaskStatus::InProgress;
  st.invalid_command_count = 0;
}

BacktrackOutcome SttState::fail_and_backtrack() {
  auto current = in_progress();
  if (!current) throw Error(ErrorCode::NothingInProgress, "no task is in-progress");

  BacktrackOutcome outcome;
  outcome.failed = *current;
  mutable_state(*current).status = TaskStatus::Failed;

  if (stack_.empty()) {
    outcome.kind = BacktrackOutcome::Kind::SessionExhausted;
    return outcome;
  }
  {
    auto& top = stack_.back();
    if (!contains(top.excluded, *current)) top.excluded.push_back(*current);
    top.chosen.reset();
  }
  for (;;) {
    auto& top = stack_.back();
    auto candidates = candidates_for(top.anchor, top.excluded);
    if (!candidates.empty()) {
      outcome.kind = outcome.frames_popped == 0 ? BacktrackOutcome::Kind::NewCandidates
                                                : BacktrackOutcome::Kind::PoppedFrame;
      outcome.candidates = std::move(candidates);
      return outcome;
    }
    const TaskId exhausted = top.anchor;
    stack_.pop_back();
    ++outcome.frames_popped;
    if (stack_.empty()) {
      outcome.kind = BacktrackOutcome::Kind::SessionExhausted;
      return outcome;
    }
    auto& below = stack_.back();
    if (!contains(below.excluded, exhausted)) below.excluded.push_back(exhausted);
    below.chosen.reset();
  }
}

std::vector<TaskId> SttState::selection_path() const {
  std::vector<TaskId> path{graph_->initial_task()};
  for (const auto& f : stack_) {
    if (f.chosen) path.push_back(*f.chosen);
  }
  return path;
}

void SttState::render(std::string& out, const TaskId& id, const std::string& number,
                      std::size_t depth, std::size_t frame) const {
  const std::string indent(depth * 4, ' ');
  const auto& st = task_state(id);
  out += indent + number + (depth == 0 ? ". " : " ") + graph_->task(id).name + " - (" +
         std::string(to_string(st.status)) + ")\n";
  for (const auto& f : st.findings) out += indent + "    - " + f.text + "\n";

  if (frame >= stack_.size() || stack_[frame].anchor != id) return;
  const auto& fr = stack_[frame];
  int child = 0;
  for (const auto& n : graph_->task(id).next) {
    const bool chosen = fr.chosen && *fr.chosen == n;
    if (!chosen && !contains(fr.excluded, n)) continue;
    const std::string child_number = number + "." + std::to_string(++child);
    render(out, n, child_number, depth + 1, chosen ? frame + 1 : stack_.size());
  }
}

std::string SttState::snapshot() const {
  std::string out;
  render(out, graph_->initial_task(), "1", 0, 0);
  return out;
}

nlohmann::json state_to_json(const SttState& state) {
  using nlohmann::json;
  json tasks = json::array();
  for (const auto& s : state.task_states()) {
    json findings = json::array();
    for (const auto& f : s.findings) {
      findings.push_back(
          {{"text", f.text}, {"source_event", f.source_event}, {"recorded_at", f.recorded_at}});
    }
    tasks.push_back({{"task", s.task},
                     {"status", to_string(s.status)},
                     {"invalid_command_count", s.invalid_command_count},
                     {"findings", std::move(findings)}});
  }
  json stack = json::array();
  for (const auto& f : state.selection_stack()) {
    stack.push_back({{"anchor", f.anchor},
                     {"excluded", f.excluded},
                     {"chosen", f.chosen ? json(*f.chosen) : json(nullptr)}});
  }
  return {{"header",
           {{"format", "stt-session-state"},
            {"version", 1},
            {"graph_hash", state.graph().content_hash()}}},
          {"task_states", std::move(tasks)},
          {"selection_stack", std::move(stack)}};
}

SttState state_from_json(const nlohmann::json& doc, GraphPtr graph) {
  try {
    const auto& header = doc.at("header");
    if (header.at("format").get<std::string>() != "stt-session-state") {
      throw Error(ErrorCode::ParseError, "not a session state document");
    }
    if (header.at("graph_hash").get<std::string>() != graph->content_hash()) {
      throw Error(ErrorCode::GraphMismatch,
                  "session state was written against a different graph");
    }
    SttState state(graph);
    for (const auto& jt : doc.at("task_states")) {
      auto& st = state.mutable_state(jt.at("task").get<TaskId>());
      auto status = parse_task_status(jt.at("status").get<std::string>());
      if (!status) throw Error(ErrorCode::ParseError, "bad status " + jt.at("status").dump());
      st.status = *status;
      st.invalid_command_count = jt.at("invalid_command_count").get<int>();
      for (const auto& jf : jt.at("findings")) {
        st.findings.push_back(Finding{jf.at("text").get<std::string>(),
                                      jf.at("source_event").get<std::uint64_t>(),
                                      jf.at("recorded_at").get<std::string>()});
      }
    }
    for (const auto& jf : doc.at("selection_stack")) {
      SelectionFrame f;
      f.anchor = jf.at("anchor").get<TaskId>();
      f.excluded = jf.at("excluded").get<std::vector<TaskId>>();
      if (!jf.at("chosen").is_null()) f.chosen = jf.at("chosen").get<TaskId>();
      state.stack_.push_back(std::move(f));
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("session state: ") + e.what());
  }
}

}  // namespace stt
