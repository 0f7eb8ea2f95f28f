#include "stt/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "stt/error.hpp"

namespace stt {

std::string_view to_string(PipelineMode mode) noexcept {
  return mode == PipelineMode::Guided ? "guided" : "baseline";
}

std::optional<PipelineMode> parse_pipeline_mode(std::string_view text) noexcept {
  if (text == "guided") return PipelineMode::Guided;
  if (text == "baseline") return PipelineMode::Baseline;
  return std::nullopt;
}

std::string_view to_string(Outcome outcome) noexcept {
  switch (outcome) {
    case Outcome::Succeeded: return "Succeeded";
    case Outcome::Failed: return "Failed";
    case Outcome::Exhausted: return "Exhausted";
    case Outcome::Aborted: return "Aborted";
  }
  return "?";
}

std::optional<Outcome> parse_outcome(std::string_view text) noexcept {
  for (auto o : {Outcome::Succeeded, Outcome::Failed, Outcome::Exhausted, Outcome::Aborted}) {
    if (to_string(o) == text) return o;
  }
  return std::nullopt;
}

std::string_view to_string(PhaseKind kind) noexcept {
  switch (kind) {
    case PhaseKind::Initialization: return "Initialization";
    case PhaseKind::AwaitingToolOutput: return "AwaitingToolOutput";
    case PhaseKind::Summarization: return "Summarization";
    case PhaseKind::StatusUpdate: return "StatusUpdate";
    case PhaseKind::Selection: return "Selection";
    case PhaseKind::CommandGeneration: return "CommandGeneration";
    case PhaseKind::Terminated: return "Terminated";
  }
  return "?";
}

std::string to_string(const Phase& phase) {
  std::string out(to_string(phase.kind));
  if (phase.is_terminated()) {
    out += '(';
    out += to_string(phase.outcome);
    out += ')';
  }
  return out;
}

bool is_legal_transition(const Phase& from, const Phase& to) noexcept {
  using K = PhaseKind;
  if (from.is_terminated()) return false;
  if (to.is_terminated()) return true;
  switch (from.kind) {
    case K::Initialization:
      return to.kind == K::AwaitingToolOutput || to.kind == K::CommandGeneration;
    case K::AwaitingToolOutput:
      return to.kind == K::Summarization || to.kind == K::CommandGeneration ||
             to.kind == K::StatusUpdate;
    case K::Summarization:
      return to.kind == K::StatusUpdate;
    case K::StatusUpdate:
      return to.kind == K::Selection || to.kind == K::CommandGeneration;
    case K::Selection:
      return to.kind == K::CommandGeneration;
    case K::CommandGeneration:
      return to.kind == K::AwaitingToolOutput;
    case K::Terminated:
      return false;
  }
  return false;
}

std::string_view to_string(Origin origin) noexcept {
  return origin == Origin::Engine ? "engine" : "operator";
}

std::string_view to_string(CommandResult::Kind kind) noexcept {
  switch (kind) {
    case CommandResult::Kind::Success: return "success";
    case CommandResult::Kind::InvalidCommand: return "invalid";
    case CommandResult::Kind::ToolOutput: return "output";
  }
  return "?";
}

std::optional<CommandResult::Kind> parse_classification(std::string_view text) noexcept {
  if (text == "output") return CommandResult::Kind::ToolOutput;
  if (text == "invalid") return CommandResult::Kind::InvalidCommand;
  if (text == "success") return CommandResult::Kind::Success;
  return std::nullopt;
}

std::string describe_task(const GraphTask& task) {
  return task.name + " (" + task.id.str() + "): " + task.description;
}

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); });
}

}  // namespace

Session::Session(GraphPtr graph, PipelineMode mode, std::string target, PipelineConfig config)
    : mode_(mode),
      config_(config),
      target_(std::move(target)),
      stt_(std::move(graph)),
      window_(config.repetition_window) {}

std::pair<Session, PromptEnvelope> Session::start(GraphPtr graph, PipelineMode mode,
                                                  std::string target, PipelineConfig config) {
  if (blank(target)) throw Error(ErrorCode::InvalidTarget, "target descriptor is empty");
  if (config.max_invalid_commands < 1) {
    throw Error(ErrorCode::InvalidArgument, "max invalid commands must be at least 1");
  }
  if (config.selection_reprompts < 0) {
    throw Error(ErrorCode::InvalidArgument, "selection re-prompts cannot be negative");
  }
  Session session(std::move(graph), mode, std::move(target), config);

  std::map<std::string, std::string> values{{std::string(placeholder::kTarget), session.target_}};
  if (mode == PipelineMode::Guided) {
    const auto& graph_ref = session.stt_.graph();
    const auto& first = graph_ref.task(graph_ref.initial_task());
    values.emplace(placeholder::kFirstTask, describe_task(first));
    session.stt_.set_status(first.id, TaskStatus::InProgress);
    session.changes_.push_back(
        StatusChange{first.id, TaskStatus::ToDo, TaskStatus::InProgress, Origin::Engine});
    auto envelope = render_prompt(TemplateId::Initial, std::move(values));
    return {std::move(session), std::move(envelope)};
  }
  auto envelope = render_prompt(TemplateId::BaselineInitial, std::move(values));
  return {std::move(session), std::move(envelope)};
}

std::vector<StateChange> Session::take_changes() {
  std::vector<StateChange> out;
  out.swap(changes_);
  return out;
}

std::vector<Candidate> Session::candidates() const {
  if (mode_ != PipelineMode::Guided || !phase_.is(PhaseKind::Selection)) return {};
  return stt_.candidate_next_tasks();
}

void Session::move_to(Phase to) {
  if (!is_legal_transition(phase_, to)) {
    throw Error(ErrorCode::WrongPhase,
                "illegal phase transition " + to_string(phase_) + " -> " + to_string(to));
  }
  transitions_.emplace_back(phase_, to);
  phase_ = to;
}

void Session::require_phase(PhaseKind kind, std::string_view op) const {
  if (!phase_.is(kind)) {
    std::ostringstream msg;
    msg << op << " requires phase " << to_string(kind) << ", session is in "
        << to_string(phase_);
    throw Error(ErrorCode::WrongPhase, msg.str());
  }
}

void Session::require_mode(PipelineMode mode, std::string_view op) const {
  if (mode_ != mode) {
    std::ostringstream msg;
    msg << op << " is only available in " << to_string(mode) << " mode";
    throw Error(ErrorCode::WrongMode, msg.str());
  }
}

TaskId Session::in_progress_or_throw(std::string_view op) const {
  auto ip = stt_.in_progress();
  if (!ip) throw Error(ErrorCode::NothingInProgress, std::string(op) + ": no task in progress");
  return *ip;
}

void Session::accept_initial_response(std::string_view response) {
  require_phase(PhaseKind::Initialization, "accept_initial_response");
  if (mode_ == PipelineMode::Guided) {
    current_command_ = std::string(response);
    move_to({PhaseKind::AwaitingToolOutput});
  } else {
    ptt_.reset(std::string(response));
    baseline_subtask_ = std::string(response);
    move_to({PhaseKind::CommandGeneration});
  }
}

PhaseChange Session::record_command_result(const CommandResult& result) {
  require_phase(PhaseKind::AwaitingToolOutput, "record_command_result");
  PhaseChange change{phase_, phase_, std::nullopt, 0};

  if (mode_ == PipelineMode::Baseline) {
    if (result.kind == CommandResult::Kind::InvalidCommand) {
      ++baseline_invalid_;
      change.invalid_count = baseline_invalid_;
      move_to({PhaseKind::CommandGeneration});
    } else {
      move_to({PhaseKind::Summarization});
    }
    change.to = phase_;
    return change;
  }

  switch (result.kind) {
    case CommandResult::Kind::ToolOutput:
      move_to({PhaseKind::Summarization});
      break;
    case CommandResult::Kind::Success:
      pending_recommendation_ = Recommendation::Proceed;
      move_to({PhaseKind::StatusUpdate});
      break;
    case CommandResult::Kind::InvalidCommand: {
      const TaskId task = in_progress_or_throw("record_command_result");
      const int count = stt_.record_invalid_command(task);
      changes_.push_back(InvalidCommandCount{task, count});
      change.invalid_count = count;
      if (count >= config_.max_invalid_commands) {
        move_to({PhaseKind::StatusUpdate});
        auto failed = apply_status(StatusDecision::Fail, Origin::Engine);
        change.backtrack = std::move(failed.backtrack);
      } else {
        move_to({PhaseKind::CommandGeneration});
      }
      break;
    }
  }
  change.to = phase_;
  return change;
}

PromptEnvelope Session::build_summarization_prompt(std::string_view tool_output) const {
  require_mode(PipelineMode::Guided, "build_summarization_prompt");
  require_phase(PhaseKind::Summarization, "build_summarization_prompt");
  return render_prompt(TemplateId::OutputSummarization,
                       {{std::string(placeholder::kToolOutput), std::string(tool_output)}});
}

void Session::accept_summary(const SummaryOutcome& summary, std::uint64_t source_event,
                             const std::string& recorded_at) {
  require_mode(PipelineMode::Guided, "accept_summary");
  require_phase(PhaseKind::Summarization, "accept_summary");
  const TaskId task = in_progress_or_throw("accept_summary");
  for (const auto& text : summary.key_findings) {
    if (blank(text)) continue;
    stt_.add_finding(task, Finding{text, source_event, recorded_at});
  }
  pending_recommendation_ = summary.recommendation;
  move_to({PhaseKind::StatusUpdate});
}

void Session::enter_selection_or_finish() {
  auto cands = stt_.candidate_next_tasks();
  if (cands.empty()) {
    move_to(Phase::terminated(Outcome::Succeeded));
    return;
  }
  move_to({PhaseKind::Selection});
  selection_failures_ = 0;
  pending_selection_.reset();
  pending_forced_ = false;
  if (cands.size() == 1 && config_.auto_select_singletons) {
    commit_selection(cands.front().id, Origin::Engine);
  }
}

PhaseChange Session::apply_status(StatusDecision decision, Origin origin) {
  require_mode(PipelineMode::Guided, "apply_status");
  require_phase(PhaseKind::StatusUpdate, "apply_status");
  const TaskId task = in_progress_or_throw("apply_status");
  PhaseChange change{phase_, phase_, std::nullopt, 0};
  pending_recommendation_.reset();

  switch (decision) {
    case StatusDecision::Continue:
      move_to({PhaseKind::CommandGeneration});
      break;
    case StatusDecision::Complete:
      stt_.set_status(task, TaskStatus::Completed);
      changes_.push_back(StatusChange{task, TaskStatus::InProgress, TaskStatus::Completed, origin});
      enter_selection_or_finish();
      break;
    case StatusDecision::Fail: {
      auto outcome = stt_.fail_and_backtrack();
      changes_.push_back(StatusChange{task, TaskStatus::InProgress, TaskStatus::Failed, origin});
      if (outcome.kind == BacktrackOutcome::Kind::SessionExhausted) {
        move_to(Phase::terminated(Outcome::Exhausted));
      } else {
        move_to({PhaseKind::Selection});
        selection_failures_ = 0;
        pending_selection_.reset();
        pending_forced_ = false;
        if (outcome.candidates.size() == 1 && config_.auto_select_singletons) {
          commit_selection(outcome.candidates.front().id, Origin::Engine);
        }
      }
      change.backtrack = std::move(outcome);
      break;
    }
  }
  change.to = phase_;
  return change;
}

PhaseChange Session::override_status(const TaskId& task, TaskStatus to) {
  require_mode(PipelineMode::Guided, "override_status");
  if (!phase_.is(PhaseKind::AwaitingToolOutput) && !phase_.is(PhaseKind::StatusUpdate)) {
    throw Error(ErrorCode::WrongPhase,
                "status overrides are accepted while awaiting tool output or at status update, "
                "session is in " + to_string(phase_));
  }
  const TaskStatus from = stt_.status(task);  // UnknownTask
  const bool continuing = from == TaskStatus::InProgress && to == TaskStatus::InProgress;
  if (continuing) {
    if (!phase_.is(PhaseKind::StatusUpdate)) {
      throw Error(ErrorCode::WrongPhase, "task is already in progress");
    }
    return apply_status(StatusDecision::Continue, Origin::Operator);
  }
  if (!is_legal_transition(from, to) || to == TaskStatus::InProgress) {
    std::ostringstream msg;
    msg << "cannot move " << task.str() << " from " << to_string(from) << " to "
        << to_string(to);
    if (to == TaskStatus::InProgress) msg << "; use a selection override";
    throw Error(ErrorCode::IllegalTransition, msg.str());
  }
  const Phase before = phase_;
  if (phase_.is(PhaseKind::AwaitingToolOutput)) move_to({PhaseKind::StatusUpdate});
  auto change = apply_status(
      to == TaskStatus::Completed ? StatusDecision::Complete : StatusDecision::Fail,
      Origin::Operator);
  change.from = before;
  return change;
}

PromptEnvelope Session::build_selection_prompt() const {
  require_mode(PipelineMode::Guided, "build_selection_prompt");
  require_phase(PhaseKind::Selection, "build_selection_prompt");
  const auto cands = stt_.candidate_next_tasks();
  if (cands.empty()) throw Error(ErrorCode::NoCandidates, "no candidate next tasks");

  const auto anchor = stt_.current_anchor();
  std::ostringstream findings;
  if (anchor) {
    const auto& task = stt_.graph().task(*anchor);
    findings << "Completed task: " << task.name << " (" << task.id.str() << ")\n";
    const auto& list = stt_.task_state(*anchor).findings;
    if (list.empty()) {
      findings << "- no findings recorded";
    } else {
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (i) findings << '\n';
        findings << "- " << list[i].text;
      }
    }
  }

  std::ostringstream next;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (i) next << '\n';
    next << (i + 1) << ". " << cands[i].id.str() << " - " << cands[i].name << ": "
         << cands[i].description;
  }
  if (selection_failures_ > 0) {
    next << "\n\nYour previous answer did not name a task from this list. Reply with exactly "
            "one task id from the list above, written verbatim.";
  }
  return render_prompt(TemplateId::TaskSelection,
                       {{std::string(placeholder::kCompletedFindings), findings.str()},
                        {std::string(placeholder::kNextTasks), next.str()}});
}

SelectionResponse Session::accept_selection_response(std::string_view response) {
  require_mode(PipelineMode::Guided, "accept_selection_response");
  require_phase(PhaseKind::Selection, "accept_selection_response");
  const auto cands = stt_.candidate_next_tasks();
  if (cands.empty()) throw Error(ErrorCode::NoCandidates, "no candidate next tasks");
  SelectionResponse out;
  try {
    out.proposal = parse_selection(response, cands);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SelectionUnrecognized) throw;
    ++selection_failures_;
    if (selection_failures_ > config_.selection_reprompts) {
      out.proposal = cands.front().id;
      out.forced = true;
    } else {
      out.reprompt = true;
    }
  }
  pending_selection_ = out.proposal;
  pending_forced_ = out.forced;
  return out;
}

void Session::commit_selection(const TaskId& task, Origin origin) {
  require_mode(PipelineMode::Guided, "commit_selection");
  require_phase(PhaseKind::Selection, "commit_selection");
  const auto anchor = stt_.current_anchor();
  if (!anchor) throw Error(ErrorCode::NoAnchor, "no completed anchor task");
  auto cands = stt_.candidate_next_tasks();
  stt_.commit_selection(task);  // NotACandidate
  const bool forced = origin == Origin::Engine && pending_forced_ && pending_selection_ == task;

  CommitRecord record{task, {}};
  record.candidates.reserve(cands.size());
  for (auto& c : cands) record.candidates.push_back(std::move(c.id));
  commits_.push_back(record);

  changes_.push_back(SelectionCommit{task, *anchor, origin, forced, record.candidates});
  pending_selection_.reset();
  pending_forced_ = false;
  selection_failures_ = 0;
  move_to({PhaseKind::CommandGeneration});
}

PromptEnvelope Session::build_command_prompt() const {
  require_phase(PhaseKind::CommandGeneration, "build_command_prompt");
  std::string value;
  if (mode_ == PipelineMode::Guided) {
    const auto task = stt_.in_progress();
    if (!task) throw Error(ErrorCode::WrongPhase, "build_command_prompt: no task in progress");
    value = describe_task(stt_.graph().task(*task));
  } else {
    value = baseline_subtask_;
  }
  return render_prompt(TemplateId::CommandGeneration,
                       {{std::string(placeholder::kSelectedTask), std::move(value)}});
}

void Session::accept_command(std::string_view response) {
  require_phase(PhaseKind::CommandGeneration, "accept_command");
  current_command_ = std::string(response);
  move_to({PhaseKind::AwaitingToolOutput});
}

PromptEnvelope Session::build_baseline_reasoning_prompt(std::string_view tool_output) const {
  require_mode(PipelineMode::Baseline, "build_baseline_reasoning_prompt");
  require_phase(PhaseKind::Summarization, "build_baseline_reasoning_prompt");
  return render_prompt(TemplateId::BaselineReasoning,
                       {{std::string(placeholder::kCurrentPtt), ptt_.text_for_reasoning_prompt()},
                        {std::string(placeholder::kTestResults), std::string(tool_output)}});
}

void Session::accept_reasoning(std::string_view response) {
  require_mode(PipelineMode::Baseline, "accept_reasoning");
  require_phase(PhaseKind::Summarization, "accept_reasoning");
  ptt_.revise(std::string(response));
  baseline_subtask_ = std::string(response);
  move_to({PhaseKind::StatusUpdate});
  move_to({PhaseKind::CommandGeneration});
}

RepetitionVerdict Session::observe_llm_response(std::string_view response) {
  const auto verdict = window_.push(response);
  if (verdict == RepetitionVerdict::Abort && !phase_.is_terminated()) {
    move_to(Phase::terminated(Outcome::Failed));
  }
  return verdict;
}

void Session::terminate(Outcome outcome) {
  if (phase_.is_terminated()) {
    throw Error(ErrorCode::WrongPhase, "session already " + to_string(phase_));
  }
  move_to(Phase::terminated(outcome));
}

}  // namespace stt
