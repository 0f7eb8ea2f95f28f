#include "stt/engine.hpp"

#include <fstream>
#include <iterator>

#include "stt/error.hpp"

namespace stt {

void write_file_atomic(const std::filesystem::path& path, const std::string& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + tmp.string());
    out << body;
    out.flush();
    if (!out) throw Error(ErrorCode::StorageFailure, "write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, "cannot replace " + path.string());
}

namespace {

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::ParseError, path.string() + " is not JSON");
  return doc;
}

nlohmann::json task_or_null(const std::optional<TaskId>& id) {
  return id ? nlohmann::json(id->str()) : nlohmann::json(nullptr);
}

std::string default_reason(Outcome outcome) {
  switch (outcome) {
    case Outcome::Succeeded: return "completed task has no further candidates";
    case Outcome::Failed: return "identical responses for consecutive prompts";
    case Outcome::Exhausted: return "no candidate task remains";
    case Outcome::Aborted: return "aborted";
  }
  return {};
}

}  // namespace

SessionDirectory::SessionDirectory(std::filesystem::path root) : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, "cannot create " + root_.string());
}

void SessionDirectory::write_meta(const nlohmann::json& meta) const {
  write_file_atomic(meta_path(), meta.dump(2) + "\n");
}

void SessionDirectory::write_state(const SttState& state) const {
  write_file_atomic(state_path(), state_to_json(state).dump(2) + "\n");
}

void SessionDirectory::write_metrics(const SessionMetrics& metrics) const {
  write_file_atomic(metrics_path(), metrics_to_json(metrics).dump(2) + "\n");
}

nlohmann::json SessionDirectory::read_meta() const { return read_json_file(meta_path()); }

SessionMetrics SessionDirectory::read_metrics() const {
  return metrics_from_json(read_json_file(metrics_path()));
}

SessionDriver::SessionDriver(GraphPtr graph, std::shared_ptr<Provider> provider,
                             std::unique_ptr<TranscriptLog> log, DriverOptions options)
    : graph_(std::move(graph)),
      options_(std::move(options)),
      gateway_(std::move(provider), options_.turn_budget),
      log_(std::move(log)) {
  if (!graph_) throw Error(ErrorCode::InvalidArgument, "driver needs a graph");
  if (!log_) log_ = std::make_unique<TranscriptLog>();
}

void SessionDriver::attach_directory(std::shared_ptr<SessionDirectory> dir, int subtasks_total) {
  directory_ = std::move(dir);
  subtasks_total_ = subtasks_total;
}

const Session& SessionDriver::session() const {
  if (!session_) throw Error(ErrorCode::WrongPhase, "session has not started");
  return *session_;
}

Session& SessionDriver::live() {
  if (!session_) throw Error(ErrorCode::WrongPhase, "session has not started");
  return *session_;
}

void SessionDriver::require_live() const {
  const auto& s = session();
  if (s.phase().is_terminated()) {
    throw Error(ErrorCode::WrongPhase, "session is " + to_string(s.phase()));
  }
}

const Phase& SessionDriver::phase() const { return session().phase(); }

bool SessionDriver::terminated() const {
  return session_ && session_->phase().is_terminated();
}

bool SessionDriver::awaiting_operator() const {
  if (!session_ || options_.auto_apply) return false;
  const auto& s = *session_;
  return (s.phase().is(PhaseKind::StatusUpdate) && s.pending_recommendation()) ||
         (s.phase().is(PhaseKind::Selection) && s.pending_selection());
}

template <typename F>
void SessionDriver::guarded(F&& body) {
  const std::optional<Session> snapshot = session_;
  const auto history = gateway_.history().size();
  const auto tool_output = pending_tool_output_;
  const auto summary = last_summary_;
  const auto ptt = last_ptt_;
  rollback_from_ = log_->last_seq() + 1;
  try {
    body();
    rollback_from_ = 0;
    persist();
  } catch (const Error& e) {
    rollback_from_ = 0;
    if (!is_provider_failure(e.code())) throw;
    if (options_.on_provider_failure == FailurePolicy::Rollback) {
      session_ = snapshot;
      gateway_.truncate_history(history);
      pending_tool_output_ = tool_output;
      last_summary_ = summary;
      last_ptt_ = ptt;
    } else if (session_ && !session_->phase().is_terminated()) {
      flush_changes();
      session_->terminate(Outcome::Failed);
      termination_reason_ = std::string("provider failure: ") + e.what();
      note_termination(termination_reason_);
    }
    persist();
    throw;
  }
}

void SessionDriver::start() {
  if (session_) throw Error(ErrorCode::WrongPhase, "session already started");
  auto [session, prompt] = Session::start(graph_, options_.mode, options_.target,
                                          options_.pipeline);
  session_.emplace(std::move(session));
  initial_prompt_ = std::move(prompt);
  guarded([&] { drive(); });
}

void SessionDriver::resume() {
  require_live();
  guarded([&] { drive(); });
}

void SessionDriver::submit(const CommandResult& result) {
  require_live();
  auto& s = live();
  if (!s.phase().is(PhaseKind::AwaitingToolOutput)) {
    throw Error(ErrorCode::WrongPhase,
                "tool output is accepted while awaiting it, session is in " +
                    to_string(s.phase()));
  }
  log_->append(EventKind::ToolOutputSubmitted,
               {{"classification", to_string(result.kind)},
                {"text", result.text},
                {"task", task_or_null(s.stt().in_progress())}});
  pending_tool_output_ = result.text;
  guarded([&] {
    const auto change = s.record_command_result(result);
    if (s.mode() == PipelineMode::Baseline &&
        result.kind == CommandResult::Kind::InvalidCommand) {
      log_->append(EventKind::InvalidCommandRecorded,
                   {{"task", nullptr}, {"count", change.invalid_count}});
    }
    if (s.mode() == PipelineMode::Guided && result.kind == CommandResult::Kind::Success &&
        s.phase().is(PhaseKind::StatusUpdate)) {
      s.apply_status(StatusDecision::Complete, Origin::Operator);
    }
    drive();
  });
}

void SessionDriver::override_status(const TaskId& task, TaskStatus to) {
  require_live();
  auto& s = live();
  guarded([&] {
    s.override_status(task, to);
    drive();
  });
}

void SessionDriver::override_selection(const TaskId& task) {
  require_live();
  auto& s = live();
  if (!s.phase().is(PhaseKind::Selection)) {
    throw Error(ErrorCode::WrongPhase,
                "selection overrides are accepted in the Selection phase, session is in " +
                    to_string(s.phase()));
  }
  guarded([&] {
    s.commit_selection(task, Origin::Operator);
    drive();
  });
}

void SessionDriver::confirm() {
  require_live();
  auto& s = live();
  if (!awaiting_operator()) throw Error(ErrorCode::WrongPhase, "nothing awaits confirmation");
  guarded([&] {
    if (s.phase().is(PhaseKind::StatusUpdate)) {
      s.apply_status(*s.pending_recommendation() == Recommendation::Proceed
                         ? StatusDecision::Complete
                         : StatusDecision::Continue,
                     Origin::Engine);
    } else {
      s.commit_selection(*s.pending_selection(), Origin::Engine);
    }
    drive();
  });
}

void SessionDriver::abort(const std::string& reason) { finish(Outcome::Aborted, reason); }

void SessionDriver::finish(Outcome outcome, const std::string& reason) {
  require_live();
  flush_changes();
  live().terminate(outcome);
  note_termination(reason);
  persist();
}

SessionDriver::Reply SessionDriver::query(
    const PromptEnvelope& prompt, const std::function<nlohmann::json(const std::string&)>& annotate) {
  const auto query_no = gateway_.next_sequence();
  log_->append(EventKind::PromptSent, {{"query", query_no},
                                       {"template", to_string(prompt.template_id)},
                                       {"text", prompt.rendered_text},
                                       {"placeholders", prompt.placeholders}});
  std::string text;
  try {
    text = gateway_.send(prompt);
  } catch (const Error& e) {
    const auto& record = gateway_.records().back();
    nlohmann::json payload{{"query", query_no},
                           {"template", to_string(prompt.template_id)},
                           {"outcome", to_string(record.outcome)},
                           {"error", to_string(e.code())},
                           {"message", e.what()}};
    if (options_.on_provider_failure == FailurePolicy::Rollback && rollback_from_ > 0) {
      payload["rolled_back_from"] = rollback_from_;
    }
    log_->append(EventKind::ResponseReceived, std::move(payload));
    throw;
  }
  nlohmann::json payload{{"query", query_no},
                         {"template", to_string(prompt.template_id)},
                         {"outcome", "Ok"},
                         {"text", text}};
  if (annotate) payload.update(annotate(text));
  auto event = log_->append(EventKind::ResponseReceived, std::move(payload));
  live().observe_llm_response(text);
  return {std::move(text), std::move(event)};
}

void SessionDriver::flush_changes() {
  if (!session_) return;
  for (auto& change : session_->take_changes()) {
    if (const auto* sc = std::get_if<StatusChange>(&change)) {
      log_->append(EventKind::StatusChanged, {{"task", sc->task.str()},
                                              {"from", to_string(sc->from)},
                                              {"to", to_string(sc->to)},
                                              {"origin", to_string(sc->origin)}});
    } else if (const auto* sel = std::get_if<SelectionCommit>(&change)) {
      auto cands = nlohmann::json::array();
      for (const auto& c : sel->candidates) cands.push_back(c.str());
      log_->append(EventKind::SelectionCommitted, {{"task", sel->task.str()},
                                                   {"anchor", sel->anchor.str()},
                                                   {"origin", to_string(sel->origin)},
                                                   {"forced", sel->forced},
                                                   {"candidates", std::move(cands)}});
    } else if (const auto* inv = std::get_if<InvalidCommandCount>(&change)) {
      log_->append(EventKind::InvalidCommandRecorded,
                   {{"task", inv->task.str()},
                    {"count", inv->count},
                    {"threshold", session_->config().max_invalid_commands}});
    }
  }
}

void SessionDriver::note_termination(const std::string& reason) {
  if (termination_logged_ || !terminated()) return;
  const auto outcome = session_->phase().outcome;
  log_->append(EventKind::SessionTerminated,
               {{"outcome", to_string(outcome)},
                {"reason", reason.empty() ? default_reason(outcome) : reason}});
  termination_logged_ = true;
}

void SessionDriver::persist() {
  if (!directory_ || !session_) return;
  directory_->write_state(session_->stt());
  if (termination_logged_) {
    const auto events = log_->events();
    directory_->write_metrics(compute_metrics(events, subtasks_total_));
  }
}

void SessionDriver::drive() {
  while (true) {
    flush_changes();
    auto& s = live();
    if (s.phase().is_terminated()) {
      note_termination(termination_reason_);
      return;
    }
    switch (s.phase().kind) {
      case PhaseKind::Initialization: {
        auto reply = query(initial_prompt_);
        if (s.phase().is_terminated()) break;
        if (s.mode() == PipelineMode::Baseline) last_ptt_ = reply.text;
        s.accept_initial_response(reply.text);
        break;
      }
      case PhaseKind::AwaitingToolOutput:
        return;
      case PhaseKind::Summarization:
        step_summarization();
        break;
      case PhaseKind::StatusUpdate: {
        if (!options_.auto_apply || !s.pending_recommendation()) return;
        s.apply_status(*s.pending_recommendation() == Recommendation::Proceed
                           ? StatusDecision::Complete
                           : StatusDecision::Continue,
                       Origin::Engine);
        break;
      }
      case PhaseKind::Selection:
        if (s.pending_selection()) {
          if (!options_.auto_apply) return;
          s.commit_selection(*s.pending_selection(), Origin::Engine);
          break;
        }
        step_selection();
        break;
      case PhaseKind::CommandGeneration:
        step_command();
        break;
      case PhaseKind::Terminated:
        return;
    }
  }
}

void SessionDriver::step_summarization() {
  auto& s = live();
  if (s.mode() == PipelineMode::Baseline) {
    auto prompt = s.build_baseline_reasoning_prompt(pending_tool_output_);
    const int revision = s.ptt().revision() + 1;
    auto reply = query(prompt, [&](const std::string&) {
      return nlohmann::json{{"ptt_revision", revision}};
    });
    if (s.phase().is_terminated()) return;
    s.accept_reasoning(reply.text);
    last_ptt_ = reply.text;
    return;
  }
  auto prompt = s.build_summarization_prompt(pending_tool_output_);
  const auto task = s.stt().in_progress();
  SummaryOutcome summary;
  auto reply = query(prompt, [&](const std::string& text) {
    summary = parse_summary(text);
    std::erase_if(summary.key_findings, [](const std::string& f) {
      return f.find_first_not_of(" \t\r\n") == std::string::npos;
    });
    return nlohmann::json{{"task", task_or_null(task)},
                          {"findings", summary.key_findings},
                          {"recommendation", to_string(summary.recommendation)}};
  });
  if (s.phase().is_terminated()) return;
  s.accept_summary(summary, reply.event.seq, reply.event.at);
  last_summary_ = std::move(summary);
}

void SessionDriver::step_selection() {
  auto& s = live();
  auto prompt = s.build_selection_prompt();
  const auto cands = s.stt().candidate_next_tasks();
  auto reply = query(prompt, [&](const std::string& text) {
    nlohmann::json proposal = nullptr;
    try {
      proposal = parse_selection(text, cands).str();
    } catch (const Error&) {
    }
    return nlohmann::json{{"proposal", proposal}};
  });
  if (s.phase().is_terminated()) return;
  s.accept_selection_response(reply.text);
}

void SessionDriver::step_command() {
  auto& s = live();
  auto prompt = s.build_command_prompt();
  const auto task = s.stt().in_progress();
  auto reply = query(prompt, [&](const std::string&) {
    return nlohmann::json{{"task", task_or_null(task)}};
  });
  if (s.phase().is_terminated()) return;
  s.accept_command(reply.text);
}

}  // namespace stt
