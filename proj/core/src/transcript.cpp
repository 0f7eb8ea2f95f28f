#include "stt/transcript.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

#include "stt/error.hpp"

namespace stt {

namespace {

constexpr EventKind kAllKinds[] = {
    EventKind::PromptSent,          EventKind::ResponseReceived,
    EventKind::ToolOutputSubmitted, EventKind::StatusChanged,
    EventKind::SelectionCommitted,  EventKind::InvalidCommandRecorded,
    EventKind::CheckpointMarked,    EventKind::SessionTerminated,
};

TaskStatus status_field(const nlohmann::json& payload, const char* key) {
  auto s = parse_task_status(payload.at(key).get<std::string>());
  if (!s) throw Error(ErrorCode::ParseError, std::string("bad status in ") + key);
  return *s;
}

}  // namespace

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::PromptSent: return "PromptSent";
    case EventKind::ResponseReceived: return "ResponseReceived";
    case EventKind::ToolOutputSubmitted: return "ToolOutputSubmitted";
    case EventKind::StatusChanged: return "StatusChanged";
    case EventKind::SelectionCommitted: return "SelectionCommitted";
    case EventKind::InvalidCommandRecorded: return "InvalidCommandRecorded";
    case EventKind::CheckpointMarked: return "CheckpointMarked";
    case EventKind::SessionTerminated: return "SessionTerminated";
  }
  return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view text) noexcept {
  for (auto k : kAllKinds) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

nlohmann::json event_to_json(const TranscriptEvent& event) {
  return {{"seq", event.seq},
          {"kind", to_string(event.kind)},
          {"payload", event.payload},
          {"at", event.at}};
}

std::string event_to_line(const TranscriptEvent& event) {
  // Fixed key order keeps transcripts byte-stable across runs.
  nlohmann::ordered_json doc;
  doc["seq"] = event.seq;
  doc["kind"] = to_string(event.kind);
  doc["payload"] = event.payload;
  doc["at"] = event.at;
  return doc.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

TranscriptEvent event_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.size() != 4) {
    throw Error(ErrorCode::ParseError, "event must be an object with seq, kind, payload, at");
  }
  const auto seq = doc.find("seq");
  const auto kind = doc.find("kind");
  const auto payload = doc.find("payload");
  const auto at = doc.find("at");
  if (seq == doc.end() || !seq->is_number_unsigned() || kind == doc.end() ||
      !kind->is_string() || payload == doc.end() || !payload->is_object() || at == doc.end() ||
      !at->is_string()) {
    throw Error(ErrorCode::ParseError, "event fields missing or mistyped");
  }
  auto k = parse_event_kind(kind->get<std::string>());
  if (!k) throw Error(ErrorCode::ParseError, "unknown event kind " + kind->get<std::string>());
  return {seq->get<std::uint64_t>(), *k, *payload, at->get<std::string>()};
}

RecoveredTranscript recover_transcript(std::string_view body) {
  RecoveredTranscript out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto nl = body.find('\n', pos);
    if (nl == std::string_view::npos) break;
    auto doc = nlohmann::json::parse(body.substr(pos, nl - pos), nullptr, false);
    if (doc.is_discarded()) break;
    TranscriptEvent event;
    try {
      event = event_from_json(doc);
    } catch (const Error&) {
      break;
    }
    if (event.seq != out.events.size() + 1) break;
    out.events.push_back(std::move(event));
    pos = nl + 1;
  }
  out.valid_bytes = pos;
  out.torn = pos < body.size();
  return out;
}

RecoveredTranscript read_transcript_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open transcript " + path.string());
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return recover_transcript(body);
}

TranscriptLog::TranscriptLog(Clock clock) : clock_(std::move(clock)) {}

TranscriptLog::~TranscriptLog() {
  if (file_ != nullptr) std::fclose(file_);
}

std::unique_ptr<TranscriptLog> TranscriptLog::open(const std::filesystem::path& path, Clock clock,
                                                   bool sync) {
  auto log = std::make_unique<TranscriptLog>(std::move(clock));
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    auto recovered = read_transcript_file(path);
    if (recovered.torn) {
      std::filesystem::resize_file(path, recovered.valid_bytes, ec);
      if (ec) throw Error(ErrorCode::StorageFailure, "cannot truncate " + path.string());
      log->torn_ = true;
    }
    log->events_ = std::move(recovered.events);
  }
  log->file_ = std::fopen(path.c_str(), "ab");
  if (log->file_ == nullptr) {
    throw Error(ErrorCode::StorageFailure, "cannot open " + path.string() + " for append");
  }
  log->path_ = path;
  log->sync_ = sync;
  return log;
}

void TranscriptLog::write_line(const TranscriptEvent& event) {
  if (file_ == nullptr) return;
  std::string line = event_to_line(event);
  line += '\n';
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() ||
      std::fflush(file_) != 0) {
    throw Error(ErrorCode::StorageFailure, "write to " + path_->string() + " failed");
  }
  if (sync_ && ::fsync(::fileno(file_)) != 0) {
    throw Error(ErrorCode::StorageFailure, "fsync of " + path_->string() + " failed");
  }
}

void TranscriptLog::commit(const TranscriptEvent& event) {
  std::vector<Observer> observers;
  {
    std::lock_guard lock(mu_);
    if (event.seq != events_.size() + 1) {
      throw Error(ErrorCode::SequenceGap, "expected sequence " +
                                              std::to_string(events_.size() + 1) + ", got " +
                                              std::to_string(event.seq));
    }
    write_line(event);
    events_.push_back(event);
    observers = observers_;
  }
  cv_.notify_all();
  for (const auto& observer : observers) observer(event);
}

TranscriptEvent TranscriptLog::append(EventKind kind, nlohmann::json payload) {
  TranscriptEvent event{last_seq() + 1, kind, std::move(payload), clock_()};
  commit(event);
  return event;
}

void TranscriptLog::append_event(const TranscriptEvent& event) { commit(event); }

TranscriptEvent TranscriptLog::mark_checkpoint(const std::string& label, int index) {
  const auto existing = checkpoints();
  if (!existing.empty() && index <= existing.back().index) {
    throw Error(ErrorCode::OutOfOrderCheckpoint,
                "checkpoint index " + std::to_string(index) + " does not exceed " +
                    std::to_string(existing.back().index));
  }
  return append(EventKind::CheckpointMarked, {{"label", label}, {"index", index}});
}

void TranscriptLog::add_observer(Observer observer) {
  std::lock_guard lock(mu_);
  observers_.push_back(std::move(observer));
}

std::vector<TranscriptEvent> TranscriptLog::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::vector<TranscriptEvent> TranscriptLog::events_from(std::uint64_t seq) const {
  std::lock_guard lock(mu_);
  const std::size_t first = seq <= 1 ? 0 : static_cast<std::size_t>(seq - 1);
  if (first >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(first), events_.end()};
}

std::vector<Checkpoint> TranscriptLog::checkpoints() const {
  std::lock_guard lock(mu_);
  return checkpoints_of(events_);
}

std::uint64_t TranscriptLog::last_seq() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

std::size_t TranscriptLog::size() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

bool TranscriptLog::terminated() const {
  std::lock_guard lock(mu_);
  return !events_.empty() && events_.back().kind == EventKind::SessionTerminated;
}

bool TranscriptLog::wait_for_more(std::uint64_t after, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return events_.size() > after; });
}

std::vector<Checkpoint> checkpoints_of(std::span<const TranscriptEvent> events) {
  std::vector<Checkpoint> out;
  for (const auto& e : events) {
    if (e.kind != EventKind::CheckpointMarked) continue;
    out.push_back({e.payload.value("label", std::string{}), e.payload.value("index", 0), e.seq});
  }
  return out;
}

SttState fold_transcript(std::span<const TranscriptEvent> events, GraphPtr graph) {
  SttState state(std::move(graph));
  // A failed provider call whose step was rolled back names the first event of that step;
  // state changes inside the range never took effect.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> void_ranges;
  for (const auto& e : events) {
    if (e.kind != EventKind::ResponseReceived) continue;
    const auto it = e.payload.find("rolled_back_from");
    if (it != e.payload.end() && it->is_number_integer() && it->get<std::int64_t>() > 0) {
      void_ranges.emplace_back(it->get<std::uint64_t>(), e.seq);
    }
  }
  const auto voided = [&](std::uint64_t seq) {
    return std::any_of(void_ranges.begin(), void_ranges.end(),
                       [&](const auto& r) { return seq >= r.first && seq <= r.second; });
  };
  for (const auto& e : events) {
    if (voided(e.seq)) continue;
    try {
      switch (e.kind) {
        case EventKind::StatusChanged: {
          const TaskId task = e.payload.at("task").get<TaskId>();
          const auto to = status_field(e.payload, "to");
          if (state.status(task) != to) state.set_status(task, to);
          break;
        }
        case EventKind::SelectionCommitted:
          state.commit_selection(e.payload.at("task").get<TaskId>());
          break;
        case EventKind::ResponseReceived: {
          const auto it = e.payload.find("findings");
          if (it == e.payload.end() || !it->is_array() || it->empty()) break;
          const TaskId task = e.payload.at("task").get<TaskId>();
          for (const auto& text : *it) {
            state.add_finding(task, Finding{text.get<std::string>(), e.seq, e.at});
          }
          break;
        }
        case EventKind::InvalidCommandRecorded: {
          const auto it = e.payload.find("task");
          if (it != e.payload.end() && it->is_string()) {
            state.record_invalid_command(it->get<TaskId>());
          }
          break;
        }
        default:
          break;
      }
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::ParseError,
                  "event " + std::to_string(e.seq) + " has a malformed payload: " + ex.what());
    }
  }
  return state;
}

}  // namespace stt
