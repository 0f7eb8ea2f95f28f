#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stt/clock.hpp"
#include "stt/task_state.hpp"

namespace stt {

enum class EventKind {
  PromptSent,
  ResponseReceived,
  ToolOutputSubmitted,
  StatusChanged,
  SelectionCommitted,
  InvalidCommandRecorded,
  CheckpointMarked,
  SessionTerminated,
};

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view text) noexcept;

struct TranscriptEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::PromptSent;
  nlohmann::json payload = nlohmann::json::object();
  std::string at;

  friend bool operator==(const TranscriptEvent&, const TranscriptEvent&) = default;
};

/// {seq, kind, payload, at}
nlohmann::json event_to_json(const TranscriptEvent& event);
/// Throws ParseError on a malformed object.
TranscriptEvent event_from_json(const nlohmann::json& doc);
/// One line, no trailing newline.
std::string event_to_line(const TranscriptEvent& event);

struct Checkpoint {
  std::string label;
  int index = 0;
  std::uint64_t marked_at_event = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Longest valid prefix of a transcript file body.
struct RecoveredTranscript {
  std::vector<TranscriptEvent> events;
  std::size_t valid_bytes = 0;
  bool torn = false;  // bytes after the valid prefix were discarded
};

/// A line is valid when it is newline-terminated, parses, and carries the next sequence number.
RecoveredTranscript recover_transcript(std::string_view body);
RecoveredTranscript read_transcript_file(const std::filesystem::path& path);

/// Append-only, gap-free event log, optionally mirrored to a JSON-lines file.
/// One writer; readers may snapshot or wait for new events from other threads.
class TranscriptLog {
 public:
  using Observer = std::function<void(const TranscriptEvent&)>;

  explicit TranscriptLog(Clock clock = system_clock());
  ~TranscriptLog();

  TranscriptLog(const TranscriptLog&) = delete;
  TranscriptLog& operator=(const TranscriptLog&) = delete;

  /// Opens (creating if needed) a file-backed log. An existing file is recovered and its
  /// torn tail, if any, truncated away. `sync` adds an fsync after every append.
  static std::unique_ptr<TranscriptLog> open(const std::filesystem::path& path,
                                             Clock clock = system_clock(), bool sync = false);

  /// Assigns the next sequence number and the clock's timestamp.
  TranscriptEvent append(EventKind kind, nlohmann::json payload);

  /// Appends a fully formed event. Throws SequenceGap unless seq == last + 1.
  void append_event(const TranscriptEvent& event);

  /// Throws OutOfOrderCheckpoint unless index exceeds every earlier index.
  TranscriptEvent mark_checkpoint(const std::string& label, int index);

  /// Observers run after each append, outside the lock; they may append themselves.
  void add_observer(Observer observer);

  std::vector<TranscriptEvent> events() const;
  std::vector<TranscriptEvent> events_from(std::uint64_t seq) const;
  std::vector<Checkpoint> checkpoints() const;
  std::uint64_t last_seq() const;
  std::size_t size() const;
  bool terminated() const;
  const std::optional<std::filesystem::path>& path() const noexcept { return path_; }
  bool recovered_torn_tail() const noexcept { return torn_; }

  /// Blocks until an event with seq > `after` exists or the timeout passes.
  bool wait_for_more(std::uint64_t after, std::chrono::milliseconds timeout) const;

 private:
  void write_line(const TranscriptEvent& event);
  void commit(const TranscriptEvent& event);

  Clock clock_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<TranscriptEvent> events_;
  std::vector<Observer> observers_;
  std::optional<std::filesystem::path> path_;
  std::FILE* file_ = nullptr;
  bool sync_ = false;
  bool torn_ = false;
};

/// Rebuilds run state by replaying StatusChanged, SelectionCommitted, ResponseReceived
/// findings and InvalidCommandRecorded events in order.
SttState fold_transcript(std::span<const TranscriptEvent> events, GraphPtr graph);

/// Checkpoints found in an event sequence, in order.
std::vector<Checkpoint> checkpoints_of(std::span<const TranscriptEvent> events);

}  // namespace stt
