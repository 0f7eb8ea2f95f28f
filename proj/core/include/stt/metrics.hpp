#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stt/transcript.hpp"

namespace stt {

struct SessionMetrics {
  int subtasks_completed = 0;
  int subtasks_total = 0;
  int queries_total = 0;
  int queries_to_deepest_subtask = 0;

  /// queries_to_deepest_subtask / subtasks_completed; empty when nothing was completed.
  std::optional<double> avg_queries_per_completed_subtask() const;

  friend bool operator==(const SessionMetrics&, const SessionMetrics&) = default;
};

/// Throws SessionStillLive unless the last event is SessionTerminated.
SessionMetrics compute_metrics(std::span<const TranscriptEvent> events, int subtasks_total);

/// Same counting rules without the termination check; used for live progress displays.
SessionMetrics partial_metrics(std::span<const TranscriptEvent> events, int subtasks_total);

struct AggregateMetrics {
  int subtasks_completed = 0;
  int subtasks_total = 0;
  int queries_total = 0;
  int queries_to_deepest_subtask = 0;
  std::size_t sessions = 0;

  std::optional<double> avg_queries_per_completed_subtask() const;
};

/// Throws EmptyInput for an empty list.
AggregateMetrics aggregate(std::span<const SessionMetrics> metrics);

/// Two decimals, or an em dash when undefined.
std::string format_average(std::optional<double> value);

nlohmann::json metrics_to_json(const SessionMetrics& m);
SessionMetrics metrics_from_json(const nlohmann::json& doc);

/// One session's metrics labelled by machine (row) and column (mode, model, ...).
struct ReportRow {
  std::string machine;
  std::string column;
  SessionMetrics metrics;
};

/// Plain-text comparison table: one row per machine, one column group per column label,
/// each showing "completed/total" and average queries per completed subtask, plus a
/// totals row computed with `aggregate`.
std::string render_table(std::span<const ReportRow> rows);

/// {"rows": [...], "totals": {column: {...}}}
nlohmann::json render_json_report(std::span<const ReportRow> rows);

}  // namespace stt
