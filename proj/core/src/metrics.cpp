#include "stt/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "stt/error.hpp"

namespace stt {

namespace {

const char* const kUndefined = "—";

std::vector<std::string> ordered_unique(std::span<const ReportRow> rows,
                                        std::string ReportRow::*field) {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.*field) == out.end()) out.push_back(r.*field);
  }
  return out;
}

std::string fraction(int done, int total) {
  return std::to_string(done) + "/" + std::to_string(total);
}

// Display width in code points, so the em dash pads like one column.
std::size_t width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

std::string pad(const std::string& s, std::size_t w) {
  const auto n = width(s);
  return n >= w ? s : s + std::string(w - n, ' ');
}

}  // namespace

std::optional<double> SessionMetrics::avg_queries_per_completed_subtask() const {
  if (subtasks_completed <= 0) return std::nullopt;
  return static_cast<double>(queries_to_deepest_subtask) / subtasks_completed;
}

std::optional<double> AggregateMetrics::avg_queries_per_completed_subtask() const {
  if (subtasks_completed <= 0) return std::nullopt;
  return static_cast<double>(queries_to_deepest_subtask) / subtasks_completed;
}

SessionMetrics partial_metrics(std::span<const TranscriptEvent> events, int subtasks_total) {
  SessionMetrics m;
  m.subtasks_total = subtasks_total;
  const auto cps = checkpoints_of(events);
  m.subtasks_completed = static_cast<int>(cps.size());
  const std::uint64_t deepest = cps.empty() ? 0 : cps.back().marked_at_event;
  for (const auto& e : events) {
    if (e.kind != EventKind::PromptSent) continue;
    ++m.queries_total;
    if (e.seq <= deepest) ++m.queries_to_deepest_subtask;
  }
  return m;
}

SessionMetrics compute_metrics(std::span<const TranscriptEvent> events, int subtasks_total) {
  if (events.empty() || events.back().kind != EventKind::SessionTerminated) {
    throw Error(ErrorCode::SessionStillLive, "session has not terminated");
  }
  return partial_metrics(events, subtasks_total);
}

AggregateMetrics aggregate(std::span<const SessionMetrics> metrics) {
  if (metrics.empty()) throw Error(ErrorCode::EmptyInput, "no sessions to aggregate");
  AggregateMetrics a;
  for (const auto& m : metrics) {
    a.subtasks_completed += m.subtasks_completed;
    a.subtasks_total += m.subtasks_total;
    a.queries_total += m.queries_total;
    a.queries_to_deepest_subtask += m.queries_to_deepest_subtask;
    ++a.sessions;
  }
  return a;
}

std::string format_average(std::optional<double> value) {
  if (!value) return kUndefined;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *value);
  return buf;
}

nlohmann::json metrics_to_json(const SessionMetrics& m) {
  nlohmann::json avg = nullptr;
  if (auto v = m.avg_queries_per_completed_subtask()) avg = *v;
  return {{"subtasks_completed", m.subtasks_completed},
          {"subtasks_total", m.subtasks_total},
          {"queries_total", m.queries_total},
          {"queries_to_deepest_subtask", m.queries_to_deepest_subtask},
          {"avg_queries_per_completed_subtask", avg}};
}

SessionMetrics metrics_from_json(const nlohmann::json& doc) {
  try {
    SessionMetrics m;
    m.subtasks_completed = doc.at("subtasks_completed").get<int>();
    m.subtasks_total = doc.at("subtasks_total").get<int>();
    m.queries_total = doc.at("queries_total").get<int>();
    m.queries_to_deepest_subtask = doc.at("queries_to_deepest_subtask").get<int>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("metrics: ") + e.what());
  }
}

std::string render_table(std::span<const ReportRow> rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "no sessions to report");
  const auto machines = ordered_unique(rows, &ReportRow::machine);
  const auto columns = ordered_unique(rows, &ReportRow::column);

  // cells[row][col] = {subtasks, avg}
  std::vector<std::vector<std::pair<std::string, std::string>>> cells;
  for (const auto& machine : machines) {
    auto& line = cells.emplace_back();
    for (const auto& column : columns) {
      std::vector<SessionMetrics> hits;
      for (const auto& r : rows) {
        if (r.machine == machine && r.column == column) hits.push_back(r.metrics);
      }
      if (hits.empty()) {
        line.emplace_back("", "");
        continue;
      }
      const auto a = aggregate(hits);
      line.emplace_back(fraction(a.subtasks_completed, a.subtasks_total),
                        format_average(a.avg_queries_per_completed_subtask()));
    }
  }
  auto& totals = cells.emplace_back();
  for (const auto& column : columns) {
    std::vector<SessionMetrics> hits;
    for (const auto& r : rows) {
      if (r.column == column) hits.push_back(r.metrics);
    }
    const auto a = aggregate(hits);
    totals.emplace_back(fraction(a.subtasks_completed, a.subtasks_total),
                        format_average(a.avg_queries_per_completed_subtask()));
  }

  std::vector<std::string> labels = machines;
  labels.emplace_back("Total");
  std::size_t label_w = width(std::string("Machine"));
  for (const auto& l : labels) label_w = std::max(label_w, width(l));

  const std::string sub_head = "Subtasks";
  const std::string avg_head = "Avg. Queries";
  std::vector<std::size_t> sub_w(columns.size(), width(sub_head));
  std::vector<std::size_t> avg_w(columns.size(), width(avg_head));
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      sub_w[c] = std::max(sub_w[c], width(line[c].first));
      avg_w[c] = std::max(avg_w[c], width(line[c].second));
    }
  }
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto group = sub_w[c] + 2 + avg_w[c];
    if (width(columns[c]) > group) avg_w[c] += width(columns[c]) - group;
  }

  std::ostringstream out;
  auto row = [&](const std::string& label, const auto& cell_of) {
    std::string line = pad(label, label_w);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto [a, b] = cell_of(c);
      line += " | " + pad(a, sub_w[c]) + "  " + pad(b, avg_w[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  };
  row("", [&](std::size_t c) {
    return std::pair<std::string, std::string>{columns[c], ""};
  });
  row("Machine", [&](std::size_t) {
    return std::pair<std::string, std::string>{sub_head, avg_head};
  });
  std::string rule(label_w, '-');
  for (std::size_t c = 0; c < columns.size(); ++c) {
    rule += "-+-" + std::string(sub_w[c] + 2 + avg_w[c], '-');
  }
  out << rule << '\n';
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (r + 1 == labels.size()) out << rule << '\n';
    row(labels[r], [&](std::size_t c) { return cells[r][c]; });
  }
  return out.str();
}

nlohmann::json render_json_report(std::span<const ReportRow> rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, "no sessions to report");
  nlohmann::json out;
  out["rows"] = nlohmann::json::array();
  std::map<std::string, std::vector<SessionMetrics>> by_column;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    auto entry = metrics_to_json(r.metrics);
    entry["machine"] = r.machine;
    entry["column"] = r.column;
    out["rows"].push_back(std::move(entry));
    if (!by_column.contains(r.column)) order.push_back(r.column);
    by_column[r.column].push_back(r.metrics);
  }
  out["totals"] = nlohmann::json::object();
  for (const auto& column : order) {
    const auto a = aggregate(by_column[column]);
    nlohmann::json avg = nullptr;
    if (auto v = a.avg_queries_per_completed_subtask()) avg = *v;
    out["totals"][column] = {{"sessions", a.sessions},
                             {"subtasks_completed", a.subtasks_completed},
                             {"subtasks_total", a.subtasks_total},
                             {"queries_total", a.queries_total},
                             {"queries_to_deepest_subtask", a.queries_to_deepest_subtask},
                             {"avg_queries_per_completed_subtask", avg}};
  }
  return out;
}

}  // namespace stt
