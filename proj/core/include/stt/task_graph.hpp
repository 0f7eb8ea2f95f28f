#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace stt {

// ---------------------------------------------------------------------------
// TaskStatus

enum class TaskStatus : std::uint8_t { ToDo, InProgress, Completed, Failed };

/// "to-do", "in-progress", "completed", "failed" -- the spelling used in prompts and files.
std::string_view to_string(TaskStatus status) noexcept;
std::optional<TaskStatus> parse_task_status(std::string_view text) noexcept;

/// ToDo->InProgress, InProgress->Completed and InProgress->Failed. Nothing else.
constexpr bool is_legal_transition(TaskStatus from, TaskStatus to) noexcept {
  return (from == TaskStatus::ToDo && to == TaskStatus::InProgress) ||
         (from == TaskStatus::InProgress &&
          (to == TaskStatus::Completed || to == TaskStatus::Failed));
}

constexpr bool is_terminal(TaskStatus status) noexcept {
  return status == TaskStatus::Completed || status == TaskStatus::Failed;
}

// ---------------------------------------------------------------------------
// TaskId

class TaskId {
 public:
  TaskId() = default;
  explicit TaskId(std::string value) : value_(std::move(value)) {}

  const std::string& str() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }

  friend auto operator<=>(const TaskId&, const TaskId&) = default;
  friend bool operator==(const TaskId&, const TaskId&) = default;

 private:
  std::string value_;
};

void to_json(nlohmann::json& j, const TaskId& id);
void from_json(const nlohmann::json& j, TaskId& id);

}  // namespace stt

template <>
struct std::hash<stt::TaskId> {
  std::size_t operator()(const stt::TaskId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};

namespace stt {

// ---------------------------------------------------------------------------
// Graph

/// Static half of a task: what it is and where it may lead.
struct GraphTask {
  TaskId id;
  std::string name;
  std::string tactic;
  std::string description;
  std::vector<TaskId> next;
};

class AttackGraph;
using GraphPtr = std::shared_ptr<const AttackGraph>;

/// Immutable, validated task graph. Construct through load_graph() or make_graph().
class AttackGraph {
 public:
  static constexpr int kSchemaVersion = 1;

  int schema_version() const noexcept { return schema_version_; }
  const TaskId& initial_task() const noexcept { return initial_task_; }
  std::span<const GraphTask> tasks() const noexcept { return tasks_; }
  std::size_t size() const noexcept { return tasks_.size(); }
  std::size_t edge_count() const noexcept { return edge_count_; }

  bool contains(const TaskId& id) const noexcept { return index_.contains(id); }
  std::optional<std::size_t> index_of(const TaskId& id) const noexcept;
  /// Throws Error(UnknownTask).
  const GraphTask& task(const TaskId& id) const;

  /// SHA-256 (hex) of the document the graph was loaded from.
  const std::string& content_hash() const noexcept { return content_hash_; }

  /// Non-fatal diagnostics from loading (unreachable tasks).
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  /// Task ids not reachable from the initial task, in file order.
  const std::vector<TaskId>& unreachable_tasks() const noexcept { return unreachable_; }

 private:
  friend GraphPtr build_graph(int, TaskId, std::vector<GraphTask>, std::string);

  AttackGraph() = default;

  int schema_version_ = kSchemaVersion;
  TaskId initial_task_;
  std::vector<GraphTask> tasks_;
  std::unordered_map<TaskId, std::size_t> index_;
  std::size_t edge_count_ = 0;
  std::string content_hash_;
  std::vector<std::string> warnings_;
  std::vector<TaskId> unreachable_;
};

/// Parses and validates a graph document.
/// Throws Error(ParseError) for malformed JSON or schema violations (including unknown
/// fields), ValidationError listing every referential problem.
GraphPtr load_graph(std::string_view document);
GraphPtr load_graph_file(const std::filesystem::path& path);

/// Builds a graph in memory. Same validation as load_graph; hash covers the canonical JSON.
GraphPtr make_graph(TaskId initial_task, std::vector<GraphTask> tasks);

nlohmann::json graph_to_json(const AttackGraph& graph);

std::string sha256_hex(std::string_view bytes);

}  // namespace stt
