#include "stt/task_graph.hpp"

#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <openssl/evp.h>

#include "stt/error.hpp"

namespace stt {

std::string_view to_string(TaskStatus status) noexcept {
  switch (status) {
    case TaskStatus::ToDo: return "to-do";
    case TaskStatus::InProgress: return "in-progress";
    case TaskStatus::Completed: return "completed";
    case TaskStatus::Failed: return "failed";
  }
  return "to-do";
}

std::optional<TaskStatus> parse_task_status(std::string_view text) noexcept {
  if (text == "to-do") return TaskStatus::ToDo;
  if (text == "in-progress") return TaskStatus::InProgress;
  if (text == "completed") return TaskStatus::Completed;
  if (text == "failed") return TaskStatus::Failed;
  return std::nullopt;
}

void to_json(nlohmann::json& j, const TaskId& id) { j = id.str(); }

void from_json(const nlohmann::json& j, TaskId& id) { id = TaskId(j.get<std::string>()); }

std::optional<std::size_t> AttackGraph::index_of(const TaskId& id) const noexcept {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const GraphTask& AttackGraph::task(const TaskId& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::UnknownTask, "no task '" + id.str() + "'");
  return tasks_[it->second];
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::StorageFailure, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

GraphPtr build_graph(int schema_version, TaskId initial, std::vector<GraphTask> tasks,
                     std::string content_hash) {
  std::vector<std::string> issues;
  std::unordered_map<TaskId, std::size_t> index;

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (t.id.empty()) {
      issues.push_back("task #" + std::to_string(i) + " has an empty id");
      continue;
    }
    if (!index.emplace(t.id, i).second) issues.push_back("duplicate task id " + t.id.str());
  }
  if (initial.empty()) {
    issues.push_back("initial_task is empty");
  } else if (!index.contains(initial)) {
    issues.push_back("initial task " + initial.str() + " not found");
  }

  std::size_t edges = 0;
  for (const auto& t : tasks) {
    if (t.id.empty()) continue;
    if (t.description.empty()) issues.push_back("task " + t.id.str() + " has an empty description");
    std::set<TaskId> seen;
    for (const auto& n : t.next) {
      ++edges;
      if (n == t.id) {
        issues.push_back("self-loop on task " + t.id.str());
      } else if (!index.contains(n)) {
        issues.push_back("dangling edge " + t.id.str() + " -> " + n.str());
      }
      if (!seen.insert(n).second) {
        issues.push_back("task " + t.id.str() + " lists " + n.str() + " more than once in next");
      }
    }
  }
  if (!issues.empty()) throw ValidationError(std::move(issues));

  auto graph = std::shared_ptr<AttackGraph>(new AttackGraph());
  graph->schema_version_ = schema_version;
  graph->initial_task_ = std::move(initial);
  graph->tasks_ = std::move(tasks);
  graph->index_ = std::move(index);
  graph->edge_count_ = edges;
  graph->content_hash_ = std::move(content_hash);

  std::vector<bool> reached(graph->tasks_.size(), false);
  std::deque<std::size_t> queue{graph->index_.at(graph->initial_task_)};
  reached[queue.front()] = true;
  while (!queue.empty()) {
    const auto cur = queue.front();
    queue.pop_front();
    for (const auto& n : graph->tasks_[cur].next) {
      const auto idx = graph->index_.at(n);
      if (!reached[idx]) {
        reached[idx] = true;
        queue.push_back(idx);
      }
    }
  }
  for (std::size_t i = 0; i < reached.size(); ++i) {
    if (!reached[i]) {
      graph->unreachable_.push_back(graph->tasks_[i].id);
      graph->warnings_.push_back("task " + graph->tasks_[i].id.str() +
                                 " is unreachable from " + graph->initial_task_.str());
    }
  }
  return graph;
}

namespace {

using nlohmann::json;

[[noreturn]] void parse_fail(const std::string& what) { throw Error(ErrorCode::ParseError, what); }

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) parse_fail(where + ": missing field '" + key + "'");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) parse_fail(where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || it.key() == a;
    if (!ok) parse_fail(where + ": unknown field '" + it.key() + "'");
  }
}

}  // namespace

GraphPtr load_graph(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    parse_fail(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) parse_fail("top level must be an object");

  const auto& version = require(doc, "schema_version", "graph");
  if (!version.is_number_integer()) parse_fail("graph: schema_version must be an integer");
  if (version.get<int>() != AttackGraph::kSchemaVersion) {
    parse_fail("graph: unsupported schema_version " + version.dump());
  }
  reject_unknown(doc, {"schema_version", "initial_task", "tasks"}, "graph");

  TaskId initial(require_string(doc, "initial_task", "graph"));
  const auto& jtasks = require(doc, "tasks", "graph");
  if (!jtasks.is_array()) parse_fail("graph: tasks must be an array");

  std::vector<GraphTask> tasks;
  tasks.reserve(jtasks.size());
  for (std::size_t i = 0; i < jtasks.size(); ++i) {
    const auto& jt = jtasks[i];
    const std::string where = "tasks[" + std::to_string(i) + "]";
    if (!jt.is_object()) parse_fail(where + ": must be an object");
    reject_unknown(jt, {"id", "name", "tactic", "description", "next"}, where);
    GraphTask t;
    t.id = TaskId(require_string(jt, "id", where));
    t.name = require_string(jt, "name", where);
    t.tactic = require_string(jt, "tactic", where);
    t.description = require_string(jt, "description", where);
    const auto& jn = require(jt, "next", where);
    if (!jn.is_array()) parse_fail(where + ": next must be an array");
    for (const auto& n : jn) {
      if (!n.is_string()) parse_fail(where + ": next entries must be strings");
      t.next.emplace_back(n.get<std::string>());
    }
    tasks.push_back(std::move(t));
  }
  return build_graph(version.get<int>(), std::move(initial), std::move(tasks),
                     sha256_hex(document));
}

GraphPtr load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open graph file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_graph(buf.str());
}

nlohmann::json graph_to_json(const AttackGraph& graph) {
  json tasks = json::array();
  for (const auto& t : graph.tasks()) {
    tasks.push_back({{"id", t.id},
                     {"name", t.name},
                     {"tactic", t.tactic},
                     {"description", t.description},
                     {"next", t.next}});
  }
  return {{"schema_version", graph.schema_version()},
          {"initial_task", graph.initial_task()},
          {"tasks", std::move(tasks)}};
}

GraphPtr make_graph(TaskId initial_task, std::vector<GraphTask> tasks) {
  json doc{{"schema_version", AttackGraph::kSchemaVersion},
           {"initial_task", initial_task},
           {"tasks", json::array()}};
  for (const auto& t : tasks) {
    doc["tasks"].push_back({{"id", t.id},
                            {"name", t.name},
                            {"tactic", t.tactic},
                            {"description", t.description},
                            {"next", t.next}});
  }
  return build_graph(AttackGraph::kSchemaVersion, std::move(initial_task), std::move(tasks),
                     sha256_hex(doc.dump()));
}

}  // namespace stt
