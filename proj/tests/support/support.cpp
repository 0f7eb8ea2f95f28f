#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "stt/error.hpp"

namespace stt::testing {

std::filesystem::path source_dir() { return STT_SOURCE_DIR; }
std::filesystem::path graph_path() { return source_dir() / "graphs" / "attack_graph.json"; }
std::filesystem::path fixture_path(const std::string& name) {
  return source_dir() / "fixtures" / name;
}
std::filesystem::path golden_path(const std::string& name) {
  return source_dir() / "tests" / "golden" / name;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << body;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

GraphPtr sample_graph() {
  static const GraphPtr g = load_graph_file(graph_path());
  return g;
}

GraphPtr random_graph(std::mt19937_64& rng, int nodes, int max_out) {
  std::vector<GraphTask> tasks;
  tasks.reserve(nodes);
  for (int i = 0; i < nodes; ++i) {
    const auto id = "N" + std::to_string(i);
    tasks.push_back(GraphTask{TaskId(id), "Task " + id, "tactic", "Do " + id, {}});
  }
  if (nodes > 1) {
    std::uniform_int_distribution<int> deg(0, std::min(max_out, nodes - 1));
    std::uniform_int_distribution<int> pick(0, nodes - 1);
    for (int i = 0; i < nodes; ++i) {
      const int want = deg(rng);
      std::set<int> chosen;
      while (static_cast<int>(chosen.size()) < want) {
        const int j = pick(rng);
        if (j != i) chosen.insert(j);
      }
      std::vector<int> order(chosen.begin(), chosen.end());
      std::shuffle(order.begin(), order.end(), rng);
      for (int j : order) tasks[i].next.push_back(tasks[j].id);
    }
  }
  return make_graph(TaskId("N0"), std::move(tasks));
}

GraphPtr graph_of(const std::vector<std::pair<std::string, std::vector<std::string>>>& adj) {
  std::vector<GraphTask> tasks;
  for (const auto& [id, next] : adj) {
    GraphTask t{TaskId(id), "Task " + id, "tactic", "Do " + id, {}};
    for (const auto& n : next) t.next.emplace_back(n);
    tasks.push_back(std::move(t));
  }
  return make_graph(TaskId(adj.front().first), std::move(tasks));
}

std::vector<TaskId> oracle_candidates(const SttState& state, const TaskId& anchor,
                                      const std::set<TaskId>& excluded) {
  std::set<TaskId> terminal;
  for (const auto& s : state.task_states()) {
    if (s.status == TaskStatus::Completed || s.status == TaskStatus::Failed) terminal.insert(s.task);
  }
  std::vector<TaskId> out;
  for (const auto& n : state.graph().task(anchor).next) {
    if (excluded.count(n) || terminal.count(n)) continue;
    out.push_back(n);
  }
  return out;
}

std::optional<TaskId> oracle_anchor(const SttState& state) {
  const auto stack = state.selection_stack();
  const auto& initial = state.graph().initial_task();
  if (stack.empty()) {
    if (state.status(initial) == TaskStatus::Completed) return initial;
    return std::nullopt;
  }
  const auto& top = stack.back();
  if (!top.chosen) return top.anchor;
  if (state.status(*top.chosen) == TaskStatus::Completed) return top.chosen;
  return std::nullopt;
}

namespace {

std::vector<TaskId> ids_of(const std::vector<Candidate>& cs) {
  std::vector<TaskId> out;
  for (const auto& c : cs) out.push_back(c.id);
  return out;
}

std::set<TaskId> frame_exclusions(const SttState& s) {
  const auto stack = s.selection_stack();
  if (!stack.empty() && !stack.back().chosen) {
    return {stack.back().excluded.begin(), stack.back().excluded.end()};
  }
  return {};
}

class Checker {
 public:
  Checker(PropertyReport& report, int sequence) : report_(report), sequence_(sequence) {}

  void fail(const std::string& what) {
    if (report_.violations.size() < 50) {
      report_.violations.push_back("sequence " + std::to_string(sequence_) + ": " + what);
    }
  }

  // Invariants that must hold after every operation.
  void check(const SttState& s, const std::map<TaskId, TaskStatus>& terminal_before) {
    int in_progress = 0;
    std::optional<TaskId> ip;
    for (const auto& t : s.task_states()) {
      if (t.status == TaskStatus::InProgress) {
        ++in_progress;
        ip = t.task;
      }
    }
    if (in_progress > 1) fail("more than one task in progress");

    for (const auto& [id, st] : terminal_before) {
      if (s.status(id) != st) fail("terminal task " + id.str() + " changed status");
    }

    if (ip) {
      const auto stack = s.selection_stack();
      const TaskId expected =
          stack.empty() ? s.graph().initial_task() : stack.back().chosen.value_or(TaskId{});
      if (*ip != expected) fail("in-progress task " + ip->str() + " is not the focus");
    }

    for (const auto& f : s.selection_stack()) {
      const auto& next = s.graph().task(f.anchor).next;
      for (const auto& e : f.excluded) {
        if (std::find(next.begin(), next.end(), e) == next.end()) {
          fail("excluded " + e.str() + " not in next list of " + f.anchor.str());
        }
      }
      if (f.chosen) {
        if (std::find(next.begin(), next.end(), *f.chosen) == next.end()) {
          fail("chosen " + f.chosen->str() + " not in next list of " + f.anchor.str());
        }
        if (std::find(f.excluded.begin(), f.excluded.end(), *f.chosen) != f.excluded.end()) {
          fail("chosen task is excluded");
        }
      }
    }

    const auto anchor = oracle_anchor(s);
    try {
      const auto got = ids_of(s.candidate_next_tasks());
      if (!anchor) {
        fail("candidates returned without an anchor");
        return;
      }
      const auto want = oracle_candidates(s, *anchor, frame_exclusions(s));
      if (got != want) fail("candidate set differs from oracle at anchor " + anchor->str());
      const auto& next = s.graph().task(*anchor).next;
      for (const auto& c : got) {
        if (std::find(next.begin(), next.end(), c) == next.end()) fail("candidate outside next");
        if (is_terminal(s.status(c))) fail("terminal task offered as candidate");
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoAnchor || anchor) fail(std::string("candidates threw ") + e.what());
    }
  }

 private:
  PropertyReport& report_;
  int sequence_;
};

std::map<TaskId, TaskStatus> terminal_map(const SttState& s) {
  std::map<TaskId, TaskStatus> out;
  for (const auto& t : s.task_states()) {
    if (is_terminal(t.status)) out.emplace(t.task, t.status);
  }
  return out;
}

// Fail the focus and re-commit the first candidate until the run is exhausted.
void check_backtrack_termination(SttState s, Checker& checker, PropertyReport& report) {
  if (!s.in_progress()) {
    const auto anchor = oracle_anchor(s);
    if (!anchor) return;
    const auto cands = s.candidate_next_tasks();
    if (cands.empty()) return;
    s.commit_selection(cands.front().id);
  }
  const auto bound = s.graph().size() + s.graph().edge_count();
  std::size_t steps = 0;
  for (;;) {
    ++steps;
    ++report.backtracks;
    const auto before = terminal_map(s);
    const auto out = s.fail_and_backtrack();
    checker.check(s, before);
    if (out.kind == BacktrackOutcome::Kind::SessionExhausted) break;
    if (out.candidates.empty()) {
      checker.fail("backtrack outcome without candidates");
      return;
    }
    if (ids_of(out.candidates) != ids_of(s.candidate_next_tasks())) {
      checker.fail("backtrack candidates differ from the state's candidate set");
    }
    s.commit_selection(out.candidates.front().id);
    if (steps > bound) {
      checker.fail("backtracking did not terminate within the bound");
      return;
    }
  }
  if (steps > bound) checker.fail("backtracking exceeded tasks + edges steps");
}

}  // namespace

PropertyReport run_stt_properties(std::uint64_t seed, int sequences) {
  PropertyReport report;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size_dist(1, 50);
  std::uniform_int_distribution<int> op_dist(0, 99);

  for (int seq = 0; seq < sequences; ++seq) {
    Checker checker(report, seq);
    const int n = size_dist(rng);
    auto graph = random_graph(rng, n);
    std::uniform_int_distribution<int> any_task(0, n - 1);
    auto random_id = [&] { return TaskId("N" + std::to_string(any_task(rng))); };

    SttState s(graph);
    s.set_status(graph->initial_task(), TaskStatus::InProgress);
    checker.check(s, {});
    std::uint64_t event = 1;

    const int length = 5 + static_cast<int>(rng() % 60);
    for (int step = 0; step < length; ++step) {
      ++report.steps;
      const auto before = terminal_map(s);
      const int op = op_dist(rng);
      try {
        if (op < 25) {
          if (auto ip = s.in_progress()) s.set_status(*ip, TaskStatus::Completed);
        } else if (op < 40) {
          if (s.in_progress()) {
            const auto out = s.fail_and_backtrack();
            ++report.backtracks;
            if (out.kind == BacktrackOutcome::Kind::SessionExhausted) {
              checker.check(s, before);
              break;
            }
          }
        } else if (op < 75) {
          // Commit safety: success exactly when the id is in the oracle's candidate set.
          const TaskId pick = op < 60 ? random_id() : [&] {
            auto a = oracle_anchor(s);
            if (!a) return random_id();
            auto c = oracle_candidates(s, *a, frame_exclusions(s));
            if (c.empty() || s.in_progress()) return random_id();
            return c[rng() % c.size()];
          }();
          const auto anchor = oracle_anchor(s);
          bool member = false;
          if (anchor && !s.in_progress()) {
            const auto c = oracle_candidates(s, *anchor, frame_exclusions(s));
            member = std::find(c.begin(), c.end(), pick) != c.end();
          }
          ++report.commits_tried;
          SttState copy = s;
          bool ok = true;
          try {
            copy.commit_selection(pick);
          } catch (const Error& e) {
            ok = false;
            if (e.code() != ErrorCode::NotACandidate && e.code() != ErrorCode::NoAnchor) {
              checker.fail(std::string("unexpected commit error ") + e.what());
            }
            if (!(copy == s)) checker.fail("failed commit modified the state");
          }
          if (ok != member) {
            checker.fail("commit of " + pick.str() + (ok ? " succeeded" : " failed") +
                         " but oracle membership is " + (member ? "true" : "false"));
          }
          if (ok) {
            s = copy;
            if (s.in_progress() != pick) checker.fail("committed task is not in progress");
            if (s.task_state(pick).invalid_command_count != 0) checker.fail("counter not reset");
          }
        } else if (op < 85) {
          // Illegal or unknown status changes must throw and leave the state untouched.
          const TaskId id = random_id();
          const auto to = static_cast<TaskStatus>(rng() % 4);
          const auto from = s.status(id);
          SttState copy = s;
          bool threw = false;
          try {
            copy.set_status(id, to);
          } catch (const Error&) {
            threw = true;
            if (!(copy == s)) checker.fail("throwing set_status modified the state");
          }
          if (!is_legal_transition(from, to) && !threw) {
            checker.fail("illegal transition accepted for " + id.str());
          }
          if (!threw) s = copy;
        } else if (op < 95) {
          const TaskId id = random_id();
          const bool started = s.status(id) != TaskStatus::ToDo;
          try {
            s.add_finding(id, Finding{"finding " + std::to_string(event), event, "t"});
            ++event;
            if (!started) checker.fail("finding accepted on a to-do task");
          } catch (const Error& e) {
            if (started || e.code() != ErrorCode::TaskNotStarted) {
              checker.fail(std::string("unexpected add_finding error ") + e.what());
            }
          }
        } else {
          const auto round = state_from_json(state_to_json(s), graph);
          if (!(round == s)) checker.fail("serialization round trip differs");
          if (s.snapshot() != s.snapshot()) checker.fail("snapshot not deterministic");
        }
      } catch (const Error& e) {
        checker.fail(std::string("operation threw ") + e.what());
      }
      checker.check(s, before);
    }

    const auto round = state_from_json(state_to_json(s), graph);
    if (!(round == s)) checker.fail("final serialization round trip differs");
    check_backtrack_termination(s, checker, report);
    ++report.sequences;
  }
  return report;
}

}  // namespace stt::testing
