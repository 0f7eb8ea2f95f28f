#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "stt/task_graph.hpp"
#include "stt/task_state.hpp"

namespace stt::testing {

std::filesystem::path source_dir();
std::filesystem::path graph_path();
std::filesystem::path fixture_path(const std::string& name);
std::filesystem::path golden_path(const std::string& name);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& body);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "stt");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

GraphPtr sample_graph();

/// Random graph with `nodes` tasks N0..N{n-1}, initial N0, up to `max_out` distinct
/// non-self edges per node. Cycles and shared children are allowed.
GraphPtr random_graph(std::mt19937_64& rng, int nodes, int max_out = 5);

/// Builds a graph from an adjacency list given as {"A", {"B", "C"}} pairs; first is initial.
GraphPtr graph_of(const std::vector<std::pair<std::string, std::vector<std::string>>>& adj);

/// Candidate set by plain set arithmetic: next(anchor) minus excluded minus any terminal
/// task, in edge order.
std::vector<TaskId> oracle_candidates(const SttState& state, const TaskId& anchor,
                                      const std::set<TaskId>& excluded);

/// The anchor implied by the selection stack, computed from first principles.
std::optional<TaskId> oracle_anchor(const SttState& state);

struct PropertyReport {
  int sequences = 0;
  long steps = 0;
  long commits_tried = 0;
  long backtracks = 0;
  std::vector<std::string> violations;
};

/// Drives `sequences` random operation sequences over random graphs (<= 50 nodes) and checks
/// single focus, monotone terminal statuses, candidate soundness against the oracle, commit
/// safety, backtrack termination and serialization round trips.
PropertyReport run_stt_properties(std::uint64_t seed, int sequences);

}  // namespace stt::testing
