#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stt/clock.hpp"
#include "stt/engine.hpp"

namespace stt {

struct CheckpointPlan {
  EventKind after_kind = EventKind::ResponseReceived;
  int after_count = 1;
  std::string label;
  int index = 0;
};

struct ReplayScript {
  std::vector<ScriptEntry> provider_script;
  std::vector<CommandResult> tool_outputs;
  std::vector<CheckpointPlan> checkpoints;
};

/// A desk-scale stand-in for one target machine: graph, target, canned model responses,
/// canned tool outputs and the subtask checkpoint plan, per pipeline mode.
struct ReplayFixture {
  std::string name;
  std::filesystem::path graph_path;
  std::string target;
  int subtasks_total = 0;
  std::optional<ReplayScript> guided;
  std::optional<ReplayScript> baseline;
  PipelineConfig pipeline;

  const ReplayScript& script(PipelineMode mode) const;
};

/// Validates while loading; every problem raises FixtureInvalid. Relative paths resolve
/// against the fixture's directory.
ReplayFixture load_fixture(const std::filesystem::path& path);
ReplayFixture parse_fixture(const nlohmann::json& doc, const std::filesystem::path& base_dir);

struct ReplayOptions {
  PipelineMode mode = PipelineMode::Guided;
  std::optional<std::filesystem::path> session_dir;
  Clock clock = system_clock();
  /// Overrides applied on top of the fixture's own pipeline settings.
  std::optional<int> max_invalid_commands;
  std::optional<std::size_t> repetition_window;
};

struct ReplayResult {
  Phase final_phase;
  SessionMetrics metrics;
  std::vector<TranscriptEvent> events;
  std::string failure;  // provider failure message, if any
  std::shared_ptr<SessionDriver> driver;
};

/// Runs a fixture headless: recommendations auto-apply, checkpoints are marked per plan.
/// When the tool outputs run out the session ends Succeeded if every subtask was
/// checkpointed and Aborted otherwise.
ReplayResult run_replay(const ReplayFixture& fixture, const ReplayOptions& options);

}  // namespace stt
