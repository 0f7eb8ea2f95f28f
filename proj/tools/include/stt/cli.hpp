#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stt/pipeline.hpp"

namespace stt::cli {

struct Streams {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitConfig = 2;

struct ProviderFlags {
  std::string endpoint;
  std::string model;
  std::string auth_env;
  std::optional<std::filesystem::path> script;  // scripted provider instead of HTTP
  std::size_t turn_budget = 0;
};

struct InteractiveOptions {
  std::filesystem::path graph;
  std::string target;
  PipelineMode mode = PipelineMode::Guided;
  PipelineConfig pipeline;
  ProviderFlags provider;
  std::optional<std::filesystem::path> session_dir;
  int subtasks_total = 0;
};

/// Full command-line entry point.
int run(int argc, const char* const* argv, Streams io);

/// Operator loop: prints each suggested command, reads tool output up to a lone "EOF"
/// line, shows the summary and recommendation, and asks for confirmation or overrides.
int run_interactive(const InteractiveOptions& options, Streams io);

/// Prints load diagnostics; 0 when the graph loads.
int run_validate(const std::filesystem::path& graph, Streams io);

/// Table over session directories (session.json + metrics.json or transcript.jsonl).
int run_report(const std::vector<std::filesystem::path>& dirs,
               const std::optional<std::filesystem::path>& json_out, Streams io);

struct FixtureOptions {
  std::filesystem::path fixture;
  PipelineMode mode = PipelineMode::Guided;
  std::optional<std::filesystem::path> session_dir;
  std::optional<std::filesystem::path> json_out;
  std::optional<int> max_invalid;
  std::optional<std::size_t> repetition_window;
};

int run_fixture(const FixtureOptions& options, Streams io);

/// 0 for Succeeded and operator Aborted, 1 for Failed and Exhausted.
int exit_code_for(Outcome outcome) noexcept;

}  // namespace stt::cli
