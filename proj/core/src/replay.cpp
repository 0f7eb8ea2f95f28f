#include "stt/replay.hpp"

#include <array>
#include <fstream>

#include "stt/error.hpp"

namespace stt {

namespace {

[[noreturn]] void invalid(const std::string& message) {
  throw Error(ErrorCode::FixtureInvalid, message);
}

const nlohmann::json* field(const nlohmann::json& section, const nlohmann::json& top,
                            const char* key) {
  if (section.is_object() && section.contains(key)) return &section.at(key);
  if (top.contains(key)) return &top.at(key);
  return nullptr;
}

std::vector<ScriptEntry> provider_script(const nlohmann::json& value,
                                         const std::filesystem::path& base) {
  try {
    if (value.is_string()) return load_script_file(base / value.get<std::string>());
    return parse_script(value);
  } catch (const Error& e) {
    invalid(std::string("provider_script: ") + e.what());
  }
}

std::vector<CommandResult> tool_outputs(const nlohmann::json& value) {
  if (!value.is_array()) invalid("tool_outputs must be an array");
  std::vector<CommandResult> out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const auto& item = value[i];
    const auto where = "tool_outputs[" + std::to_string(i) + "]";
    if (!item.is_object() || !item.contains("classification") ||
        !item.at("classification").is_string()) {
      invalid(where + " needs a classification");
    }
    auto kind = parse_classification(item.at("classification").get<std::string>());
    if (!kind) invalid(where + ": classification must be output, invalid or success");
    std::string text;
    if (item.contains("text")) {
      if (!item.at("text").is_string()) invalid(where + ": text must be a string");
      text = item.at("text").get<std::string>();
    }
    out.push_back({*kind, std::move(text)});
  }
  return out;
}

std::vector<CheckpointPlan> checkpoint_plan(const nlohmann::json& value, int subtasks_total) {
  if (!value.is_array()) invalid("checkpoints must be an array");
  std::vector<CheckpointPlan> out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const auto& item = value[i];
    const auto where = "checkpoints[" + std::to_string(i) + "]";
    try {
      CheckpointPlan plan;
      const auto& after = item.at("after");
      auto kind = parse_event_kind(after.at("kind").get<std::string>());
      if (!kind) invalid(where + ": unknown event kind");
      if (*kind == EventKind::CheckpointMarked || *kind == EventKind::SessionTerminated) {
        invalid(where + ": checkpoints cannot follow " + std::string(to_string(*kind)));
      }
      plan.after_kind = *kind;
      plan.after_count = after.at("count").get<int>();
      plan.label = item.at("label").get<std::string>();
      plan.index = item.at("index").get<int>();
      if (plan.after_count < 1) invalid(where + ": count must be positive");
      if (plan.index < 1 || plan.index > subtasks_total) {
        invalid(where + ": index outside 1.." + std::to_string(subtasks_total));
      }
      if (!out.empty() && plan.index <= out.back().index) {
        invalid(where + ": indices must increase");
      }
      out.push_back(std::move(plan));
    } catch (const nlohmann::json::exception& e) {
      invalid(where + ": " + e.what());
    }
  }
  return out;
}

std::optional<ReplayScript> mode_script(const nlohmann::json& doc, const char* mode,
                                        const std::filesystem::path& base, int subtasks_total) {
  const nlohmann::json empty = nlohmann::json::object();
  const auto& section = doc.contains(mode) ? doc.at(mode) : empty;
  if (!section.is_object()) invalid(std::string(mode) + " section must be an object");
  const auto* script = field(section, doc, "provider_script");
  const auto* outputs = field(section, doc, "tool_outputs");
  if (script == nullptr && outputs == nullptr) return std::nullopt;
  if (script == nullptr) invalid(std::string(mode) + ": provider_script missing");
  if (outputs == nullptr) invalid(std::string(mode) + ": tool_outputs missing");
  ReplayScript out;
  out.provider_script = provider_script(*script, base);
  out.tool_outputs = tool_outputs(*outputs);
  if (const auto* cps = field(section, doc, "checkpoints")) {
    out.checkpoints = checkpoint_plan(*cps, subtasks_total);
  }
  if (out.provider_script.empty()) invalid(std::string(mode) + ": provider_script is empty");
  return out;
}

// Marks planned checkpoints as the transcript grows.
class CheckpointMarker {
 public:
  CheckpointMarker(TranscriptLog& log, std::vector<CheckpointPlan> plan)
      : log_(log), plan_(std::move(plan)) {}

  void operator()(const TranscriptEvent& event) {
    const int count = ++counts_[static_cast<std::size_t>(event.kind)];
    while (next_ < plan_.size() && plan_[next_].after_kind == event.kind &&
           plan_[next_].after_count == count) {
      const auto& p = plan_[next_++];
      log_.mark_checkpoint(p.label, p.index);
    }
  }

  bool all_marked() const { return next_ == plan_.size(); }

 private:
  TranscriptLog& log_;
  std::vector<CheckpointPlan> plan_;
  std::size_t next_ = 0;
  std::array<int, 8> counts_{};
};

}  // namespace

const ReplayScript& ReplayFixture::script(PipelineMode mode) const {
  const auto& s = mode == PipelineMode::Guided ? guided : baseline;
  if (!s) invalid("fixture " + name + " has no " + std::string(to_string(mode)) + " script");
  return *s;
}

ReplayFixture parse_fixture(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) invalid("fixture must be a JSON object");
  ReplayFixture f;
  try {
    f.name = doc.value("name", std::string("fixture"));
    f.graph_path = base_dir / doc.at("graph").get<std::string>();
    f.target = doc.at("target").get<std::string>();
    f.subtasks_total = doc.at("subtasks_total").get<int>();
    if (doc.contains("max_invalid")) {
      f.pipeline.max_invalid_commands = doc.at("max_invalid").get<int>();
    }
    if (doc.contains("repetition_window")) {
      f.pipeline.repetition_window = doc.at("repetition_window").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("fixture header: ") + e.what());
  }
  if (f.target.empty()) invalid("fixture target is empty");
  if (f.subtasks_total < 1) invalid("subtasks_total must be positive");
  if (!std::filesystem::exists(f.graph_path)) invalid("graph not found: " + f.graph_path.string());
  f.guided = mode_script(doc, "guided", base_dir, f.subtasks_total);
  f.baseline = mode_script(doc, "baseline", base_dir, f.subtasks_total);
  if (!f.guided && !f.baseline) invalid("fixture has no provider script");
  return f;
}

ReplayFixture load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot open fixture " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) invalid(path.string() + " is not valid JSON");
  return parse_fixture(doc, path.parent_path());
}

ReplayResult run_replay(const ReplayFixture& fixture, const ReplayOptions& options) {
  const auto& script = fixture.script(options.mode);
  GraphPtr graph;
  try {
    graph = load_graph_file(fixture.graph_path);
  } catch (const Error& e) {
    invalid(std::string("graph: ") + e.what());
  }

  DriverOptions driver_options;
  driver_options.mode = options.mode;
  driver_options.target = fixture.target;
  driver_options.pipeline = fixture.pipeline;
  if (options.max_invalid_commands) {
    driver_options.pipeline.max_invalid_commands = *options.max_invalid_commands;
  }
  if (options.repetition_window) {
    driver_options.pipeline.repetition_window = *options.repetition_window;
  }
  driver_options.auto_apply = true;
  driver_options.on_provider_failure = FailurePolicy::Terminate;

  std::unique_ptr<TranscriptLog> log;
  std::shared_ptr<SessionDirectory> dir;
  if (options.session_dir) {
    dir = std::make_shared<SessionDirectory>(*options.session_dir);
    std::filesystem::remove(dir->transcript_path());
    std::filesystem::remove(dir->metrics_path());
    log = TranscriptLog::open(dir->transcript_path(), options.clock);
    dir->write_meta({{"name", fixture.name},
                     {"mode", to_string(options.mode)},
                     {"target", fixture.target},
                     {"graph", fixture.graph_path.filename().string()},
                     {"graph_hash", graph->content_hash()},
                     {"subtasks_total", fixture.subtasks_total}});
  } else {
    log = std::make_unique<TranscriptLog>(options.clock);
  }

  auto marker = std::make_shared<CheckpointMarker>(*log, script.checkpoints);
  log->add_observer([marker](const TranscriptEvent& e) { (*marker)(e); });

  auto provider = std::make_shared<ScriptedProvider>(script.provider_script);
  auto driver = std::make_shared<SessionDriver>(graph, provider, std::move(log), driver_options);
  if (dir) driver->attach_directory(dir, fixture.subtasks_total);

  ReplayResult result;
  try {
    driver->start();
    std::size_t next_output = 0;
    while (!driver->terminated()) {
      if (!driver->phase().is(PhaseKind::AwaitingToolOutput)) {
        throw Error(ErrorCode::WrongPhase,
                    "replay stalled in " + to_string(driver->phase()));
      }
      if (next_output < script.tool_outputs.size()) {
        driver->submit(script.tool_outputs[next_output++]);
      } else if (marker->all_marked() &&
                 static_cast<int>(driver->log().checkpoints().size()) ==
                     fixture.subtasks_total) {
        driver->finish(Outcome::Succeeded, "all subtasks reached");
      } else {
        driver->finish(Outcome::Aborted, "tool output script ended");
      }
    }
  } catch (const Error& e) {
    if (!is_provider_failure(e.code()) || !driver->terminated()) throw;
    result.failure = e.what();
  }

  result.final_phase = driver->phase();
  result.events = driver->log().events();
  result.metrics = compute_metrics(result.events, fixture.subtasks_total);
  result.driver = driver;
  return result;
}

}  // namespace stt
