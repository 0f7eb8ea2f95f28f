#include "stt/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "stt/engine.hpp"
#include "stt/error.hpp"
#include "stt/replay.hpp"
#include "stt/service.hpp"

namespace stt::cli {

int exit_code_for(Outcome outcome) noexcept {
  switch (outcome) {
    case Outcome::Succeeded:
    case Outcome::Aborted:
      return kExitOk;
    case Outcome::Failed:
    case Outcome::Exhausted:
      return kExitFailed;
  }
  return kExitFailed;
}

namespace {

std::shared_ptr<Provider> make_provider(const ProviderFlags& flags) {
  if (flags.script) return std::make_shared<ScriptedProvider>(load_script_file(*flags.script));
  if (flags.endpoint.empty()) {
    throw Error(ErrorCode::InvalidArgument,
                "a model provider is required: pass --provider-endpoint or --script");
  }
  ProviderConfig config;
  config.endpoint = flags.endpoint;
  config.model = flags.model;
  config.auth_source = flags.auth_env;
  config.turn_budget = flags.turn_budget;
  return std::make_shared<HttpProvider>(std::move(config));
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

void print_metrics(std::ostream& out, const SessionMetrics& m) {
  out << "Subtasks completed: " << m.subtasks_completed << "/" << m.subtasks_total << "\n"
      << "Queries issued: " << m.queries_total << " (" << m.queries_to_deepest_subtask
      << " up to the deepest subtask)\n"
      << "Avg. queries per completed subtask: "
      << format_average(m.avg_queries_per_completed_subtask()) << "\n";
}

void print_candidates(std::ostream& out, const Session& s) {
  const auto cands = s.candidates();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    out << "  " << (i + 1) << ". " << cands[i].id.str() << "  " << cands[i].name << "\n";
  }
}

enum class Tool { Output, Invalid, Success, Abort, Closed };

// Reads one tool-output paste. A first line of ":invalid", ":success" or ":abort" is a
// command; otherwise lines are collected until a lone "EOF".
std::pair<Tool, std::string> read_tool_output(std::istream& in) {
  std::string line;
  std::string text;
  bool first = true;
  while (read_line(in, line)) {
    if (first) {
      const auto cmd = trim(line);
      if (cmd == ":invalid") return {Tool::Invalid, {}};
      if (cmd == ":success") return {Tool::Success, {}};
      if (cmd == ":abort") return {Tool::Abort, {}};
      first = false;
    }
    if (line == "EOF") return {Tool::Output, text};
    text += line;
    text += '\n';
  }
  return {Tool::Closed, text};
}

// Applies one operator answer at a decision point. Returns false to abort.
bool decide(SessionDriver& driver, Streams io) {
  const auto& s = driver.session();
  std::string line;
  if (s.phase().is(PhaseKind::StatusUpdate)) {
    const auto task = *s.stt().in_progress();
    if (const auto& summary = driver.last_summary()) {
      io.out << "Findings:\n";
      if (summary->key_findings.empty()) io.out << "  (none)\n";
      for (const auto& f : summary->key_findings) io.out << "  - " << f << "\n";
    }
    const bool proceed = *s.pending_recommendation() == Recommendation::Proceed;
    io.out << "Recommendation: " << (proceed ? "mark " : "keep working on ") << task.str()
           << (proceed ? " completed" : "") << "\n"
           << "[enter] accept, c complete, f fail, k keep going, abort\n> " << std::flush;
    if (!read_line(io.in, line)) return false;
    line = trim(line);
    if (line == "abort") return false;
    if (line.empty()) {
      driver.confirm();
    } else if (line == "c") {
      driver.override_status(task, TaskStatus::Completed);
    } else if (line == "f") {
      driver.override_status(task, TaskStatus::Failed);
    } else if (line == "k") {
      driver.override_status(task, TaskStatus::InProgress);
    } else {
      io.out << "Unrecognized answer.\n";
    }
    return true;
  }
  io.out << "Candidates:\n";
  print_candidates(io.out, s);
  io.out << "Proposed: " << s.pending_selection()->str()
         << (s.pending_selection_forced() ? " (forced, the model named no candidate)" : "")
         << "\n[enter] accept, or type a candidate id, or abort\n> " << std::flush;
  if (!read_line(io.in, line)) return false;
  line = trim(line);
  if (line == "abort") return false;
  if (line.empty()) {
    driver.confirm();
  } else {
    try {
      driver.override_selection(TaskId(line));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotACandidate && e.code() != ErrorCode::UnknownTask) throw;
      io.out << line << " is not a candidate.\n";
    }
  }
  return true;
}

std::vector<ReportRow> collect_rows(const std::vector<std::filesystem::path>& dirs) {
  std::vector<ReportRow> rows;
  for (const auto& path : dirs) {
    SessionDirectory dir(path);
    if (!std::filesystem::exists(dir.meta_path())) {
      throw Error(ErrorCode::NotFound, "no session.json in " + path.string());
    }
    const auto meta = dir.read_meta();
    ReportRow row;
    row.machine = meta.value("name", path.filename().string());
    row.column = meta.value("column", meta.value("mode", std::string("session")));
    if (std::filesystem::exists(dir.metrics_path())) {
      row.metrics = dir.read_metrics();
    } else {
      const auto recovered = read_transcript_file(dir.transcript_path());
      row.metrics = compute_metrics(recovered.events, meta.value("subtasks_total", 0));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Service* g_service = nullptr;

void handle_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

}  // namespace

int run_interactive(const InteractiveOptions& options, Streams io) {
  GraphPtr graph;
  std::shared_ptr<Provider> provider;
  std::unique_ptr<SessionDriver> driver;
  try {
    if (options.target.empty()) throw Error(ErrorCode::InvalidTarget, "--target is required");
    graph = load_graph_file(options.graph);
    provider = make_provider(options.provider);
    DriverOptions d;
    d.mode = options.mode;
    d.target = options.target;
    d.pipeline = options.pipeline;
    d.auto_apply = false;
    d.on_provider_failure = FailurePolicy::Rollback;
    d.turn_budget = options.provider.turn_budget;
    std::unique_ptr<TranscriptLog> log;
    std::shared_ptr<SessionDirectory> dir;
    if (options.session_dir) {
      dir = std::make_shared<SessionDirectory>(*options.session_dir);
      std::filesystem::remove(dir->transcript_path());
      std::filesystem::remove(dir->metrics_path());
      log = TranscriptLog::open(dir->transcript_path());
      dir->write_meta({{"name", options.target},
                       {"mode", to_string(options.mode)},
                       {"target", options.target},
                       {"graph", options.graph.filename().string()},
                       {"graph_hash", graph->content_hash()},
                       {"subtasks_total", options.subtasks_total}});
    }
    driver = std::make_unique<SessionDriver>(graph, provider, std::move(log), d);
    if (dir) driver->attach_directory(dir, options.subtasks_total);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  io.out << "Session (" << to_string(options.mode) << ") against " << options.target << "\n";
  bool started = false;
  while (true) {
    try {
      if (!started) {
        started = true;
        driver->start();
      }
      if (driver->terminated()) break;
      const auto& s = driver->session();
      if (s.phase().is(PhaseKind::AwaitingToolOutput)) {
        if (s.mode() == PipelineMode::Guided) {
          io.out << "\nCurrent task: " << s.stt().in_progress()->str() << "\n";
        } else {
          io.out << "\nPTT revision " << s.ptt().revision() << "\n";
        }
        io.out << "Suggested command:\n" << s.current_command().value_or("") << "\n"
               << "Paste the tool output and finish with a line containing only EOF.\n"
               << "(:invalid, :success or :abort on the first line)\n" << std::flush;
        auto [kind, text] = read_tool_output(io.in);
        switch (kind) {
          case Tool::Output: driver->submit(CommandResult::output(std::move(text))); break;
          case Tool::Invalid: driver->submit(CommandResult::invalid()); break;
          case Tool::Success: driver->submit(CommandResult::success()); break;
          case Tool::Abort: driver->abort("operator abort"); break;
          case Tool::Closed: driver->abort("input closed"); break;
        }
      } else if (driver->awaiting_operator()) {
        if (!decide(*driver, io)) driver->abort("operator abort");
      } else {
        driver->resume();
      }
    } catch (const Error& e) {
      if (!is_provider_failure(e.code())) {
        io.err << "error: " << e.what() << "\n";
        if (!driver->started() || driver->terminated()) return kExitConfig;
        continue;
      }
      io.err << "provider error: " << e.what() << "\n"
             << "[enter] retry, or abort\n> " << std::flush;
      std::string line;
      if (!read_line(io.in, line) || trim(line) == "abort") {
        if (driver->started() && !driver->terminated()) driver->abort("operator abort");
        break;
      }
      started = driver->started();
    }
  }

  const auto outcome = driver->phase().outcome;
  io.out << "\nSession ended: " << to_string(driver->phase()) << "\n";
  if (driver->session().mode() == PipelineMode::Guided) {
    io.out << driver->session().stt().snapshot();
  }
  const auto events = driver->log().events();
  print_metrics(io.out, partial_metrics(events, options.subtasks_total));
  return exit_code_for(outcome);
}

int run_validate(const std::filesystem::path& path, Streams io) {
  try {
    const auto graph = load_graph_file(path);
    io.out << "OK, " << graph->size() << " tasks, " << graph->warnings().size() << " warnings\n";
    for (const auto& w : graph->warnings()) io.out << "warning: " << w << "\n";
    return kExitOk;
  } catch (const ValidationError& e) {
    io.out << "INVALID, " << e.issues().size() << " problems\n";
    for (const auto& issue : e.issues()) io.out << "error: " << issue << "\n";
    return kExitFailed;
  } catch (const Error& e) {
    io.out << "INVALID\nerror: " << e.what() << "\n";
    return kExitFailed;
  }
}

int run_report(const std::vector<std::filesystem::path>& dirs,
               const std::optional<std::filesystem::path>& json_out, Streams io) {
  try {
    const auto rows = collect_rows(dirs);
    io.out << render_table(rows);
    if (json_out) write_file_atomic(*json_out, render_json_report(rows).dump(2) + "\n");
    return kExitOk;
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int run_fixture(const FixtureOptions& options, Streams io) {
  ReplayFixture fixture;
  try {
    fixture = load_fixture(options.fixture);
    fixture.script(options.mode);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  ReplayOptions ro;
  ro.mode = options.mode;
  ro.session_dir = options.session_dir;
  ro.max_invalid_commands = options.max_invalid;
  ro.repetition_window = options.repetition_window;
  ReplayResult result;
  try {
    result = run_replay(fixture, ro);
  } catch (const Error& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (!result.failure.empty()) io.err << "provider error: " << result.failure << "\n";
  const std::vector<ReportRow> rows{{fixture.name, std::string(to_string(options.mode)),
                                     result.metrics}};
  io.out << fixture.name << " (" << to_string(options.mode)
         << "): " << to_string(result.final_phase) << "\n";
  print_metrics(io.out, result.metrics);
  io.out << "\n" << render_table(rows);
  if (options.json_out) {
    auto report = render_json_report(rows);
    report["outcome"] = to_string(result.final_phase);
    write_file_atomic(*options.json_out, report.dump(2) + "\n");
  }
  const auto outcome = result.final_phase.outcome;
  return outcome == Outcome::Succeeded ? kExitOk : kExitFailed;
}

int run(int argc, const char* const* argv, Streams io) {
  CLI::App app{"Task-tree guided penetration testing assistant"};
  app.set_version_flag("--version", "stt-agent 0.1.0");

  std::string graph;
  std::string target;
  std::string mode_text = "guided";
  ProviderFlags provider;
  std::string session_dir;
  int max_invalid = 5;
  std::size_t repetition_window = 3;
  int selection_reprompts = 2;
  bool auto_select = false;
  std::string fixture;
  bool serve = false;
  int port = 8080;
  std::string bind = "127.0.0.1";
  std::string graph_dir;
  std::string script;
  std::string out;
  int subtasks_total = 0;
  bool allow_scripted = false;

  app.add_option("--graph", graph, "Attack graph JSON file");
  app.add_option("--target", target, "Target descriptor, e.g. an IP address");
  app.add_option("--mode", mode_text, "guided or baseline")
      ->check(CLI::IsMember({"guided", "baseline"}));
  app.add_option("--provider-endpoint", provider.endpoint, "Chat-completions base URL");
  app.add_option("--model", provider.model, "Model identifier");
  app.add_option("--auth-env", provider.auth_env, "Environment variable holding the API key");
  app.add_option("--turn-budget", provider.turn_budget, "Prior turns sent per prompt (0 = all)");
  app.add_option("--script", script, "Scripted provider file instead of a live model");
  app.add_option("--session-dir", session_dir, "Directory for transcript and state files");
  app.add_option("--max-invalid", max_invalid, "Invalid commands before a task fails")
      ->check(CLI::PositiveNumber);
  app.add_option("--repetition-window", repetition_window,
                 "Identical consecutive responses that end a session")
      ->check(CLI::Range(2, 1000));
  app.add_option("--selection-reprompts", selection_reprompts,
                 "Re-prompts before the first candidate is taken")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--auto-select-singletons", auto_select,
               "Skip the selection prompt when only one candidate exists");
  app.add_option("--subtasks-total", subtasks_total, "Subtask count for metrics");
  app.add_option("--fixture", fixture, "Replay a fixture headless");
  app.add_option("--out", out, "Write a JSON report here");
  app.add_flag("--serve", serve, "Run the HTTP service");
  app.add_option("--port", port, "Service port")->check(CLI::Range(0, 65535));
  app.add_option("--bind", bind, "Service bind address");
  app.add_option("--graph-dir", graph_dir, "Directory of graphs offered by the service");
  app.add_flag("--allow-scripted", allow_scripted,
               "Let service clients supply a provider script");

  auto* validate = app.add_subcommand("validate", "Check an attack graph file");
  std::string validate_path;
  validate->add_option("graph", validate_path, "Graph file")->required();

  auto* report = app.add_subcommand("report", "Compare finished sessions");
  std::vector<std::string> report_dirs;
  report->add_option("dirs", report_dirs, "Session directories")->required();
  report->add_option("--out", out, "Write a JSON report here");
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, io.out, io.err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const auto mode = *parse_pipeline_mode(mode_text);
  PipelineConfig pipeline;
  pipeline.max_invalid_commands = max_invalid;
  pipeline.repetition_window = repetition_window;
  pipeline.selection_reprompts = selection_reprompts;
  pipeline.auto_select_singletons = auto_select;
  if (!script.empty()) provider.script = script;
  const std::optional<std::filesystem::path> json_out =
      out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out);
  const std::optional<std::filesystem::path> dir =
      session_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(session_dir);

  if (*validate) return run_validate(validate_path, io);
  if (*report) {
    std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
    return run_report(dirs, json_out, io);
  }

  if (serve) {
    ServiceConfig config;
    if (!graph_dir.empty()) {
      config.graph_dir = graph_dir;
    } else if (!graph.empty()) {
      config.graph_dir = std::filesystem::path(graph).parent_path();
      config.default_graph = std::filesystem::path(graph).filename().string();
    } else {
      config.graph_dir = "graphs";
    }
    config.session_root = dir;
    config.pipeline = pipeline;
    config.turn_budget = provider.turn_budget;
    config.allow_scripted = allow_scripted;
    try {
      if (provider.script || !provider.endpoint.empty()) {
        make_provider(provider);  // surfaces a missing credential before serving
        config.provider_factory = [provider] { return make_provider(provider); };
      }
      Service service(config);
      const int bound = service.bind(bind, port);
      io.out << "listening on " << bind << ":" << bound << std::endl;
      g_service = &service;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      service.run();
      g_service = nullptr;
      return kExitOk;
    } catch (const Error& e) {
      io.err << "error: " << e.what() << "\n";
      return kExitConfig;
    }
  }

  if (!fixture.empty()) {
    FixtureOptions fo;
    fo.fixture = fixture;
    fo.mode = mode;
    fo.session_dir = dir;
    fo.json_out = json_out;
    if (app.count("--max-invalid") > 0) fo.max_invalid = max_invalid;
    if (app.count("--repetition-window") > 0) fo.repetition_window = repetition_window;
    return run_fixture(fo, io);
  }

  if (graph.empty() || target.empty()) {
    io.err << "error: --graph and --target are required for an interactive session\n";
    return kExitConfig;
  }
  InteractiveOptions io_options;
  io_options.graph = graph;
  io_options.target = target;
  io_options.mode = mode;
  io_options.pipeline = pipeline;
  io_options.provider = provider;
  io_options.session_dir = dir;
  io_options.subtasks_total = subtasks_total;
  return run_interactive(io_options, io);
}

}  // namespace stt::cli
