#include <httplib.h>

#include <atomic>
#include <map>
#include <mutex>
#include <shared_mutex>

#include "stt/engine.hpp"
#include "stt/service.hpp"

namespace stt {

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ParseError:
    case ErrorCode::ValidationError:
    case ErrorCode::InvalidTarget:
    case ErrorCode::InvalidArgument:
    case ErrorCode::FixtureInvalid:
      return 400;
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::UnknownTask:
    case ErrorCode::IllegalTransition:
    case ErrorCode::SecondInProgress:
    case ErrorCode::TaskNotStarted:
    case ErrorCode::InvalidFinding:
    case ErrorCode::NoAnchor:
    case ErrorCode::NotACandidate:
    case ErrorCode::NothingInProgress:
    case ErrorCode::GraphMismatch:
    case ErrorCode::WrongPhase:
    case ErrorCode::WrongMode:
    case ErrorCode::NoCandidates:
    case ErrorCode::SelectionUnrecognized:
    case ErrorCode::SessionStillLive:
    case ErrorCode::OutOfOrderCheckpoint:
    case ErrorCode::Busy:
      return 409;
    case ErrorCode::CredentialMissing:
    case ErrorCode::Timeout:
    case ErrorCode::ProviderError:
    case ErrorCode::ScriptExhausted:
      return 502;
    case ErrorCode::SequenceGap:
    case ErrorCode::StorageFailure:
    case ErrorCode::EmptyInput:
      return 500;
  }
  return 500;
}

namespace {

struct Entry {
  std::string id;
  std::string created_at;
  std::string graph_name;
  int subtasks_total = 0;
  std::shared_ptr<SessionDriver> driver;
  std::mutex mutation;

  mutable std::mutex view_mu;
  nlohmann::json descriptor;
  nlohmann::json view;
  bool terminated = false;
};

nlohmann::json build_view(const SessionDriver& driver) {
  const auto& s = driver.session();
  const auto& stt = s.stt();
  const auto& graph = stt.graph();

  auto tasks = nlohmann::json::array();
  for (const auto& task : graph.tasks()) {
    const auto& st = stt.task_state(task.id);
    auto texts = nlohmann::json::array();
    for (const auto& f : st.findings) texts.push_back(f.text);
    tasks.push_back({{"id", task.id.str()},
                     {"name", task.name},
                     {"tactic", task.tactic},
                     {"status", to_string(st.status)},
                     {"findings", st.findings.size()},
                     {"finding_texts", std::move(texts)},
                     {"invalid_commands", st.invalid_command_count}});
  }

  auto path = nlohmann::json::array();
  auto candidates = nlohmann::json::array();
  if (s.mode() == PipelineMode::Guided) {
    for (const auto& id : stt.selection_path()) path.push_back(id.str());
    std::vector<Candidate> list;
    if (s.phase().is(PhaseKind::Selection)) {
      list = s.candidates();
    } else if (auto ip = stt.in_progress()) {
      for (const auto& next : graph.task(*ip).next) {
        if (is_terminal(stt.status(next))) continue;
        const auto& t = graph.task(next);
        list.push_back({t.id, t.name, t.description});
      }
    }
    for (const auto& c : list) {
      candidates.push_back({{"id", c.id.str()}, {"name", c.name}, {"description", c.description}});
    }
  }

  nlohmann::json view{{"mode", to_string(s.mode())},
                      {"phase", to_string(s.phase())},
                      {"tasks", std::move(tasks)},
                      {"selection_path", std::move(path)},
                      {"candidates", std::move(candidates)},
                      {"current_command", nullptr}};
  if (s.current_command()) view["current_command"] = *s.current_command();
  if (s.pending_recommendation()) {
    view["pending_recommendation"] = to_string(*s.pending_recommendation());
  }
  if (s.pending_selection()) view["pending_selection"] = s.pending_selection()->str();
  if (s.mode() == PipelineMode::Baseline) {
    view["ptt_revision"] = s.ptt().revision();
    if (driver.last_ptt_response()) view["ptt_text"] = *driver.last_ptt_response();
  }
  if (const auto& summary = driver.last_summary()) {
    view["last_summary"] = {{"findings", summary->key_findings},
                            {"recommendation", to_string(summary->recommendation)}};
  }
  return view;
}

void publish(Entry& e) {
  auto view = build_view(*e.driver);
  nlohmann::json descriptor{{"id", e.id},
                            {"mode", to_string(e.driver->options().mode)},
                            {"target", e.driver->options().target},
                            {"graph", e.graph_name},
                            {"phase", to_string(e.driver->phase())},
                            {"created_at", e.created_at}};
  std::lock_guard lock(e.view_mu);
  e.view = std::move(view);
  e.descriptor = std::move(descriptor);
  e.terminated = e.driver->terminated();
}

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code,
                const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

nlohmann::json parse_body(const httplib::Request& req) {
  auto doc = nlohmann::json::parse(req.body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw HttpError(400, "InvalidArgument", "request body must be a JSON object");
  }
  return doc;
}

std::string string_field(const nlohmann::json& body, const char* key, bool required = true) {
  const auto it = body.find(key);
  if (it == body.end()) {
    if (required) throw HttpError(400, "InvalidArgument", std::string("missing field ") + key);
    return {};
  }
  if (!it->is_string()) {
    throw HttpError(400, "InvalidArgument", std::string(key) + " must be a string");
  }
  return it->get<std::string>();
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;
  std::shared_mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Entry>, std::less<>> sessions;
  std::vector<std::string> order;
  std::atomic<std::uint64_t> next_id{1};
  std::atomic<bool> stopping{false};

  explicit Impl(ServiceConfig c) : config(std::move(c)) { routes(); }

  std::shared_ptr<Entry> find(const std::string& id) {
    std::shared_lock lock(sessions_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpError(404, "NotFound", "unknown session " + id);
    return it->second;
  }

  GraphPtr resolve_graph(const std::string& name) {
    if (name.empty() || name.find('/') != std::string::npos ||
        name.find('\\') != std::string::npos || name.find("..") != std::string::npos) {
      throw HttpError(404, "NotFound", "unknown graph " + name);
    }
    auto path = config.graph_dir / name;
    if (!std::filesystem::exists(path) && path.extension() != ".json") path += ".json";
    if (!std::filesystem::exists(path)) throw HttpError(404, "NotFound", "unknown graph " + name);
    return load_graph_file(path);
  }

  template <typename F>
  void handle(httplib::Response& res, F&& body) {
    try {
      body();
    } catch (const HttpError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const Error& e) {
      send_error(res, http_status_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  }

  // Runs a mutation with the session's lock held, refusing overlap, and republishes.
  template <typename F>
  void mutate(httplib::Response& res, const std::string& id, F&& body) {
    handle(res, [&] {
      auto entry = find(id);
      std::unique_lock lock(entry->mutation, std::try_to_lock);
      if (!lock.owns_lock()) {
        throw HttpError(409, "Busy", "another request is updating session " + id);
      }
      try {
        body(*entry);
      } catch (...) {
        publish(*entry);
        throw;
      }
      publish(*entry);
      std::lock_guard view_lock(entry->view_mu);
      send_json(res, 200, entry->view);
    });
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    handle(res, [&] {
      const auto body = parse_body(req);
      const auto mode_text = string_field(body, "mode", false);
      const auto mode = mode_text.empty() ? std::optional(PipelineMode::Guided)
                                          : parse_pipeline_mode(mode_text);
      if (!mode) throw HttpError(400, "InvalidArgument", "mode must be guided or baseline");
      const auto target = string_field(body, "target");
      auto graph_name = string_field(body, "graph", false);
      if (graph_name.empty()) graph_name = config.default_graph;
      auto graph = resolve_graph(graph_name);

      std::shared_ptr<Provider> provider;
      if (body.contains("provider_script")) {
        if (!config.allow_scripted) {
          throw HttpError(400, "InvalidArgument", "scripted providers are disabled");
        }
        provider = std::make_shared<ScriptedProvider>(parse_script(body.at("provider_script")));
      } else if (config.provider_factory) {
        provider = config.provider_factory();
      } else {
        throw HttpError(400, "InvalidArgument", "no model provider configured");
      }

      DriverOptions options;
      options.mode = *mode;
      options.target = target;
      options.pipeline = config.pipeline;
      if (body.contains("max_invalid")) {
        options.pipeline.max_invalid_commands = body.at("max_invalid").get<int>();
      }
      options.auto_apply = body.value("auto_apply", true);
      options.on_provider_failure = FailurePolicy::Rollback;
      options.turn_budget = config.turn_budget;

      auto entry = std::make_shared<Entry>();
      entry->id = "s" + std::to_string(next_id++);
      entry->created_at = config.clock();
      entry->graph_name = graph_name;
      entry->subtasks_total = body.value("subtasks_total", 0);

      std::shared_ptr<SessionDirectory> dir;
      std::unique_ptr<TranscriptLog> log;
      if (config.session_root) {
        dir = std::make_shared<SessionDirectory>(*config.session_root / entry->id);
        log = TranscriptLog::open(dir->transcript_path(), config.clock);
        dir->write_meta({{"id", entry->id},
                         {"name", entry->id},
                         {"mode", to_string(*mode)},
                         {"target", target},
                         {"graph", graph_name},
                         {"graph_hash", graph->content_hash()},
                         {"subtasks_total", entry->subtasks_total},
                         {"created_at", entry->created_at}});
      } else {
        log = std::make_unique<TranscriptLog>(config.clock);
      }
      entry->driver = std::make_shared<SessionDriver>(graph, provider, std::move(log), options);
      if (dir) entry->driver->attach_directory(dir, entry->subtasks_total);

      try {
        entry->driver->start();
      } catch (const Error& e) {
        if (dir) {
          std::error_code ec;
          std::filesystem::remove_all(dir->root(), ec);
        }
        throw;
      }
      publish(*entry);
      {
        std::unique_lock lock(sessions_mu);
        sessions.emplace(entry->id, entry);
        order.push_back(entry->id);
      }
      std::lock_guard view_lock(entry->view_mu);
      send_json(res, 201, entry->descriptor);
    });
  }

  void routes() {
    server.set_read_timeout(300, 0);
    server.set_write_timeout(300, 0);

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      create(req, res);
    });

    server.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] {
        auto list = nlohmann::json::array();
        std::shared_lock lock(sessions_mu);
        for (const auto& id : order) {
          const auto& e = sessions.at(id);
          std::lock_guard view_lock(e->view_mu);
          list.push_back(e->descriptor);
        }
        send_json(res, 200, list);
      });
    });

    server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        auto e = find(req.matches[1]);
        std::lock_guard lock(e->view_mu);
        send_json(res, 200, e->descriptor);
      });
    });

    server.Get(R"(/sessions/([^/]+)/state)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&] {
                   auto e = find(req.matches[1]);
                   std::lock_guard lock(e->view_mu);
                   send_json(res, 200, e->view);
                 });
               });

    server.Post(R"(/sessions/([^/]+)/tool-output)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  mutate(res, req.matches[1], [&](Entry& e) {
                    const auto body = parse_body(req);
                    auto text = string_field(body, "text", false);
                    auto cls = string_field(body, "classification", false);
                    auto kind = cls.empty() ? std::optional(CommandResult::Kind::ToolOutput)
                                            : parse_classification(cls);
                    if (!kind) {
                      throw HttpError(400, "InvalidArgument",
                                      "classification must be output, invalid or success");
                    }
                    e.driver->submit({*kind, std::move(text)});
                  });
                });

    server.Post(R"(/sessions/([^/]+)/override-status)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  mutate(res, req.matches[1], [&](Entry& e) {
                    const auto body = parse_body(req);
                    const TaskId task(string_field(body, "task"));
                    auto to = parse_task_status(string_field(body, "to"));
                    if (!to) {
                      throw HttpError(400, "InvalidArgument",
                                      "to must be to-do, in-progress, completed or failed");
                    }
                    e.driver->override_status(task, *to);
                  });
                });

    server.Post(R"(/sessions/([^/]+)/override-selection)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  mutate(res, req.matches[1], [&](Entry& e) {
                    const auto body = parse_body(req);
                    e.driver->override_selection(TaskId(string_field(body, "task")));
                  });
                });

    server.Get(R"(/sessions/([^/]+)/metrics)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&] {
                   auto e = find(req.matches[1]);
                   const auto events = e->driver->log().events();
                   send_json(res, 200,
                             metrics_to_json(compute_metrics(events, e->subtasks_total)));
                 });
               });

    server.Get(R"(/sessions/([^/]+)/events)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle(res, [&] { stream(req, res); });
               });
  }

  void stream(const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    std::uint64_t from = 0;
    if (req.has_param("from")) {
      try {
        from = std::stoull(req.get_param_value("from"));
      } catch (const std::exception&) {
        throw HttpError(400, "InvalidArgument", "from must be a sequence number");
      }
    }
    auto next = std::make_shared<std::uint64_t>(from == 0 ? 1 : from);
    res.status = 200;
    res.set_chunked_content_provider(
        "application/x-ndjson", [this, entry, next](std::size_t, httplib::DataSink& sink) {
          auto& log = entry->driver->log();
          const auto events = log.events_from(*next);
          std::string chunk;
          for (const auto& e : events) {
            chunk += event_to_line(e);
            chunk += '\n';
            *next = e.seq + 1;
          }
          if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
          if (!events.empty() && events.back().kind == EventKind::SessionTerminated) {
            sink.done();
            return true;
          }
          if (log.terminated() && *next > log.last_seq()) {
            sink.done();
            return true;
          }
          if (stopping) {
            sink.done();
            return true;
          }
          if (events.empty()) log.wait_for_more(*next - 1, std::chrono::milliseconds(200));
          return sink.is_writable();
        });
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) throw Error(ErrorCode::InvalidArgument, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(ErrorCode::InvalidArgument,
                "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::stop() {
  impl_->stopping = true;
  impl_->server.stop();
}

}  // namespace stt
