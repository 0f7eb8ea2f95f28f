#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "stt/clock.hpp"
#include "stt/error.hpp"
#include "stt/llm_gateway.hpp"
#include "stt/pipeline.hpp"

namespace stt {

struct ServiceConfig {
  std::filesystem::path graph_dir;
  std::string default_graph = "attack_graph.json";
  /// Each session is persisted under <session_root>/<id> when set.
  std::optional<std::filesystem::path> session_root;
  /// Builds the provider for sessions that do not bring a script. May be empty.
  std::function<std::shared_ptr<Provider>()> provider_factory;
  /// Accept "provider_script" in session-creation bodies.
  bool allow_scripted = false;
  PipelineConfig pipeline;
  std::size_t turn_budget = 0;
  Clock clock = system_clock();
};

/// HTTP control surface:
///   POST /sessions                         create and issue the first prompt
///   GET  /sessions, /sessions/{id}         descriptors
///   GET  /sessions/{id}/state              task view
///   POST /sessions/{id}/tool-output        {text, classification}
///   POST /sessions/{id}/override-status    {task, to}
///   POST /sessions/{id}/override-selection {task}
///   GET  /sessions/{id}/metrics            409 until terminated
///   GET  /sessions/{id}/events?from=seq    NDJSON, live until the session terminates
/// Errors are {error, message}. Mutations on one session are serialized; an overlapping
/// one is refused with 409.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and returns the port (an ephemeral one when `port` is 0). Throws on failure.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP status for an engine error code.
int http_status_for(ErrorCode code) noexcept;

}  // namespace stt
