#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stt/prompts.hpp"

namespace stt {

struct ProviderConfig {
  std::string endpoint;     // base URL, e.g. https://api.example.com/v1
  std::string model;
  std::string auth_source;  // name of the environment variable holding the key; empty = none
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::size_t turn_budget = 0;  // prior turns sent with each prompt; 0 = whole history
};

enum class ChatRole { User, Assistant };

struct ChatTurn {
  ChatRole role = ChatRole::User;
  std::string content;
};

enum class QueryOutcome { Ok, TimedOut, ProviderError };
std::string_view to_string(QueryOutcome outcome) noexcept;

struct QueryRecord {
  std::uint64_t sequence = 0;
  TemplateId template_id = TemplateId::Initial;
  std::size_t request_chars = 0;
  std::size_t response_chars = 0;
  std::chrono::milliseconds latency{0};
  QueryOutcome outcome = QueryOutcome::Ok;
  std::string error_code;  // ErrorCode name when outcome != Ok
};

/// Chat-completion backend. `history` is the already-trimmed prior conversation.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string complete(const PromptEnvelope& prompt,
                               const std::vector<ChatTurn>& history) = 0;
};

/// One canned reply. A null field in `match` matches anything.
struct ScriptEntry {
  std::optional<TemplateId> template_id;
  std::optional<std::string> contains;
  std::string response;
};

/// Replays canned responses. The first unconsumed entry whose constraints match the
/// prompt is returned and consumed; nothing matching raises ScriptExhausted.
class ScriptedProvider final : public Provider {
 public:
  explicit ScriptedProvider(std::vector<ScriptEntry> entries);

  std::string complete(const PromptEnvelope& prompt,
                       const std::vector<ChatTurn>& history) override;

  std::size_t remaining() const;
  std::size_t consumed() const;

 private:
  mutable std::mutex mu_;
  std::vector<ScriptEntry> entries_;
  std::vector<bool> used_;
};

/// Parses a script: either an array of entries or {"entries": [...]}. A bare string entry
/// is an unconstrained response. Entry shape: {"match": {"template", "contains"}, "response"}.
std::vector<ScriptEntry> parse_script(const nlohmann::json& doc);
std::vector<ScriptEntry> load_script_file(const std::filesystem::path& path);

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// OpenAI-compatible chat completions over HTTP(S). The credential is read from the
/// environment when the provider is built; CredentialMissing is raised before any I/O.
/// Retries 429, 5xx and transport timeouts with exponential backoff.
class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(ProviderConfig config, Sleeper sleeper = {});
  ~HttpProvider() override;

  std::string complete(const PromptEnvelope& prompt,
                       const std::vector<ChatTurn>& history) override;

  int attempts_last_call() const noexcept { return attempts_; }

 private:
  ProviderConfig config_;
  std::string credential_;
  Sleeper sleeper_;
  int attempts_ = 0;
};

/// Builds the OpenAI-style request body. Exposed for tests.
nlohmann::json make_chat_request(const std::string& model, const PromptEnvelope& prompt,
                                 const std::vector<ChatTurn>& history);

/// Extracts choices[0].message.content; throws ProviderError on any other shape.
std::string parse_chat_response(std::string_view body);

/// Sends prompts through a provider, keeps the conversation and numbers queries gap-free.
/// A query is one logical prompt regardless of transport retries.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Provider> provider, std::size_t turn_budget = 0);

  /// Returns the response text. Provider failures propagate after being recorded.
  std::string send(const PromptEnvelope& prompt);

  const std::vector<QueryRecord>& records() const noexcept { return records_; }
  const std::vector<ChatTurn>& history() const noexcept { return history_; }
  std::uint64_t next_sequence() const noexcept { return records_.size() + 1; }
  std::size_t turn_budget() const noexcept { return turn_budget_; }

  /// Shrinks the history to `size` turns; used to roll back a failed step.
  void truncate_history(std::size_t size);

 private:
  std::shared_ptr<Provider> provider_;
  std::size_t turn_budget_;
  std::vector<ChatTurn> history_;
  std::vector<QueryRecord> records_;
};

}  // namespace stt
