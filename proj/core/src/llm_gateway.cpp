#include "stt/llm_gateway.hpp"

#include <algorithm>
#include <fstream>

#include "stt/error.hpp"

namespace stt {

ScriptedProvider::ScriptedProvider(std::vector<ScriptEntry> entries)
    : entries_(std::move(entries)), used_(entries_.size(), false) {}

std::string ScriptedProvider::complete(const PromptEnvelope& prompt,
                                       const std::vector<ChatTurn>&) {
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (used_[i]) continue;
    const auto& e = entries_[i];
    if (e.template_id && *e.template_id != prompt.template_id) continue;
    if (e.contains && prompt.rendered_text.find(*e.contains) == std::string::npos) continue;
    used_[i] = true;
    return e.response;
  }
  throw Error(ErrorCode::ScriptExhausted, "no scripted response for " +
                                              std::string(to_string(prompt.template_id)) +
                                              " prompt");
}

std::size_t ScriptedProvider::remaining() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (bool u : used_) n += u ? 0 : 1;
  return n;
}

std::size_t ScriptedProvider::consumed() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count(used_.begin(), used_.end(), true));
}

std::vector<ScriptEntry> parse_script(const nlohmann::json& doc) {
  const nlohmann::json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("entries")) throw Error(ErrorCode::ParseError, "script has no entries");
    list = &doc.at("entries");
  }
  if (!list->is_array()) throw Error(ErrorCode::ParseError, "script entries must be an array");

  std::vector<ScriptEntry> out;
  out.reserve(list->size());
  for (std::size_t i = 0; i < list->size(); ++i) {
    const auto& item = (*list)[i];
    const std::string where = "script entry " + std::to_string(i);
    ScriptEntry entry;
    if (item.is_string()) {
      entry.response = item.get<std::string>();
      out.push_back(std::move(entry));
      continue;
    }
    if (!item.is_object() || !item.contains("response") || !item.at("response").is_string()) {
      throw Error(ErrorCode::ParseError, where + " needs a string response");
    }
    entry.response = item.at("response").get<std::string>();
    if (item.contains("match")) {
      const auto& m = item.at("match");
      if (!m.is_object()) throw Error(ErrorCode::ParseError, where + ": match must be an object");
      if (m.contains("template")) {
        auto id = m.at("template").is_string()
                      ? parse_template_id(m.at("template").get<std::string>())
                      : std::nullopt;
        if (!id) throw Error(ErrorCode::ParseError, where + ": unknown template");
        entry.template_id = id;
      }
      if (m.contains("contains")) {
        if (!m.at("contains").is_string()) {
          throw Error(ErrorCode::ParseError, where + ": contains must be a string");
        }
        entry.contains = m.at("contains").get<std::string>();
      }
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::vector<ScriptEntry> load_script_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open script " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return parse_script(doc);
}

nlohmann::json make_chat_request(const std::string& model, const PromptEnvelope& prompt,
                                 const std::vector<ChatTurn>& history) {
  auto messages = nlohmann::json::array();
  for (const auto& turn : history) {
    messages.push_back({{"role", turn.role == ChatRole::User ? "user" : "assistant"},
                        {"content", turn.content}});
  }
  messages.push_back({{"role", "user"}, {"content", prompt.rendered_text}});
  return {{"model", model}, {"messages", std::move(messages)}};
}

std::string parse_chat_response(std::string_view body) {
  auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::ProviderError, "provider returned invalid JSON");
  try {
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw Error(ErrorCode::ProviderError, "content is not a string");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::ProviderError, "provider response has no choices[0].message.content");
  }
}

std::string_view to_string(QueryOutcome outcome) noexcept {
  switch (outcome) {
    case QueryOutcome::Ok: return "Ok";
    case QueryOutcome::TimedOut: return "TimedOut";
    case QueryOutcome::ProviderError: return "ProviderError";
  }
  return "?";
}

Gateway::Gateway(std::shared_ptr<Provider> provider, std::size_t turn_budget)
    : provider_(std::move(provider)), turn_budget_(turn_budget) {
  if (!provider_) throw Error(ErrorCode::InvalidArgument, "gateway needs a provider");
}

std::string Gateway::send(const PromptEnvelope& prompt) {
  std::vector<ChatTurn> context;
  if (turn_budget_ == 0 || history_.size() <= turn_budget_) {
    context = history_;
  } else {
    context.assign(history_.end() - static_cast<std::ptrdiff_t>(turn_budget_), history_.end());
  }

  QueryRecord record;
  record.sequence = next_sequence();
  record.template_id = prompt.template_id;
  record.request_chars = prompt.rendered_text.size();
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - t0);
  };
  std::string response;
  try {
    response = provider_->complete(prompt, context);
  } catch (const Error& e) {
    record.latency = elapsed();
    record.outcome =
        e.code() == ErrorCode::Timeout ? QueryOutcome::TimedOut : QueryOutcome::ProviderError;
    record.error_code = std::string(to_string(e.code()));
    records_.push_back(std::move(record));
    throw;
  } catch (const std::exception& e) {
    record.latency = elapsed();
    record.outcome = QueryOutcome::ProviderError;
    record.error_code = std::string(to_string(ErrorCode::ProviderError));
    records_.push_back(std::move(record));
    throw Error(ErrorCode::ProviderError, e.what());
  }
  record.latency = elapsed();
  record.response_chars = response.size();
  records_.push_back(std::move(record));
  history_.push_back({ChatRole::User, prompt.rendered_text});
  history_.push_back({ChatRole::Assistant, response});
  return response;
}

void Gateway::truncate_history(std::size_t size) {
  if (size < history_.size()) history_.resize(size);
}

}  // namespace stt
