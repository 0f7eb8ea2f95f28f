#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "stt/error.hpp"
#include "stt/llm_gateway.hpp"

namespace stt {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "provider endpoint needs a scheme: " + url);
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorCode::InvalidArgument, "unsupported endpoint scheme " + scheme);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = url.substr(0, path_start);
  ep.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!ep.path.empty() && ep.path.back() == '/') ep.path.pop_back();
  if (ep.origin.size() <= scheme_end + 3) {
    throw Error(ErrorCode::InvalidArgument, "provider endpoint has no host: " + url);
  }
  return ep;
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpProvider::HttpProvider(ProviderConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (!config_.auth_source.empty()) {
    const char* value = std::getenv(config_.auth_source.c_str());
    if (value == nullptr || *value == '\0') {
      throw Error(ErrorCode::CredentialMissing,
                  "environment variable " + config_.auth_source + " is not set");
    }
    credential_ = value;
  }
  split_endpoint(config_.endpoint);
}

HttpProvider::~HttpProvider() = default;

std::string HttpProvider::complete(const PromptEnvelope& prompt,
                                   const std::vector<ChatTurn>& history) {
  const auto ep = split_endpoint(config_.endpoint);
  httplib::Client client(ep.origin);
  const auto secs = config_.timeout.count() / 1000;
  const auto usecs = (config_.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!credential_.empty()) headers.emplace("Authorization", "Bearer " + credential_);
  const std::string body = make_chat_request(config_.model, prompt, history).dump();
  const std::string path = ep.path + "/chat/completions";

  auto backoff = config_.initial_backoff;
  std::string last_error;
  ErrorCode last_code = ErrorCode::ProviderError;
  attempts_ = 0;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      sleeper_(backoff);
      backoff *= 2;
    }
    ++attempts_;
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      last_code = err == httplib::Error::Read || err == httplib::Error::Write ||
                          err == httplib::Error::ConnectionTimeout
                      ? ErrorCode::Timeout
                      : ErrorCode::ProviderError;
      last_error = "transport error: " + httplib::to_string(err);
      if (last_code == ErrorCode::Timeout) continue;
      break;
    }
    if (res->status >= 200 && res->status < 300) return parse_chat_response(res->body);
    last_code = ErrorCode::ProviderError;
    last_error = "HTTP " + std::to_string(res->status);
    if (!retryable(res->status)) break;
  }
  throw Error(last_code, last_error + " from " + ep.origin);
}

}  // namespace stt
