#include "seqground/llm_client.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"

namespace seqground::llm {

std::string_view to_string(LlmErrc code) {
  switch (code) {
    case LlmErrc::ServiceUnavailable: return "ServiceUnavailable";
    case LlmErrc::AuthMissing: return "AuthMissing";
    case LlmErrc::Transport: return "Transport";
    case LlmErrc::BadResponse: return "BadResponse";
  }
  return "Unknown";
}

json make_request_body(std::string_view model, const std::vector<ChatMessage>& messages) {
  json body;
  body["model"] = std::string(model);
  body["messages"] = json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  return body;
}

std::string extract_content(const json& response) {
  try {
    return response.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw LlmError(LlmErrc::BadResponse, std::string("unexpected response shape: ") + e.what());
  }
}

HttpChatEndpoint::HttpChatEndpoint(std::string url, std::string api_key, std::string model,
                                   std::chrono::milliseconds timeout)
    : api_key_(std::move(api_key)), model_(std::move(model)), timeout_(timeout) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) {
    base_ = url;
    path_ = "/";
  } else {
    base_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

std::unique_ptr<HttpChatEndpoint> HttpChatEndpoint::from_env() {
  const char* url = std::getenv("SG_LLM_ENDPOINT");
  const char* key = std::getenv("SG_LLM_API_KEY");
  if (key == nullptr || *key == '\0') {
    throw LlmError(LlmErrc::AuthMissing, "SG_LLM_API_KEY is not set");
  }
  if (url == nullptr || *url == '\0') {
    throw LlmError(LlmErrc::ServiceUnavailable, "SG_LLM_ENDPOINT is not set");
  }
  const char* model = std::getenv("SG_LLM_MODEL");
  return std::make_unique<HttpChatEndpoint>(url, key, model ? model : "gpt-4");
}

std::string HttpChatEndpoint::complete(const std::vector<ChatMessage>& messages) {
  httplib::Client client(base_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_bearer_token_auth(api_key_);
  const auto body = make_request_body(model_, messages).dump();
  const auto result = client.Post(path_, body, "application/json");
  if (!result) {
    throw LlmError(LlmErrc::Transport, "request to " + base_ + path_ + " failed: " +
                                           httplib::to_string(result.error()));
  }
  if (result->status == 401 || result->status == 403) {
    throw LlmError(LlmErrc::AuthMissing, "credential rejected (HTTP " + std::to_string(result->status) + ")");
  }
  if (result->status == 429 || result->status >= 500) {
    throw LlmError(LlmErrc::Transport, "HTTP " + std::to_string(result->status));
  }
  if (result->status != 200) {
    throw LlmError(LlmErrc::BadResponse, "HTTP " + std::to_string(result->status));
  }
  json parsed;
  try {
    parsed = json::parse(result->body);
  } catch (const json::parse_error& e) {
    throw LlmError(LlmErrc::BadResponse, std::string("response is not JSON: ") + e.what());
  }
  return extract_content(parsed);
}

ScriptedChatEndpoint::ScriptedChatEndpoint(std::vector<std::optional<std::string>> script)
    : script_(std::move(script)) {}

std::unique_ptr<ScriptedChatEndpoint> ScriptedChatEndpoint::always(std::string reply) {
  return std::make_unique<ScriptedChatEndpoint>(std::vector<std::optional<std::string>>{std::move(reply)});
}

std::unique_ptr<ScriptedChatEndpoint> ScriptedChatEndpoint::unreachable() {
  return std::make_unique<ScriptedChatEndpoint>(std::vector<std::optional<std::string>>{std::nullopt});
}

std::string ScriptedChatEndpoint::complete(const std::vector<ChatMessage>& messages) {
  std::lock_guard lock(mutex_);
  const auto index = requests_.size();
  requests_.push_back(messages);
  if (script_.empty()) throw LlmError(LlmErrc::Transport, "empty script");
  const auto& entry = script_[std::min(index, script_.size() - 1)];
  if (!entry) throw LlmError(LlmErrc::Transport, "scripted transport failure");
  return *entry;
}

std::size_t ScriptedChatEndpoint::calls() const {
  std::lock_guard lock(mutex_);
  return requests_.size();
}

std::vector<std::vector<ChatMessage>> ScriptedChatEndpoint::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

std::string complete_with_retry(ChatEndpoint& endpoint, const std::vector<ChatMessage>& messages,
                                const RetryPolicy& policy) {
  auto backoff = policy.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= std::max(policy.retries, 0); ++attempt) {
    if (attempt > 0) {
      if (policy.sleep) {
        policy.sleep(backoff);
      } else {
        std::this_thread::sleep_for(backoff);
      }
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
    }
    try {
      return endpoint.complete(messages);
    } catch (const LlmError& e) {
      if (e.kind() != LlmErrc::Transport) throw;
      last_error = e.what();
    }
  }
  throw LlmError(LlmErrc::ServiceUnavailable,
                 "gave up after " + std::to_string(std::max(policy.retries, 0) + 1) +
                     " attempts: " + last_error);
}

}  // namespace seqground::llm
