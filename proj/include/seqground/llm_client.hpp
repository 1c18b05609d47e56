#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqground/common.hpp"
#include "seqground/error.hpp"

namespace seqground::llm {

enum class LlmErrc { ServiceUnavailable, AuthMissing, Transport, BadResponse };

constexpr std::string_view module_name(LlmErrc) { return "llm"; }
std::string_view to_string(LlmErrc code);

using LlmError = ModuleError<LlmErrc>;

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Request body of the chat-completion wire contract.
json make_request_body(std::string_view model, const std::vector<ChatMessage>& messages);
/// `choices[0].message.content` of a response body; throws BadResponse otherwise.
std::string extract_content(const json& response);

/// A chat-completion service. `complete` throws LlmError(Transport) for
/// retryable failures and any other LlmError for permanent ones.
class ChatEndpoint {
 public:
  virtual ~ChatEndpoint() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

/// POSTs `{model, messages}` to an HTTP(S) URL with a bearer credential.
class HttpChatEndpoint final : public ChatEndpoint {
 public:
  HttpChatEndpoint(std::string url, std::string api_key, std::string model = "gpt-4",
                   std::chrono::milliseconds timeout = std::chrono::seconds(60));

  /// Reads SG_LLM_ENDPOINT / SG_LLM_API_KEY (and optional SG_LLM_MODEL).
  /// Throws AuthMissing when the credential is absent.
  static std::unique_ptr<HttpChatEndpoint> from_env();

  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  std::string base_;
  std::string path_;
  std::string api_key_;
  std::string model_;
  std::chrono::milliseconds timeout_;
};

/// Answers from a fixed script, one entry per call. Entries that are
/// `std::nullopt` simulate a transport failure. Past the end, the last entry
/// repeats. Records every request for inspection.
class ScriptedChatEndpoint final : public ChatEndpoint {
 public:
  explicit ScriptedChatEndpoint(std::vector<std::optional<std::string>> script);
  static std::unique_ptr<ScriptedChatEndpoint> always(std::string reply);
  static std::unique_ptr<ScriptedChatEndpoint> unreachable();

  std::string complete(const std::vector<ChatMessage>& messages) override;

  std::size_t calls() const;
  std::vector<std::vector<ChatMessage>> requests() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::optional<std::string>> script_;
  std::vector<std::vector<ChatMessage>> requests_;
};

/// Computes the reply from the request; used for the offline simulated services.
class FunctionChatEndpoint final : public ChatEndpoint {
 public:
  using Responder = std::function<std::string(const std::vector<ChatMessage>&)>;
  explicit FunctionChatEndpoint(Responder responder) : responder_(std::move(responder)) {}
  std::string complete(const std::vector<ChatMessage>& messages) override { return responder_(messages); }

 private:
  Responder responder_;
};

struct RetryPolicy {
  int retries = 2;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  /// Replaced in tests so backoff does not actually sleep.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Calls the endpoint up to `retries + 1` times, doubling the backoff after each
/// transport failure. Throws ServiceUnavailable once attempts are exhausted.
std::string complete_with_retry(ChatEndpoint& endpoint, const std::vector<ChatMessage>& messages,
                                const RetryPolicy& policy);

}  // namespace seqground::llm
