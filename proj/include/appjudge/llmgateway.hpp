#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/error.hpp"

namespace appjudge::llmgateway {

enum class Role { system, user, assistant };

std::string_view to_string(Role role);

struct ImageAttachment {
  std::string media_type = "image/png";
  std::string bytes;
  bool base64_encoded = false;  // `bytes` already holds base64 text
};

struct ChatMessage {
  Role role = Role::user;
  std::string text;
  std::vector<ImageAttachment> images;  // user messages only
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  std::string model_id;
  double temperature = 0.0;
  int max_output_tokens = 2048;
};

/// Empty when the request is well formed.
std::vector<std::string> validate_request(const ChatRequest& request);

/// All message texts joined with role tags. Used for fingerprint matching
/// and token estimates.
std::string prompt_text(const ChatRequest& request);

struct ChatResponse {
  std::string text;
  long prompt_tokens = 0;
  long completion_tokens = 0;
  double latency_s = 0.0;
  double cost = 0.0;

  bool operator==(const ChatResponse&) const = default;
};

struct PriceRate {
  double input_per_token = 0.0;
  double output_per_token = 0.0;
};

struct RetryPolicy {
  int max_attempts = 3;
  double initial_backoff_s = 1.0;
  double backoff_multiplier = 2.0;
};

struct ProviderConfig {
  std::string endpoint;                             // e.g. https://api.openai.com/v1
  std::string credential_env = "APPJUDGE_API_KEY";  // name of the env var, never the key
  std::map<std::string, PriceRate> prices;          // keyed by model id
  RetryPolicy retry;
  int max_concurrent_calls = 4;
  double timeout_s = 120.0;
};

std::vector<std::string> validate_config(const ProviderConfig& config);

/// What a provider hands back before accounting. Negative token counts mean
/// "not reported"; the gateway estimates them.
struct ProviderReply {
  std::string text;
  long prompt_tokens = -1;
  long completion_tokens = -1;
  std::optional<double> latency_s;
};

/// Transport seam. Implementations throw Error with code transport (retried),
/// authentication, or over_limit.
class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual ProviderReply send(const ChatRequest& request) = 0;
  virtual bool remote() const { return false; }
};

/// Canned replies, either in global call order or keyed by a prompt
/// fingerprint (a substring of the prompt text). Keyed rules are tried first,
/// in insertion order; each rule consumes its replies in order and keeps
/// repeating the last one. Thread-safe.
class ScriptedProvider : public ChatProvider {
 public:
  struct Reply {
    std::string text;
    std::optional<Errc> failure;

    static Reply ok(std::string text) { return {std::move(text), std::nullopt}; }
    static Reply fail(Errc code) { return {{}, code}; }
  };

  void push(Reply reply);
  void push(std::string text) { push(Reply::ok(std::move(text))); }
  void on(std::string fingerprint, std::vector<Reply> replies);
  void on(std::string fingerprint, std::string text) {
    on(std::move(fingerprint), std::vector<Reply>{Reply::ok(std::move(text))});
  }

  ProviderReply send(const ChatRequest& request) override;

  int calls() const;
  std::vector<ChatRequest> requests() const;

  /// {"schema_version":1, "sequence":[reply...], "rules":[{"match":s,"replies":[reply...]}]}
  /// where a reply is a string or {"error": "transport"|"authentication"|"over_limit"}.
  static std::shared_ptr<ScriptedProvider> from_json(const nlohmann::json& doc);

 private:
  struct Rule {
    std::string fingerprint;
    std::vector<Reply> replies;
    std::size_t next = 0;
  };

  mutable std::mutex mutex_;
  std::deque<Reply> sequence_;
  std::vector<Rule> rules_;
  std::vector<ChatRequest> log_;
};

/// OpenAI-compatible chat-completions client. The credential is read from
/// the environment variable named in the config at call time.
class HttpProvider : public ChatProvider {
 public:
  explicit HttpProvider(ProviderConfig config);
  ProviderReply send(const ChatRequest& request) override;
  bool remote() const override { return true; }

 private:
  ProviderConfig config_;
};

struct UsageSummary {
  double total_cost = 0.0;
  double total_latency_s = 0.0;
  long call_count = 0;
  long prompt_tokens = 0;
  long completion_tokens = 0;

  UsageSummary& operator+=(const UsageSummary& other);
  friend UsageSummary operator+(UsageSummary a, const UsageSummary& b) { return a += b; }
  bool operator==(const UsageSummary&) const = default;
};

UsageSummary usage_summary(std::span<const ChatResponse> responses);
nlohmann::ordered_json usage_to_json(const UsageSummary& usage);
UsageSummary usage_from_json(const nlohmann::json& doc);

enum class Shape { string_list, verdict_map, feature_score_list, index_map };

std::string_view to_string(Shape shape);

/// Strips code fences and surrounding prose, parses, and checks the result
/// against `shape`. Throws UnparseableError.
nlohmann::json extract_structured(std::string_view text, Shape shape);

/// Strips ``` fences (with optional language tag); returns the inner text of
/// the first fenced block, or the input unchanged.
std::string strip_code_fences(std::string_view text);

using Sleeper = std::function<void(std::chrono::duration<double>)>;

/// Front door for all model calls. Holds the provider, accounting log and a
/// concurrency limiter. `fork()` yields a gateway with its own log that
/// shares the provider and limiter, so per-evaluation accounting stays
/// separate while the call-rate limit stays global.
class Gateway {
 public:
  Gateway(std::shared_ptr<ChatProvider> provider, ProviderConfig config, Sleeper sleeper = {});
  Gateway(Gateway&&) noexcept = default;
  Gateway& operator=(Gateway&&) noexcept = default;

  Gateway fork() const;

  ChatResponse complete(const ChatRequest& request);

  /// Parses the reply against `shape`; on failure re-asks once with a
  /// corrective instruction.
  nlohmann::json complete_structured(const ChatRequest& request, Shape shape);

  std::vector<ChatResponse> responses() const;
  UsageSummary usage() const;
  const ProviderConfig& config() const { return config_; }
  ChatProvider& provider() { return *provider_; }

 private:
  struct Log {
    mutable std::mutex mutex;
    std::vector<ChatResponse> responses;
  };
  using Limiter = std::counting_semaphore<256>;

  Gateway(std::shared_ptr<ChatProvider> provider, ProviderConfig config, Sleeper sleeper,
          std::shared_ptr<Limiter> limiter);

  std::shared_ptr<ChatProvider> provider_;
  ProviderConfig config_;
  Sleeper sleeper_;
  std::shared_ptr<Limiter> limiter_;
  std::unique_ptr<Log> log_;
};

/// Convenience for single-turn prompts.
ChatRequest make_request(std::string model_id, std::string system_text, std::string user_text);

}  // namespace appjudge::llmgateway
