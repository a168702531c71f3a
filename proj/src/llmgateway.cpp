#include "appjudge/llmgateway.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

namespace appjudge::llmgateway {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(Shape shape) {
  switch (shape) {
    case Shape::string_list: return "string-list";
    case Shape::verdict_map: return "verdict-map";
    case Shape::feature_score_list: return "feature-score-list";
    case Shape::index_map: return "index-map";
  }
  return "string-list";
}

std::vector<std::string> validate_request(const ChatRequest& request) {
  std::vector<std::string> out;
  if (request.messages.empty()) out.emplace_back("messages: at least one message required");
  for (std::size_t i = 0; i < request.messages.size(); ++i) {
    const auto& m = request.messages[i];
    if (!m.images.empty() && m.role != Role::user) {
      out.push_back(fmt::format("messages[{}]: image attachments only allowed on user messages", i));
    }
  }
  if (request.temperature < 0.0) out.emplace_back("temperature: must be >= 0");
  if (request.max_output_tokens <= 0) out.emplace_back("max_output_tokens: must be positive");
  return out;
}

std::vector<std::string> validate_config(const ProviderConfig& config) {
  std::vector<std::string> out;
  if (config.retry.max_attempts < 1) out.emplace_back("retry.max_attempts: must be >= 1");
  if (config.retry.initial_backoff_s < 0.0) out.emplace_back("retry.initial_backoff_s: must be >= 0");
  if (config.max_concurrent_calls < 1) out.emplace_back("max_concurrent_calls: must be >= 1");
  for (const auto& [model, rate] : config.prices) {
    if (rate.input_per_token < 0.0 || rate.output_per_token < 0.0) {
      out.push_back(fmt::format("prices[{}]: rates must be >= 0", model));
    }
  }
  return out;
}

std::string prompt_text(const ChatRequest& request) {
  std::string out;
  for (const auto& m : request.messages) {
    out += '[';
    out += to_string(m.role);
    out += "]\n";
    out += m.text;
    out += '\n';
  }
  return out;
}

ChatRequest make_request(std::string model_id, std::string system_text, std::string user_text) {
  ChatRequest request;
  request.model_id = std::move(model_id);
  if (!system_text.empty()) request.messages.push_back({Role::system, std::move(system_text), {}});
  request.messages.push_back({Role::user, std::move(user_text), {}});
  return request;
}

// ---------------------------------------------------------------------------
// ScriptedProvider

void ScriptedProvider::push(Reply reply) {
  std::lock_guard lock(mutex_);
  sequence_.push_back(std::move(reply));
}

void ScriptedProvider::on(std::string fingerprint, std::vector<Reply> replies) {
  if (replies.empty()) throw Error(Errc::precondition, "scripted rule needs at least one reply");
  std::lock_guard lock(mutex_);
  rules_.push_back({std::move(fingerprint), std::move(replies), 0});
}

ProviderReply ScriptedProvider::send(const ChatRequest& request) {
  const std::string prompt = prompt_text(request);
  Reply reply;
  {
    std::lock_guard lock(mutex_);
    log_.push_back(request);
    auto rule = std::find_if(rules_.begin(), rules_.end(), [&](const Rule& r) {
      return prompt.find(r.fingerprint) != std::string::npos;
    });
    if (rule != rules_.end()) {
      reply = rule->replies[std::min(rule->next, rule->replies.size() - 1)];
      ++rule->next;
    } else if (!sequence_.empty()) {
      reply = std::move(sequence_.front());
      sequence_.pop_front();
    } else {
      throw Error(Errc::transport, "scripted provider has no reply left for this prompt");
    }
  }
  if (reply.failure) {
    throw Error(*reply.failure, fmt::format("scripted {}", appjudge::to_string(*reply.failure)));
  }
  ProviderReply out;
  out.text = std::move(reply.text);
  out.latency_s = 0.0;
  return out;
}

int ScriptedProvider::calls() const {
  std::lock_guard lock(mutex_);
  return static_cast<int>(log_.size());
}

std::vector<ChatRequest> ScriptedProvider::requests() const {
  std::lock_guard lock(mutex_);
  return log_;
}

namespace {

ScriptedProvider::Reply reply_from_json(const json& j) {
  if (j.is_string()) return ScriptedProvider::Reply::ok(j.get<std::string>());
  if (j.is_object() && j.contains("error")) {
    const auto kind = j["error"].get<std::string>();
    if (kind == "transport") return ScriptedProvider::Reply::fail(Errc::transport);
    if (kind == "authentication") return ScriptedProvider::Reply::fail(Errc::authentication);
    if (kind == "over_limit") return ScriptedProvider::Reply::fail(Errc::over_limit);
    throw Error(Errc::schema_violation, "script: unknown error kind '" + kind + "'");
  }
  if (j.is_object() || j.is_array()) return ScriptedProvider::Reply::ok(j.dump());
  throw Error(Errc::schema_violation, "script: reply must be a string or {error: kind}");
}

}  // namespace

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_json(const json& doc) {
  if (!doc.is_object() || doc.value("schema_version", 0) != 1) {
    throw Error(Errc::schema_violation, "script: schema_version must be 1");
  }
  auto provider = std::make_shared<ScriptedProvider>();
  for (const auto& r : doc.value("sequence", json::array())) provider->push(reply_from_json(r));
  for (const auto& rule : doc.value("rules", json::array())) {
    std::vector<Reply> replies;
    for (const auto& r : rule.at("replies")) replies.push_back(reply_from_json(r));
    provider->on(rule.at("match").get<std::string>(), std::move(replies));
  }
  return provider;
}

// ---------------------------------------------------------------------------
// HttpProvider

HttpProvider::HttpProvider(ProviderConfig config) : config_(std::move(config)) {}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::precondition, "endpoint must be an absolute URL: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

json message_to_wire(const ChatMessage& m) {
  json wire{{"role", std::string(to_string(m.role))}};
  if (m.images.empty()) {
    wire["content"] = m.text;
    return wire;
  }
  json parts = json::array();
  parts.push_back({{"type", "text"}, {"text", m.text}});
  for (const auto& img : m.images) {
    parts.push_back({{"type", "image_url"},
                     {"image_url",
                      {{"url", "data:" + img.media_type + ";base64," +
                                   (img.base64_encoded ? img.bytes
                                                       : httplib::detail::base64_encode(img.bytes))}}}});
  }
  wire["content"] = std::move(parts);
  return wire;
}

}  // namespace

ProviderReply HttpProvider::send(const ChatRequest& request) {
  const char* key = std::getenv(config_.credential_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw Error(Errc::authentication,
                "credential environment variable " + config_.credential_env + " is not set");
  }
  const SplitUrl url = split_url(config_.endpoint);

  json body{{"model", request.model_id},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens},
            {"messages", json::array()}};
  for (const auto& m : request.messages) body["messages"].push_back(message_to_wire(m));

  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(config_.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_bearer_token_auth(key);

  auto res = client.Post(url.path + "/chat/completions", body.dump(), "application/json");
  if (!res) {
    throw Error(Errc::transport, "connection to " + url.origin + " failed: " +
                                     httplib::to_string(res.error()));
  }
  const int status = res->status;
  if (status == 401 || status == 403) {
    throw Error(Errc::authentication, fmt::format("provider rejected credentials ({})", status));
  }
  if (status == 413 || (status == 400 && res->body.find("context_length") != std::string::npos)) {
    throw Error(Errc::over_limit, fmt::format("request over provider limits ({}): {}", status, res->body));
  }
  if (status == 408 || status == 429 || status >= 500) {
    throw Error(Errc::transport, fmt::format("provider returned {}", status));
  }
  if (status != 200) {
    throw Error(Errc::io, fmt::format("provider returned {}: {}", status, res->body));
  }

  ProviderReply reply;
  try {
    const json parsed = json::parse(res->body);
    const auto& content = parsed.at("choices").at(0).at("message").at("content");
    reply.text = content.is_string() ? content.get<std::string>() : content.dump();
    if (auto usage = parsed.find("usage"); usage != parsed.end()) {
      reply.prompt_tokens = usage->value("prompt_tokens", -1L);
      reply.completion_tokens = usage->value("completion_tokens", -1L);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::transport, std::string("malformed provider response: ") + e.what());
  }
  return reply;
}

// ---------------------------------------------------------------------------
// Accounting

UsageSummary& UsageSummary::operator+=(const UsageSummary& other) {
  total_cost += other.total_cost;
  total_latency_s += other.total_latency_s;
  call_count += other.call_count;
  prompt_tokens += other.prompt_tokens;
  completion_tokens += other.completion_tokens;
  return *this;
}

UsageSummary usage_summary(std::span<const ChatResponse> responses) {
  UsageSummary out;
  for (const auto& r : responses) {
    out.total_cost += r.cost;
    out.total_latency_s += r.latency_s;
    out.prompt_tokens += r.prompt_tokens;
    out.completion_tokens += r.completion_tokens;
    ++out.call_count;
  }
  return out;
}

nlohmann::ordered_json usage_to_json(const UsageSummary& usage) {
  return {{"total_cost", usage.total_cost},
          {"total_latency_s", usage.total_latency_s},
          {"call_count", usage.call_count},
          {"prompt_tokens", usage.prompt_tokens},
          {"completion_tokens", usage.completion_tokens}};
}

UsageSummary usage_from_json(const json& doc) {
  UsageSummary u;
  u.total_cost = doc.value("total_cost", 0.0);
  u.total_latency_s = doc.value("total_latency_s", 0.0);
  u.call_count = doc.value("call_count", 0L);
  u.prompt_tokens = doc.value("prompt_tokens", 0L);
  u.completion_tokens = doc.value("completion_tokens", 0L);
  return u;
}

// ---------------------------------------------------------------------------
// Structured output

std::string strip_code_fences(std::string_view text) {
  const auto open = text.find("```");
  if (open == std::string_view::npos) return std::string(text);
  auto body_start = text.find('\n', open);
  if (body_start == std::string_view::npos) return std::string(text);
  ++body_start;
  const auto close = text.find("```", body_start);
  if (close == std::string_view::npos) return std::string(text.substr(body_start));
  return std::string(text.substr(body_start, close - body_start));
}

namespace {

// Python list-of-strings literal, e.g. ['a', "b's", ]
std::optional<json> parse_python_string_list(std::string_view s) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  };
  skip_ws();
  if (i >= s.size() || s[i] != '[') return std::nullopt;
  ++i;
  json out = json::array();
  while (true) {
    skip_ws();
    if (i >= s.size()) return std::nullopt;
    if (s[i] == ']') return out;
    const char quote = s[i];
    if (quote != '\'' && quote != '"') return std::nullopt;
    ++i;
    std::string item;
    while (i < s.size() && s[i] != quote) {
      if (s[i] == '\\' && i + 1 < s.size()) {
        const char next = s[i + 1];
        item += next == 'n' ? '\n' : next == 't' ? '\t' : next;
        i += 2;
      } else {
        item += s[i++];
      }
    }
    if (i >= s.size()) return std::nullopt;
    ++i;
    out.push_back(std::move(item));
    skip_ws();
    if (i < s.size() && s[i] == ',') ++i;
  }
}

std::string slice_between(std::string_view text, char open, char close) {
  const auto first = text.find(open);
  const auto last = text.rfind(close);
  if (first == std::string_view::npos || last == std::string_view::npos || last < first) return {};
  return std::string(text.substr(first, last - first + 1));
}

[[noreturn]] void fail(std::string_view text, const std::string& why) {
  throw UnparseableError(why, std::string(text));
}

void check_shape(std::string_view raw, const json& value, Shape shape) {
  switch (shape) {
    case Shape::string_list:
      if (!value.is_array()) fail(raw, "expected a list of strings");
      for (const auto& item : value) {
        if (!item.is_string()) fail(raw, "list element is not a string: " + item.dump());
      }
      return;
    case Shape::verdict_map:
      if (!value.is_object()) fail(raw, "expected a map of case number to {result, evidence}");
      for (const auto& [key, entry] : value.items()) {
        if (!entry.is_object() || !entry.contains("result") || !entry["result"].is_string()) {
          fail(raw, "entry '" + key + "' lacks a string result");
        }
        if (entry.contains("evidence") && !entry["evidence"].is_string()) {
          fail(raw, "entry '" + key + "' has non-string evidence");
        }
      }
      return;
    case Shape::feature_score_list:
      if (!value.is_array()) fail(raw, "expected a list of feature results");
      for (const auto& item : value) {
        if (!item.is_object() || !item.contains("score") || !item["score"].is_number()) {
          fail(raw, "feature result lacks a numeric score: " + item.dump());
        }
      }
      return;
    case Shape::index_map:
      if (!value.is_object()) fail(raw, "expected a map of case id to feature indices");
      for (const auto& [key, entry] : value.items()) {
        const bool ok = entry.is_null() || entry.is_number_integer() ||
                        (entry.is_array() && std::all_of(entry.begin(), entry.end(), [](const json& e) {
                           return e.is_number_integer();
                         }));
        if (!ok) fail(raw, "entry '" + key + "' is not a list of integers");
      }
      return;
  }
}

std::string shape_instruction(Shape shape) {
  switch (shape) {
    case Shape::string_list: return "a JSON list of strings";
    case Shape::verdict_map:
      return R"(a JSON object mapping each case number to {"result": "Pass/Fail/Uncertain", "evidence": "..."})";
    case Shape::feature_score_list:
      return R"(a JSON list of {"requirement_id": ..., "satisfied": true/false, "score": 0-100, "reason": "..."} objects)";
    case Shape::index_map: return "a JSON object mapping each case id to a list of feature indices";
  }
  return "the requested structure";
}

}  // namespace

json extract_structured(std::string_view text, Shape shape) {
  const std::string unfenced = strip_code_fences(text);
  const bool list = shape == Shape::string_list || shape == Shape::feature_score_list;
  const std::string candidate = slice_between(unfenced, list ? '[' : '{', list ? ']' : '}');
  if (candidate.empty()) fail(text, fmt::format("no {} found in reply", to_string(shape)));

  json value = json::parse(candidate, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded() && shape == Shape::string_list) {
    if (auto py = parse_python_string_list(candidate)) value = std::move(*py);
  }
  if (value.is_discarded()) fail(text, fmt::format("reply is not valid {}", to_string(shape)));
  check_shape(text, value, shape);
  return value;
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<ChatProvider> provider, ProviderConfig config, Sleeper sleeper)
    : Gateway(std::move(provider), config, std::move(sleeper),
              std::make_shared<Limiter>(std::clamp(config.max_concurrent_calls, 1, 256))) {}

Gateway::Gateway(std::shared_ptr<ChatProvider> provider, ProviderConfig config, Sleeper sleeper,
                 std::shared_ptr<Limiter> limiter)
    : provider_(std::move(provider)),
      config_(std::move(config)),
      sleeper_(std::move(sleeper)),
      limiter_(std::move(limiter)),
      log_(std::make_unique<Log>()) {
  if (!provider_) throw Error(Errc::precondition, "gateway needs a provider");
  if (auto problems = validate_config(config_); !problems.empty()) {
    throw Error(Errc::precondition, "provider config: " + problems.front());
  }
  if (!sleeper_) {
    sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
  }
}

Gateway Gateway::fork() const { return Gateway(provider_, config_, sleeper_, limiter_); }

ChatResponse Gateway::complete(const ChatRequest& request) {
  if (auto problems = validate_request(request); !problems.empty()) {
    throw Error(Errc::precondition, "chat request: " + problems.front());
  }

  const int attempts = config_.retry.max_attempts;
  double backoff = config_.retry.initial_backoff_s;
  for (int attempt = 1;; ++attempt) {
    const auto start = std::chrono::steady_clock::now();
    try {
      ProviderReply reply;
      {
        limiter_->acquire();
        struct Release {
          Limiter& l;
          ~Release() { l.release(); }
        } release{*limiter_};
        reply = provider_->send(request);
      }
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

      ChatResponse response;
      response.text = std::move(reply.text);
      response.prompt_tokens = reply.prompt_tokens >= 0
                                   ? reply.prompt_tokens
                                   : static_cast<long>((prompt_text(request).size() + 3) / 4);
      response.completion_tokens = reply.completion_tokens >= 0
                                       ? reply.completion_tokens
                                       : static_cast<long>((response.text.size() + 3) / 4);
      response.latency_s = reply.latency_s.value_or(elapsed);
      if (auto rate = config_.prices.find(request.model_id); rate != config_.prices.end()) {
        response.cost = static_cast<double>(response.prompt_tokens) * rate->second.input_per_token +
                        static_cast<double>(response.completion_tokens) * rate->second.output_per_token;
      }
      std::lock_guard lock(log_->mutex);
      log_->responses.push_back(response);
      return response;
    } catch (const Error& e) {
      if (e.code() != Errc::transport) throw;
      if (attempt >= attempts) {
        throw Error(Errc::retries_exhausted,
                    fmt::format("gave up after {} attempt(s): {}", attempt, e.what()));
      }
      sleeper_(std::chrono::duration<double>(backoff));
      backoff *= config_.retry.backoff_multiplier;
    }
  }
}

json Gateway::complete_structured(const ChatRequest& request, Shape shape) {
  const ChatResponse first = complete(request);
  try {
    return extract_structured(first.text, shape);
  } catch (const UnparseableError& e) {
    ChatRequest repair = request;
    repair.messages.push_back({Role::assistant, first.text, {}});
    repair.messages.push_back(
        {Role::user,
         fmt::format("Your previous reply could not be parsed ({}). Reply again with only {}, "
                     "without any additional text, markdown formatting, or code blocks.",
                     e.what(), shape_instruction(shape)),
         {}});
    const ChatResponse second = complete(repair);
    try {
      return extract_structured(second.text, shape);
    } catch (const UnparseableError& again) {
      throw UnparseableError(
          fmt::format("{} still unparseable after repair: {}", to_string(shape), again.what()),
          second.text);
    }
  }
}

std::vector<ChatResponse> Gateway::responses() const {
  std::lock_guard lock(log_->mutex);
  return log_->responses;
}

UsageSummary Gateway::usage() const {
  std::lock_guard lock(log_->mutex);
  return usage_summary(log_->responses);
}

}  // namespace appjudge::llmgateway
