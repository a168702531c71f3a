#include "appjudge/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <ctime>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "appjudge/error.hpp"
#include "appjudge/json_io.hpp"
#include "appjudge/prompts.hpp"

namespace appjudge::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kMaxVisualScreens = 4;

[[noreturn]] void config_error(const std::string& message) {
  throw Error(Errc::schema_violation, "config: " + message);
}

bool credential_key(const std::string& key) {
  std::string k;
  for (char c : key) k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return k == "api_key" || k == "apikey" || k == "secret" || k == "password" || k == "token" ||
         k == "authorization" || k.ends_with("_api_key");
}

void reject_credentials(const json& doc, const std::string& path) {
  if (doc.is_object()) {
    for (const auto& [key, value] : doc.items()) {
      const auto here = path.empty() ? key : path + "." + key;
      if (credential_key(key)) {
        config_error(here + ": credentials are read from the environment only; name the variable in "
                            "provider.credential_env instead");
      }
      reject_credentials(value, here);
    }
  } else if (doc.is_array()) {
    for (std::size_t i = 0; i < doc.size(); ++i) reject_credentials(doc[i], fmt::format("{}[{}]", path, i));
  }
}

void require_known(const json& obj, const std::string& path, std::initializer_list<std::string_view> keys) {
  if (!obj.is_object()) config_error((path.empty() ? "document" : path) + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      config_error((path.empty() ? key : path + "." + key) + ": unknown key");
    }
  }
}

template <typename T>
void take(const json& obj, std::string_view key, T& out, const std::string& path) {
  const auto it = obj.find(std::string(key));
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    config_error(fmt::format("{}.{}: wrong type", path, key));
  }
}

void take_path(const json& obj, std::string_view key, fs::path& out, const std::string& path) {
  std::string s = out.string();
  take(obj, key, s, path);
  out = s;
}

std::string stage_list(const std::vector<StageMarker>& stages) {
  std::string out;
  for (const auto& s : stages) out += std::string(out.empty() ? "" : ",") + std::string(to_string(s.stage));
  return out;
}

std::vector<llmgateway::ImageAttachment> distinct_screens(const executor::Trace& trace) {
  std::vector<llmgateway::ImageAttachment> out;
  std::set<std::string> seen;
  for (const auto& obs : executor::observation_sequence(trace)) {
    if (obs.screenshot.empty() || !seen.insert(obs.screenshot).second) continue;
    out.push_back({obs.screenshot_media_type, obs.screenshot, obs.screenshot_base64});
    if (static_cast<int>(out.size()) == kMaxVisualScreens) break;
  }
  return out;
}

std::string fmt4(double v) { return fmt::format("{:.4f}", scoring::round4(v)); }

std::string fmt_opt4(const std::optional<double>& v) { return v ? fmt4(*v) : "undefined"; }

/// Table cells must not break the row.
std::string cell(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == '\n' || c == '\r') {
      out += ' ';
    } else if (c == '|') {
      out += "\\|";
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(DriverMode mode) { return mode == DriverMode::real ? "real" : "simulated"; }

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::llm: return "llm";
    case PolicyKind::scripted: return "scripted";
    case PolicyKind::probe: return "probe";
  }
  return "llm";
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::generate: return "generate";
    case Stage::link: return "link";
    case Stage::execute: return "execute";
    case Stage::judge: return "judge";
    case Stage::score: return "score";
  }
  return "generate";
}

std::optional<Stage> parse_stage(std::string_view text) {
  for (auto s : {Stage::generate, Stage::link, Stage::execute, Stage::judge, Stage::score}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Configuration

std::vector<std::string> validate_config(const HarnessConfig& config) {
  std::vector<std::string> out;
  if (config.scripted_replies.empty()) {
    for (auto& p : llmgateway::validate_config(config.provider)) out.push_back("provider." + p);
  }
  auto gen = config.generation;
  if (gen.model_id.empty()) gen.model_id = config.models.pick(config.models.generation);
  for (auto& p : testgen::validate_config(gen)) out.push_back("generation." + p);
  for (auto& p : executor::validate_budget(config.budget)) out.push_back("budget." + p);
  if (config.models.default_model.empty()) out.emplace_back("models.default: must be non-empty");
  if (config.policy != PolicyKind::llm && config.policy_file.empty()) {
    out.push_back(fmt::format("policy.file: required for the {} policy", to_string(config.policy)));
  }
  if (config.workers < 1) out.emplace_back("workers: must be >= 1");
  if (config.out_dir.empty()) out.emplace_back("out_dir: must be non-empty");
  if (config.driver_mode == DriverMode::real) {
    if (config.real_driver.viewport_width < 1 || config.real_driver.viewport_height < 1) {
      out.emplace_back("driver.viewport: must be positive");
    }
    if (config.real_driver.timeout_s <= 0.0) out.emplace_back("driver.timeout_s: must be positive");
  }
  return out;
}

HarnessConfig apply_config_json(HarnessConfig c, const json& doc) {
  if (doc.is_null()) return c;
  reject_credentials(doc, "");
  require_known(doc, "", {"schema_version", "provider", "scripted_replies", "models", "generation", "budget",
                          "driver", "policy", "judge_path", "feature_strategy", "classify_failures", "static",
                          "out_dir", "workers"});
  if (doc.contains("schema_version") && doc["schema_version"] != 1) config_error("schema_version: must be 1");

  if (const auto it = doc.find("provider"); it != doc.end()) {
    const auto& p = *it;
    require_known(p, "provider", {"endpoint", "credential_env", "prices", "retry", "max_concurrent_calls", "timeout_s"});
    take(p, "endpoint", c.provider.endpoint, "provider");
    take(p, "credential_env", c.provider.credential_env, "provider");
    take(p, "max_concurrent_calls", c.provider.max_concurrent_calls, "provider");
    take(p, "timeout_s", c.provider.timeout_s, "provider");
    if (const auto r = p.find("retry"); r != p.end()) {
      require_known(*r, "provider.retry", {"max_attempts", "initial_backoff_s", "backoff_multiplier"});
      take(*r, "max_attempts", c.provider.retry.max_attempts, "provider.retry");
      take(*r, "initial_backoff_s", c.provider.retry.initial_backoff_s, "provider.retry");
      take(*r, "backoff_multiplier", c.provider.retry.backoff_multiplier, "provider.retry");
    }
    if (const auto pr = p.find("prices"); pr != p.end()) {
      if (!pr->is_object()) config_error("provider.prices: expected an object");
      for (const auto& [model, rate] : pr->items()) {
        const auto path = "provider.prices." + model;
        require_known(rate, path, {"input_per_token", "output_per_token"});
        auto& r = c.provider.prices[model];
        take(rate, "input_per_token", r.input_per_token, path);
        take(rate, "output_per_token", r.output_per_token, path);
      }
    }
  }
  take_path(doc, "scripted_replies", c.scripted_replies, "");
  if (const auto it = doc.find("models"); it != doc.end()) {
    require_known(*it, "models", {"default", "generation", "linking", "execution", "judgment", "static_code", "visual"});
    take(*it, "default", c.models.default_model, "models");
    take(*it, "generation", c.models.generation, "models");
    take(*it, "linking", c.models.linking, "models");
    take(*it, "execution", c.models.execution, "models");
    take(*it, "judgment", c.models.judgment, "models");
    take(*it, "static_code", c.models.static_code, "models");
    take(*it, "visual", c.models.visual, "models");
  }
  if (const auto it = doc.find("generation"); it != doc.end()) {
    require_known(*it, "generation", {"min_cases", "max_cases", "few_shot_examples"});
    take(*it, "min_cases", c.generation.min_cases, "generation");
    take(*it, "max_cases", c.generation.max_cases, "generation");
    take(*it, "few_shot_examples", c.generation.few_shot_examples, "generation");
  }
  if (const auto it = doc.find("budget"); it != doc.end()) {
    require_known(*it, "budget", {"max_steps_total", "min_steps_guidance", "per_step_timeout_s"});
    take(*it, "max_steps_total", c.budget.max_steps_total, "budget");
    take(*it, "min_steps_guidance", c.budget.min_steps_guidance, "budget");
    take(*it, "per_step_timeout_s", c.budget.per_step_timeout_s, "budget");
  }
  if (const auto it = doc.find("driver"); it != doc.end()) {
    const auto& d = *it;
    require_known(d, "driver", {"mode", "webdriver_url", "browser", "viewport_width", "viewport_height", "timeout_s",
                                "open_whitelist", "app_url"});
    if (d.contains("mode")) {
      const auto mode = d["mode"].is_string() ? d["mode"].get<std::string>() : "";
      if (mode == "real") {
        c.driver_mode = DriverMode::real;
      } else if (mode == "simulated") {
        c.driver_mode = DriverMode::simulated;
      } else {
        config_error("driver.mode: expected real or simulated");
      }
    }
    take(d, "webdriver_url", c.real_driver.webdriver_url, "driver");
    take(d, "browser", c.real_driver.browser, "driver");
    take(d, "viewport_width", c.real_driver.viewport_width, "driver");
    take(d, "viewport_height", c.real_driver.viewport_height, "driver");
    take(d, "timeout_s", c.real_driver.timeout_s, "driver");
    take(d, "open_whitelist", c.real_driver.open_whitelist, "driver");
    take(d, "app_url", c.real_driver.app_url, "driver");
  }
  if (const auto it = doc.find("policy"); it != doc.end()) {
    require_known(*it, "policy", {"kind", "file"});
    if (it->contains("kind")) {
      const auto kind = (*it)["kind"].is_string() ? (*it)["kind"].get<std::string>() : "";
      if (kind == "llm") {
        c.policy = PolicyKind::llm;
      } else if (kind == "scripted") {
        c.policy = PolicyKind::scripted;
      } else if (kind == "probe") {
        c.policy = PolicyKind::probe;
      } else {
        config_error("policy.kind: expected llm, scripted or probe");
      }
    }
    take_path(*it, "file", c.policy_file, "policy");
  }
  if (doc.contains("judge_path")) {
    const auto path = doc["judge_path"].is_string() ? judge::parse_judge_path(doc["judge_path"].get<std::string>())
                                                    : std::nullopt;
    if (!path) config_error("judge_path: expected agent or rejudge");
    c.judge_path = *path;
  }
  if (doc.contains("feature_strategy")) {
    const auto s = doc["feature_strategy"].is_string()
                       ? scoring::parse_feature_strategy(doc["feature_strategy"].get<std::string>())
                       : std::nullopt;
    if (!s) config_error("feature_strategy: expected all or majority");
    c.feature_strategy = *s;
  }
  take(doc, "classify_failures", c.classify_failures, "");
  if (const auto it = doc.find("static"); it != doc.end()) {
    require_known(*it, "static", {"code", "visual", "visual_rubric"});
    take(*it, "code", c.static_code, "static");
    take(*it, "visual", c.static_visual, "static");
    take(*it, "visual_rubric", c.visual_rubric, "static");
  }
  take_path(doc, "out_dir", c.out_dir, "");
  take(doc, "workers", c.workers, "");
  return c;
}

json config_from_environment(const std::function<const char*(const char*)>& getenv_fn) {
  json doc = json::object();
  const auto get = [&](const char* name) -> std::optional<std::string> {
    const char* v = getenv_fn(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  const auto integer = [](const char* name, const std::string& text) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      throw Error(Errc::schema_violation, fmt::format("{}: expected an integer, got '{}'", name, text));
    }
  };
  if (auto v = get("APPJUDGE_MODEL")) doc["models"]["default"] = *v;
  if (auto v = get("APPJUDGE_ENDPOINT")) doc["provider"]["endpoint"] = *v;
  if (auto v = get("APPJUDGE_OUT")) doc["out_dir"] = *v;
  if (auto v = get("APPJUDGE_JUDGE_PATH")) doc["judge_path"] = *v;
  if (auto v = get("APPJUDGE_FEATURE_STRATEGY")) doc["feature_strategy"] = *v;
  if (auto v = get("APPJUDGE_BUDGET_STEPS")) doc["budget"]["max_steps_total"] = integer("APPJUDGE_BUDGET_STEPS", *v);
  if (auto v = get("APPJUDGE_WEBDRIVER_URL")) doc["driver"]["webdriver_url"] = *v;
  if (auto v = get("APPJUDGE_DRIVER_MODE")) doc["driver"]["mode"] = *v;
  if (auto v = get("APPJUDGE_WORKERS")) doc["workers"] = integer("APPJUDGE_WORKERS", *v);
  return doc;
}

HarnessConfig resolve_config(const std::optional<fs::path>& config_file,
                             const std::function<const char*(const char*)>& getenv_fn, const json& cli_overrides) {
  HarnessConfig config;
  if (config_file) {
    const auto doc = read_json_file(*config_file);
    config = apply_config_json(std::move(config), doc);
    // relative paths in a config file are relative to that file
    const auto base = config_file->parent_path();
    for (auto* p : {&config.scripted_replies, &config.policy_file}) {
      if (!p->empty() && p->is_relative()) *p = base / *p;
    }
  }
  config = apply_config_json(std::move(config), config_from_environment(getenv_fn));
  config = apply_config_json(std::move(config), cli_overrides);
  return config;
}

ordered_json config_to_json(const HarnessConfig& c) {
  ordered_json j;
  j["schema_version"] = 1;
  ordered_json prices = ordered_json::object();
  for (const auto& [model, rate] : c.provider.prices) {
    prices[model] = {{"input_per_token", rate.input_per_token}, {"output_per_token", rate.output_per_token}};
  }
  j["provider"] = {{"endpoint", c.provider.endpoint},
                   {"credential_env", c.provider.credential_env},
                   {"prices", prices},
                   {"retry",
                    {{"max_attempts", c.provider.retry.max_attempts},
                     {"initial_backoff_s", c.provider.retry.initial_backoff_s},
                     {"backoff_multiplier", c.provider.retry.backoff_multiplier}}},
                   {"max_concurrent_calls", c.provider.max_concurrent_calls},
                   {"timeout_s", c.provider.timeout_s}};
  j["scripted_replies"] = c.scripted_replies.string();
  j["models"] = {{"default", c.models.default_model}, {"generation", c.models.generation},
                 {"linking", c.models.linking},       {"execution", c.models.execution},
                 {"judgment", c.models.judgment},     {"static_code", c.models.static_code},
                 {"visual", c.models.visual}};
  j["generation"] = {{"min_cases", c.generation.min_cases},
                     {"max_cases", c.generation.max_cases},
                     {"few_shot_examples", c.generation.few_shot_examples}};
  j["budget"] = {{"max_steps_total", c.budget.max_steps_total},
                 {"min_steps_guidance", c.budget.min_steps_guidance},
                 {"per_step_timeout_s", c.budget.per_step_timeout_s}};
  j["driver"] = {{"mode", to_string(c.driver_mode)},
                 {"webdriver_url", c.real_driver.webdriver_url},
                 {"browser", c.real_driver.browser},
                 {"viewport_width", c.real_driver.viewport_width},
                 {"viewport_height", c.real_driver.viewport_height},
                 {"timeout_s", c.real_driver.timeout_s},
                 {"open_whitelist", c.real_driver.open_whitelist},
                 {"app_url", c.real_driver.app_url}};
  j["policy"] = {{"kind", to_string(c.policy)}, {"file", c.policy_file.string()}};
  j["judge_path"] = to_string(c.judge_path);
  j["feature_strategy"] = to_string(c.feature_strategy);
  j["classify_failures"] = c.classify_failures;
  j["static"] = {{"code", c.static_code}, {"visual", c.static_visual}, {"visual_rubric", c.visual_rubric}};
  j["out_dir"] = c.out_dir.string();
  j["workers"] = c.workers;
  return j;
}

std::string config_fingerprint(const HarnessConfig& config) {
  auto doc = config_to_json(config);
  doc.erase("out_dir");
  doc.erase("workers");
  const auto text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

// ---------------------------------------------------------------------------
// Records

ordered_json record_to_json(const EvaluationRecord& r) {
  const auto quality = [](const std::optional<scoring::QualityScore>& q) {
    if (!q) return ordered_json(nullptr);
    return ordered_json{{"value", scoring::round4(q->value)},
                        {"exact", q->value},
                        {"level", scoring::to_string(q->level)},
                        {"n_items", q->n_items}};
  };
  ordered_json j;
  j["schema_version"] = 1;
  j["task_id"] = r.task_id;
  j["n_features"] = r.n_features;
  j["incomplete"] = r.incomplete;
  j["failed_stage"] = r.failed_stage ? ordered_json(to_string(*r.failed_stage)) : ordered_json(nullptr);
  j["failure"] = r.failure;
  j["stages"] = ordered_json::array();
  for (const auto& s : r.stages) {
    j["stages"].push_back({{"stage", to_string(s.stage)}, {"ok", s.ok}, {"detail", s.detail}});
  }
  j["warnings"] = r.warnings;
  j["cases"] = ordered_json::array();
  for (const auto& c : r.cases) {
    j["cases"].push_back({{"id", c.id},
                          {"text", c.text},
                          {"linked_features", c.linked_features},
                          {"origin", c.origin == testgen::CaseOrigin::generated ? "generated" : "provided"}});
  }
  j["trace"] = {{"file", r.trace_file}, {"end", r.trace_end}, {"steps", r.trace_steps}};
  judge::VerdictFile vf{r.task_id, judge::JudgePath::agent, r.verdicts, {}};
  j["verdicts"] = judge::verdict_file_to_json(vf)["verdicts"];
  j["quality_case"] = quality(r.quality_case);
  j["quality_feature"] = quality(r.quality_feature);
  j["feature_strategy"] = scoring::to_string(r.feature_strategy);
  j["features"] = ordered_json::array();
  for (const auto& f : r.feature_results) {
    j["features"].push_back({{"feature_index", f.feature_index}, {"passed", f.passed}, {"linked_cases", f.linked_cases}});
  }
  if (r.static_scores) {
    ordered_json s;
    s["code"] = r.static_scores->code ? ordered_json(scoring::round4(*r.static_scores->code)) : ordered_json(nullptr);
    s["visual"] =
        r.static_scores->visual ? ordered_json(scoring::round4(*r.static_scores->visual)) : ordered_json(nullptr);
    s["detail"] = r.static_scores->detail;
    j["static_scores"] = s;
  } else {
    j["static_scores"] = nullptr;
  }
  j["usage"] = llmgateway::usage_to_json(r.usage);
  j["config_fingerprint"] = r.config_fingerprint;
  j["started_at"] = r.started_at;
  j["finished_at"] = r.finished_at;
  j["wall_time_s"] = r.wall_time_s;
  return j;
}

EvaluationRecord record_from_json(const json& doc) {
  require_schema_version(doc, "record");
  try {
    EvaluationRecord r;
    r.task_id = doc.at("task_id").get<std::string>();
    r.n_features = doc.at("n_features").get<int>();
    r.incomplete = doc.at("incomplete").get<bool>();
    if (!doc.at("failed_stage").is_null()) {
      r.failed_stage = parse_stage(doc["failed_stage"].get<std::string>());
      if (!r.failed_stage) throw Error(Errc::schema_violation, "record: unknown failed_stage");
    }
    r.failure = doc.value("failure", std::string());
    for (const auto& s : doc.at("stages")) {
      const auto stage = parse_stage(s.at("stage").get<std::string>());
      if (!stage) throw Error(Errc::schema_violation, "record: unknown stage");
      r.stages.push_back({*stage, s.at("ok").get<bool>(), s.value("detail", std::string())});
    }
    r.warnings = doc.value("warnings", std::vector<std::string>{});
    for (const auto& c : doc.at("cases")) {
      testgen::TestCase tc;
      tc.id = c.at("id").get<int>();
      tc.text = c.at("text").get<std::string>();
      tc.linked_features = c.value("linked_features", std::vector<int>{});
      tc.origin = c.value("origin", std::string("generated")) == "provided" ? testgen::CaseOrigin::provided
                                                                           : testgen::CaseOrigin::generated;
      r.cases.push_back(std::move(tc));
    }
    const auto& t = doc.at("trace");
    r.trace_file = t.value("file", std::string());
    r.trace_end = t.value("end", std::string());
    r.trace_steps = t.value("steps", 0);
    json vf = {{"schema_version", 1}, {"task_id", r.task_id}, {"verdicts", doc.at("verdicts")}};
    r.verdicts = judge::verdict_file_from_json(vf).verdicts;
    const auto quality = [](const json& q, scoring::Level level) -> std::optional<scoring::QualityScore> {
      if (q.is_null()) return std::nullopt;
      return scoring::QualityScore{q.at("exact").get<double>(), level, q.at("n_items").get<int>()};
    };
    r.quality_case = quality(doc.at("quality_case"), scoring::Level::case_level);
    r.quality_feature = quality(doc.at("quality_feature"), scoring::Level::feature_level);
    const auto strategy = scoring::parse_feature_strategy(doc.value("feature_strategy", std::string("all")));
    if (!strategy) throw Error(Errc::schema_violation, "record: unknown feature_strategy");
    r.feature_strategy = *strategy;
    for (const auto& f : doc.value("features", json::array())) {
      r.feature_results.push_back({f.at("feature_index").get<int>(), f.at("passed").get<bool>(),
                                   f.value("linked_cases", std::vector<int>{})});
    }
    if (const auto& s = doc.value("static_scores", json()); !s.is_null()) {
      StaticScores ss;
      if (!s.value("code", json()).is_null()) ss.code = s["code"].get<double>();
      if (!s.value("visual", json()).is_null()) ss.visual = s["visual"].get<double>();
      ss.detail = s.value("detail", ordered_json::object());
      r.static_scores = std::move(ss);
    }
    r.usage = llmgateway::usage_from_json(doc.value("usage", json::object()));
    r.config_fingerprint = doc.value("config_fingerprint", std::string());
    r.started_at = doc.value("started_at", std::string());
    r.finished_at = doc.value("finished_at", std::string());
    r.wall_time_s = doc.value("wall_time_s", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::schema_violation, std::string("record: ") + e.what());
  }
}

void save_record(const EvaluationRecord& record, const fs::path& path) { write_json_file(path, record_to_json(record)); }

EvaluationRecord load_record(const fs::path& path) { return record_from_json(read_json_file(path)); }

std::vector<std::string> audit_record(const EvaluationRecord& r) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    if (static_cast<int>(r.stages[i].stage) != static_cast<int>(i)) {
      out.push_back(fmt::format("stages: out of order ({})", stage_list(r.stages)));
      break;
    }
    if (!r.stages[i].ok && i + 1 != r.stages.size()) {
      out.push_back(fmt::format("stages: {} ran after failed stage {}", to_string(r.stages[i + 1].stage),
                                to_string(r.stages[i].stage)));
      break;
    }
  }
  const bool all_ok = r.stages.size() == 5 &&
                      std::all_of(r.stages.begin(), r.stages.end(), [](const StageMarker& s) { return s.ok; });
  if (r.incomplete) {
    if (!r.failed_stage) {
      out.emplace_back("failed_stage: missing on an incomplete record");
    } else if (r.stages.empty() || r.stages.back().stage != *r.failed_stage || r.stages.back().ok) {
      out.emplace_back("failed_stage: does not match the last stage marker");
    }
  } else {
    if (!all_ok) out.emplace_back("stages: a complete record needs all five stages ok");
    if (r.failed_stage) out.emplace_back("failed_stage: set on a complete record");
  }

  const bool scored = !r.stages.empty() && r.stages.back().stage == Stage::score && r.stages.back().ok;
  if (scored != r.quality_case.has_value() || scored != r.quality_feature.has_value()) {
    out.emplace_back("quality: present only when the score stage succeeded");
  }
  if (r.quality_case) {
    try {
      if (scoring::case_level_quality(r.verdicts) != *r.quality_case) {
        out.emplace_back("quality_case: differs from the value derived from verdicts");
      }
    } catch (const Error& e) {
      out.push_back(std::string("quality_case: cannot be derived: ") + e.what());
    }
  }
  if (r.quality_feature) {
    try {
      const auto derived = scoring::feature_level_quality(r.verdicts, r.cases, r.n_features, r.feature_strategy);
      if (derived.score != *r.quality_feature) {
        out.emplace_back("quality_feature: differs from the value derived from verdicts");
      }
      if (derived.features != r.feature_results) {
        out.emplace_back("features: differ from the results derived from verdicts");
      }
    } catch (const Error& e) {
      out.push_back(std::string("quality_feature: cannot be derived: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::shared_ptr<llmgateway::ChatProvider> make_provider(const HarnessConfig& config) {
  if (!config.scripted_replies.empty()) {
    return llmgateway::ScriptedProvider::from_json(read_json_file(config.scripted_replies));
  }
  return std::make_shared<llmgateway::HttpProvider>(config.provider);
}

std::unique_ptr<executor::Policy> make_policy(const HarnessConfig& config, const taskmodel::TaskSpec& task,
                                              llmgateway::Gateway& gateway) {
  if (config.policy == PolicyKind::llm) {
    return std::make_unique<executor::LlmPolicy>(gateway, config.models.pick(config.models.execution));
  }
  if (config.policy_file.empty()) {
    throw Error(Errc::precondition, fmt::format("the {} policy needs a policy file", to_string(config.policy)));
  }
  const auto file = fs::is_directory(config.policy_file) ? config.policy_file / (task.id + ".json") : config.policy_file;
  const auto doc = read_json_file(file);
  if (config.policy == PolicyKind::scripted) {
    return std::make_unique<executor::ScriptedPolicy>(executor::ScriptedPolicy::from_json(doc));
  }
  return std::make_unique<executor::ProbePolicy>(executor::ProbePolicy::from_json(doc));
}

EvaluationRecord evaluate_project(const taskmodel::TaskSpec& task, const Target& target, const HarnessConfig& config,
                                  RunContext context) {
  if (auto problems = taskmodel::validate_task(task); !problems.empty()) {
    throw Error(Errc::schema_violation, "task " + task.id + ": " + problems.front());
  }
  if (auto problems = validate_config(config); !problems.empty()) {
    throw Error(Errc::precondition, "config: " + problems.front());
  }
  if (const auto* sim = std::get_if<envdriver::SimAppSpec>(&target); sim && config.driver_mode != DriverMode::simulated) {
    throw Error(Errc::precondition, "a simulated target needs driver mode simulated");
  }
  if (std::holds_alternative<taskmodel::ProjectUnderTest>(target) && config.driver_mode != DriverMode::real) {
    throw Error(Errc::precondition, "a real target needs driver mode real");
  }

  std::optional<llmgateway::Gateway> owned;
  if (context.gateway == nullptr) {
    owned.emplace(make_provider(config), config.provider);
    context.gateway = &*owned;
  }
  auto& root = *context.gateway;

  const auto dir = config.out_dir / task.id;
  fs::create_directories(dir);

  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  EvaluationRecord rec;
  rec.task_id = task.id;
  rec.n_features = static_cast<int>(task.features.size());
  rec.feature_strategy = config.feature_strategy;
  rec.config_fingerprint = config_fingerprint(config);
  rec.started_at = utc_timestamp();

  const auto finish = [&]() -> EvaluationRecord {
    rec.finished_at = utc_timestamp();
    rec.wall_time_s = std::chrono::duration<double>(clock::now() - started).count();
    try {
      emit_report({rec}, std::nullopt, dir);
    } catch (const Error& e) {
      rec.warnings.push_back(std::string("per-task report not written: ") + e.what());
    }
    save_record(rec, dir / "record.json");
    return rec;
  };
  const auto fail = [&](Stage stage, const std::string& what) -> EvaluationRecord {
    rec.stages.push_back({stage, false, what});
    rec.incomplete = true;
    rec.failed_stage = stage;
    rec.failure = what;
    return finish();
  };
  const auto pass = [&](Stage stage, std::string detail) { rec.stages.push_back({stage, true, std::move(detail)}); };
  const auto save_cases = [&](const std::string& model) {
    testgen::save_case_file({task.id, rec.cases, model, rec.started_at}, dir / "cases.json");
  };

  // generate
  auto gen_config = testgen::with_domain_examples(config.generation, task.domain);
  if (gen_config.model_id.empty()) gen_config.model_id = config.models.pick(config.models.generation);
  const bool provided = context.provided_cases.has_value();
  try {
    if (provided) {
      rec.cases = *context.provided_cases;
      for (auto& c : rec.cases) c.origin = testgen::CaseOrigin::provided;
      pass(Stage::generate, fmt::format("{} provided cases", rec.cases.size()));
    } else {
      auto gw = root.fork();
      auto result = testgen::generate_test_cases(task, gen_config, gw);
      rec.usage += gw.usage();
      rec.cases = std::move(result.cases);
      for (auto& w : result.warnings) rec.warnings.push_back("generate: " + w);
      pass(Stage::generate, fmt::format("{} cases", rec.cases.size()));
    }
    if (rec.cases.empty()) throw Error(Errc::empty_input, "no test cases");
    save_cases(provided ? std::string("provided") : gen_config.model_id);
  } catch (const std::exception& e) {
    return fail(Stage::generate, e.what());
  }

  // link
  try {
    const bool linked = std::all_of(rec.cases.begin(), rec.cases.end(),
                                    [](const testgen::TestCase& c) { return !c.linked_features.empty(); });
    if (provided && linked) {
      pass(Stage::link, "links provided");
    } else {
      auto gw = root.fork();
      auto result = testgen::link_cases_to_features(rec.cases, task, gw, config.models.pick(config.models.linking));
      rec.usage += gw.usage();
      rec.cases = std::move(result.cases);
      for (auto& w : result.warnings) rec.warnings.push_back("link: " + w);
      pass(Stage::link, "linked");
    }
    if (auto problems = testgen::validate_cases(rec.cases, task); !problems.empty()) {
      throw Error(Errc::schema_violation, "cases: " + problems.front());
    }
    save_cases(provided ? std::string("provided") : gen_config.model_id);
  } catch (const std::exception& e) {
    return fail(Stage::link, e.what());
  }

  // execute
  executor::Trace trace;
  try {
    auto gw = root.fork();
    auto session = std::visit(
        [&](const auto& t) -> std::unique_ptr<envdriver::DriverSession> {
          if constexpr (std::is_same_v<std::decay_t<decltype(t)>, envdriver::SimAppSpec>) {
            return envdriver::open_session(t);
          } else {
            return envdriver::open_session(t, config.real_driver);
          }
        },
        target);
    auto policy = make_policy(config, task, gw);
    trace = executor::run_evaluation(task, rec.cases, *session, *policy, config.budget);
    rec.usage += gw.usage();
    rec.trace_file = "trace.jsonl";
    rec.trace_end = std::string(executor::to_string(trace.end));
    rec.trace_steps = static_cast<int>(trace.steps.size());
    executor::save_trace(trace, dir / rec.trace_file);
    if (trace.incomplete()) {
      const auto detail = trace.end_detail.empty() ? std::string(executor::to_string(trace.end)) : trace.end_detail;
      return fail(Stage::execute, fmt::format("trace ended with {}: {}", executor::to_string(trace.end), detail));
    }
    pass(Stage::execute, fmt::format("{} steps, {}", trace.steps.size(), executor::to_string(trace.end)));
  } catch (const std::exception& e) {
    return fail(Stage::execute, e.what());
  }

  // judge
  judge::VerdictFile verdicts{task.id, config.judge_path, {}, {}};
  try {
    auto gw = root.fork();
    const auto report = judge::merge_reports(trace.tell_payloads, verdicts.warnings);
    if (config.judge_path == judge::JudgePath::agent) {
      verdicts.verdicts = judge::normalize_verdicts(report, rec.cases, verdicts.warnings);
    } else {
      verdicts.verdicts = judge::rejudge(rec.cases, report, trace, gw, config.models.pick(config.models.judgment));
    }
    if (config.classify_failures) {
      for (auto& v : verdicts.verdicts) {
        if (v.result == Outcome::Pass) continue;
        const auto& text = rec.cases[static_cast<std::size_t>(v.case_id)].text;
        v.failure_mode = judge::classify_failure_mode(v, text, judge::case_evidence(v.case_id, report, trace), gw,
                                                      config.models.pick(config.models.judgment));
      }
    }
    rec.usage += gw.usage();
    rec.verdicts = verdicts.verdicts;
    for (const auto& w : verdicts.warnings) rec.warnings.push_back("judge: " + w);
    judge::save_verdicts(verdicts, dir / "verdicts.json");
    pass(Stage::judge, std::string(judge::to_string(config.judge_path)));
  } catch (const std::exception& e) {
    return fail(Stage::judge, e.what());
  }

  // score
  try {
    rec.quality_case = scoring::case_level_quality(rec.verdicts);
    auto fq = scoring::feature_level_quality(rec.verdicts, rec.cases, rec.n_features, config.feature_strategy);
    rec.quality_feature = fq.score;
    rec.feature_results = std::move(fq.features);
    pass(Stage::score, std::string(scoring::to_string(config.feature_strategy)));
  } catch (const std::exception& e) {
    return fail(Stage::score, e.what());
  }

  // optional static scores; failures are warnings only
  if (config.static_code || config.static_visual) {
    StaticScores ss;
    if (config.static_code) {
      const auto* put = std::get_if<taskmodel::ProjectUnderTest>(&target);
      const auto* dir_target = put ? std::get_if<taskmodel::DirectoryTarget>(&put->target) : nullptr;
      if (dir_target == nullptr) {
        rec.warnings.emplace_back("static: code quality skipped: target has no source directory");
      } else {
        try {
          auto gw = root.fork();
          const auto corpus = staticeval::collect_sources(dir_target->directory, {});
          auto result = staticeval::code_quality_eval(task, corpus.text, gw, config.models.pick(config.models.static_code));
          rec.usage += gw.usage();
          if (corpus.truncated) result.warnings.emplace_back("source corpus truncated");
          ss.code = staticeval::aggregate_llm_score(result.results);
          ss.detail["code_quality"] = staticeval::code_quality_to_json(result);
        } catch (const std::exception& e) {
          rec.warnings.push_back(std::string("static: code quality failed: ") + e.what());
        }
      }
    }
    if (config.static_visual) {
      try {
        auto gw = root.fork();
        const auto rubric =
            config.visual_rubric.empty() ? std::string(prompts::kDefaultVisualRubric) : config.visual_rubric;
        const auto result = staticeval::visual_quality_eval(task, distinct_screens(trace), gw,
                                                            config.models.pick(config.models.visual), rubric);
        rec.usage += gw.usage();
        ss.visual = result.value;
        ss.detail["visual_quality"] = staticeval::visual_quality_to_json(result);
      } catch (const std::exception& e) {
        rec.warnings.push_back(std::string("static: visual quality failed: ") + e.what());
      }
    }
    rec.static_scores = std::move(ss);
  }
  return finish();
}

std::vector<EvaluationRecord> run_suite(const std::vector<Job>& jobs, const HarnessConfig& config,
                                        llmgateway::Gateway& gateway) {
  std::vector<EvaluationRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      try {
        records[i] = evaluate_project(job.task, job.target, config, {&gateway, job.provided_cases});
      } catch (const std::exception& e) {
        EvaluationRecord r;
        r.task_id = job.task.id;
        r.n_features = static_cast<int>(job.task.features.size());
        r.incomplete = true;
        r.failed_stage = Stage::generate;
        r.stages.push_back({Stage::generate, false, e.what()});
        r.failure = e.what();
        r.feature_strategy = config.feature_strategy;
        r.config_fingerprint = config_fingerprint(config);
        records[i] = std::move(r);
      }
    }
  };
  const auto n = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(config.workers, 1)), 1,
                                         std::max<std::size_t>(jobs.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work);
    work();
  }
  return records;
}

scoring::AlignmentReport align_run(const std::vector<EvaluationRecord>& records,
                                   const std::vector<taskmodel::HumanLabels>& labels) {
  if (records.empty()) throw Error(Errc::empty_input, "align_run: no records");
  std::map<std::string, const taskmodel::HumanLabels*> by_task;
  for (const auto& l : labels) by_task[l.task_id] = &l;

  std::vector<std::string> notes;
  std::vector<scoring::ProjectScores> projects;
  for (const auto& r : records) {
    const auto it = by_task.find(r.task_id);
    if (it == by_task.end()) throw Error(Errc::unmatched_task, "align_run: no labels for task " + r.task_id);
    if (r.incomplete || !r.quality_case || !r.quality_feature) {
      notes.push_back(fmt::format("task {} skipped: incomplete record", r.task_id));
      continue;
    }
    const auto& l = *it->second;
    scoring::ProjectScores p;
    p.task_id = r.task_id;
    p.case_quality = r.quality_case->value;
    p.feature_quality = r.quality_feature->value;
    p.human_quality = taskmodel::human_quality(l);
    if (l.case_labels) {
      std::map<int, Outcome> agent;
      for (const auto& v : r.verdicts) agent[v.case_id] = v.result;
      for (const auto& cl : *l.case_labels) {
        const auto a = agent.find(cl.case_id);
        if (a == agent.end()) {
          notes.push_back(fmt::format("task {}: labelled case {} has no verdict; counted Uncertain", r.task_id, cl.case_id));
        }
        p.agent_cases.push_back(a == agent.end() ? Outcome::Uncertain : a->second);
        p.human_cases.push_back(cl.result);
      }
    }
    projects.push_back(std::move(p));
  }
  if (projects.empty()) throw Error(Errc::empty_input, "align_run: every record is incomplete");
  auto report = scoring::align(projects);
  notes.insert(notes.end(), report.notes.begin(), report.notes.end());
  report.notes = std::move(notes);
  return report;
}

// ---------------------------------------------------------------------------
// Reports

ordered_json render_json(const std::vector<EvaluationRecord>& records,
                         const std::optional<scoring::AlignmentReport>& alignment) {
  ordered_json j;
  j["schema_version"] = 1;
  j["tasks"] = ordered_json::array();
  llmgateway::UsageSummary total;
  int incomplete = 0;
  for (const auto& r : records) {
    auto t = record_to_json(r);
    t.erase("schema_version");
    std::map<std::string, int> modes;
    for (const auto& v : r.verdicts) {
      if (v.failure_mode) ++modes[std::string(judge::to_string(*v.failure_mode))];
    }
    t["failure_modes"] = modes;
    if (r.static_scores) {
      t["code_quality"] = r.static_scores->detail.value("code_quality", ordered_json(nullptr));
      t["visual_quality"] = r.static_scores->detail.value("visual_quality", ordered_json(nullptr));
    }
    j["tasks"].push_back(std::move(t));
    total += r.usage;
    incomplete += r.incomplete ? 1 : 0;
  }
  j["summary"] = {{"n_tasks", records.size()}, {"n_incomplete", incomplete}, {"usage", llmgateway::usage_to_json(total)}};
  j["alignment"] = alignment ? scoring::alignment_to_json(*alignment) : ordered_json(nullptr);
  return j;
}

std::string render_markdown(const std::vector<EvaluationRecord>& records,
                            const std::optional<scoring::AlignmentReport>& alignment) {
  std::string md = "# Evaluation report\n\n";
  md += "| Task | Status | Cases | Case quality | Feature quality | Cost | Time (s) |\n";
  md += "|---|---|---|---|---|---|---|\n";
  llmgateway::UsageSummary total;
  for (const auto& r : records) {
    const auto status = r.incomplete ? fmt::format("incomplete ({})", to_string(*r.failed_stage)) : std::string("ok");
    md += fmt::format("| {} | {} | {} | {} | {} | {:.4f} | {:.2f} |\n", cell(r.task_id), status, r.cases.size(),
                      r.quality_case ? fmt4(r.quality_case->value) : "-",
                      r.quality_feature ? fmt4(r.quality_feature->value) : "-", r.usage.total_cost, r.wall_time_s);
    total += r.usage;
  }
  md += fmt::format("\nModel calls: {}, prompt tokens: {}, completion tokens: {}, cost: {:.4f}\n", total.call_count,
                    total.prompt_tokens, total.completion_tokens, total.total_cost);

  if (alignment) {
    const auto& a = *alignment;
    md += "\n## Alignment with human labels\n\n";
    md += fmt::format("- Projects: {}, labelled cases: {}\n", a.n_projects, a.n_cases);
    md += fmt::format("- Accuracy: {}\n", a.accuracy ? fmt4(*a.accuracy) : "n/a");
    md += fmt::format("- Three-class accuracy: {}\n", a.three_class_accuracy ? fmt4(*a.three_class_accuracy) : "n/a");
    md += fmt::format("- Pearson (case level): {}\n", fmt_opt4(a.pearson_case));
    md += fmt::format("- Pearson (feature level): {}\n", fmt_opt4(a.pearson_feature));
    md += fmt::format("- Overlap rate: {} (10-bin histogram intersection; interpretation)\n", fmt4(a.overlap_rate));
    md += fmt::format("- Mean absolute deviation: {}\n", fmt4(a.mean_abs_deviation));
    for (const auto& n : a.notes) md += "- Note: " + n + "\n";
  }

  for (const auto& r : records) {
    md += fmt::format("\n## {}\n\n", r.task_id);
    if (r.incomplete) md += fmt::format("Incomplete at stage `{}`: {}\n\n", to_string(*r.failed_stage), cell(r.failure));
    if (r.quality_case) {
      md += fmt::format("Case quality {} over {} cases; feature quality {} over {} features (strategy {}).\n\n",
                        fmt4(r.quality_case->value), r.quality_case->n_items, fmt4(r.quality_feature->value),
                        r.quality_feature->n_items, scoring::to_string(r.feature_strategy));
    }
    if (!r.verdicts.empty()) {
      md += "| Case | Test case | Result | Evidence | Source | Failure mode |\n|---|---|---|---|---|---|\n";
      for (const auto& v : r.verdicts) {
        const auto text = static_cast<std::size_t>(v.case_id) < r.cases.size()
                              ? r.cases[static_cast<std::size_t>(v.case_id)].text
                              : std::string();
        md += fmt::format("| {} | {} | {} | {} | {} | {} |\n", v.case_id, cell(text), to_string(v.result),
                          cell(v.evidence), judge::to_string(v.provenance),
                          v.failure_mode ? std::string(judge::to_string(*v.failure_mode)) : "-");
      }
      md += '\n';
    }
    if (!r.feature_results.empty()) {
      md += "| Feature | Passed | Linked cases |\n|---|---|---|\n";
      for (const auto& f : r.feature_results) {
        std::string linked;
        for (int id : f.linked_cases) linked += (linked.empty() ? "" : ", ") + std::to_string(id);
        md += fmt::format("| {} | {} | {} |\n", f.feature_index, f.passed ? "yes" : "no", linked.empty() ? "-" : linked);
      }
      md += '\n';
    }
    std::map<std::string, int> modes;
    for (const auto& v : r.verdicts) {
      if (v.failure_mode) ++modes[std::string(judge::to_string(*v.failure_mode))];
    }
    if (!modes.empty()) {
      md += "Failure modes:";
      for (const auto& [mode, n] : modes) md += fmt::format(" {} {};", mode, n);
      md.back() = '\n';
      md += '\n';
    }
    if (r.static_scores) {
      md += fmt::format("Static scores: code {}, visual {}\n\n",
                        r.static_scores->code ? fmt4(*r.static_scores->code) : "-",
                        r.static_scores->visual ? fmt4(*r.static_scores->visual) : "-");
    }
    md += fmt::format("Usage: {} calls, cost {:.4f}, {:.2f} s. Trace: {} steps, end {}.\n", r.usage.call_count,
                      r.usage.total_cost, r.wall_time_s, r.trace_steps, r.trace_end.empty() ? "-" : r.trace_end);
    for (const auto& w : r.warnings) md += "- Warning: " + w + "\n";
  }
  return md;
}

void emit_report(const std::vector<EvaluationRecord>& records,
                 const std::optional<scoring::AlignmentReport>& alignment, const fs::path& directory) {
  if (records.empty()) throw Error(Errc::precondition, "emit_report: no records");
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec || !fs::is_directory(directory)) {
    throw Error(Errc::io, "emit_report: cannot create " + directory.string());
  }
  write_json_file(directory / "report.json", render_json(records, alignment));
  write_text_file(directory / "report.md", render_markdown(records, alignment));
}

}  // namespace appjudge::harness
