#include "appjudge/staticeval.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "appjudge/error.hpp"
#include "appjudge/json_io.hpp"
#include "appjudge/prompts.hpp"
#include "appjudge/scoring.hpp"

namespace appjudge::staticeval {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

bool excluded(const fs::path& rel, const std::vector<std::string>& globs) {
  const auto whole = rel.generic_string();
  for (const auto& g : globs) {
    if (::fnmatch(g.c_str(), whole.c_str(), 0) == 0) return true;
    for (const auto& part : rel) {
      if (::fnmatch(g.c_str(), part.string().c_str(), 0) == 0) return true;
    }
  }
  return false;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::optional<int> leading_int(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && !std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == s.size()) return std::nullopt;
  int value = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])) && value < 1000000) {
    value = value * 10 + (s[i++] - '0');
  }
  return value;
}

constexpr std::string_view kCodeQualityExample = R"([
    {
        "requirement_id": "1",
        "satisfied": true,
        "score": 80,
        "reason": "The login form validates both fields and shows inline errors. Session state is kept in a dedicated module. Failed requests are caught but the retry path is missing. Overall the requirement is met with minor gaps."
    }
])";

}  // namespace

std::vector<std::string> validate_config(const CodeScanConfig& config) {
  std::vector<std::string> out;
  if (config.extension_allowlist.empty()) out.emplace_back("extension_allowlist: must be non-empty");
  if (config.max_total_bytes == 0) out.emplace_back("max_total_bytes: must be positive");
  return out;
}

Corpus collect_sources(const fs::path& root, const CodeScanConfig& config) {
  if (auto problems = validate_config(config); !problems.empty()) {
    throw Error(Errc::precondition, "code scan config: " + problems.front());
  }
  if (!fs::is_directory(root)) throw Error(Errc::missing_file, "source root not found: " + root.string());

  std::vector<std::string> allow;
  for (const auto& e : config.extension_allowlist) allow.push_back(lower(e));

  std::vector<std::string> files;
  for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied);
       it != fs::recursive_directory_iterator(); ++it) {
    const auto rel = fs::relative(it->path(), root);
    if (excluded(rel, config.path_excludes)) {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file()) continue;
    const auto ext = lower(it->path().extension().string());
    if (std::find(allow.begin(), allow.end(), ext) == allow.end()) continue;
    files.push_back(rel.generic_string());
  }
  if (files.empty()) throw Error(Errc::empty_input, "no matching source files under " + root.string());
  std::sort(files.begin(), files.end());

  Corpus corpus;
  corpus.files = files;
  for (const auto& f : files) {
    corpus.text += "### File: " + f + "\n";
    corpus.text += read_text_file(root / f);
    if (corpus.text.empty() || corpus.text.back() != '\n') corpus.text += '\n';
    corpus.text += '\n';
    if (corpus.text.size() > config.max_total_bytes) break;
  }
  if (corpus.text.size() > config.max_total_bytes) {
    std::size_t cut = config.max_total_bytes;
    // do not split a UTF-8 sequence
    while (cut > 0 && (static_cast<unsigned char>(corpus.text[cut]) & 0xC0) == 0x80) --cut;
    corpus.text.resize(cut);
    corpus.text += kTruncationMarker;
    corpus.truncated = true;
  }
  return corpus;
}

std::string build_code_quality_prompt(const taskmodel::TaskSpec& task, const std::string& corpus) {
  std::string features;
  for (const auto& f : task.features) features += fmt::format("{}. {}\n", f.index, f.text);
  return prompts::fill_template(prompts::kCodeQuality, {{"{query}", task.description},
                                                        {"{features}", features},
                                                        {"{codes}", corpus},
                                                        {"{example}", std::string(kCodeQualityExample)}});
}

CodeQualityResult code_quality_eval(const taskmodel::TaskSpec& task, const std::string& corpus,
                                    llmgateway::Gateway& gateway, const std::string& model_id) {
  if (corpus.empty()) throw Error(Errc::precondition, "code_quality_eval: corpus is empty");
  const auto request = llmgateway::make_request(model_id, "", build_code_quality_prompt(task, corpus));
  const json list = gateway.complete_structured(request, llmgateway::Shape::feature_score_list);

  CodeQualityResult out;
  const int n = static_cast<int>(task.features.size());
  std::map<int, StaticFeatureResult> by_feature;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& item = list[i];
    std::optional<int> index;
    if (item.contains("requirement_id")) {
      const auto& rid = item["requirement_id"];
      index = rid.is_number_integer() ? std::optional<int>(rid.get<int>())
                                      : leading_int(rid.is_string() ? rid.get<std::string>() : rid.dump());
    }
    if (!index) index = static_cast<int>(i) + 1;
    if (*index < 1 || *index > n) {
      out.warnings.push_back(fmt::format("result for unknown requirement {} dropped", *index));
      continue;
    }
    if (by_feature.count(*index)) {
      out.warnings.push_back(fmt::format("duplicate result for requirement {} ignored", *index));
      continue;
    }
    StaticFeatureResult r;
    r.requirement_id = std::to_string(*index);
    r.satisfied = item.value("satisfied", false);
    double score = item.contains("score") && item["score"].is_number() ? item["score"].get<double>() : 0.0;
    if (score < 0.0 || score > 100.0) {
      out.warnings.push_back(fmt::format("requirement {}: score {} clamped to [0,100]", *index, score));
      score = std::clamp(score, 0.0, 100.0);
    }
    r.score = static_cast<int>(std::lround(score));
    r.reason = item.contains("reason") && item["reason"].is_string() ? item["reason"].get<std::string>() : "";
    by_feature[*index] = std::move(r);
  }
  for (int f = 1; f <= n; ++f) {
    if (auto it = by_feature.find(f); it != by_feature.end()) {
      out.results.push_back(it->second);
    } else {
      out.warnings.push_back(fmt::format("requirement {} not returned; scored 0", f));
      out.results.push_back({std::to_string(f), false, 0, "not returned"});
    }
  }
  return out;
}

double aggregate_llm_score(const std::vector<StaticFeatureResult>& results) {
  if (results.empty()) throw Error(Errc::empty_input, "aggregate_llm_score: no results");
  const auto passed = std::count_if(results.begin(), results.end(),
                                    [](const StaticFeatureResult& r) { return r.score > kPassThreshold; });
  return static_cast<double>(passed) / static_cast<double>(results.size());
}

std::optional<double> extract_score(std::string_view reply) {
  for (std::size_t i = 0; i < reply.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(reply[i]))) continue;
    std::size_t j = i;
    while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
    if (j + 1 < reply.size() && reply[j] == '.' && std::isdigit(static_cast<unsigned char>(reply[j + 1]))) {
      ++j;
      while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
    }
    return std::stod(std::string(reply.substr(i, j - i)));
  }
  return std::nullopt;
}

VisualQualityResult visual_quality_eval(const taskmodel::TaskSpec& task,
                                        const std::vector<llmgateway::ImageAttachment>& screenshots,
                                        llmgateway::Gateway& gateway, const std::string& model_id,
                                        std::string_view rubric) {
  if (screenshots.empty()) throw Error(Errc::precondition, "visual_quality_eval: no screenshots");
  llmgateway::ChatRequest request;
  request.model_id = model_id;
  llmgateway::ChatMessage message{llmgateway::Role::user,
                                  prompts::fill_template(rubric, {{"{query}", task.description}}), {}};
  int rendered = 0;
  for (const auto& shot : screenshots) {
    if (shot.media_type == "text/plain") {
      message.text += fmt::format("\n\nScreen {}:\n{}", ++rendered, shot.bytes);
    } else {
      message.images.push_back(shot);
    }
  }
  request.messages.push_back(std::move(message));

  auto reply = gateway.complete(request);
  auto score = extract_score(reply.text);
  if (!score) {
    request.messages.push_back({llmgateway::Role::assistant, reply.text, {}});
    request.messages.push_back(
        {llmgateway::Role::user, "Reply with a single integer between 0 and 100 and nothing else.", {}});
    reply = gateway.complete(request);
    score = extract_score(reply.text);
    if (!score) throw UnparseableError("visual quality: no score in reply", reply.text);
  }
  VisualQualityResult out;
  out.raw = *score;
  if (*score > 100.0) out.warnings.push_back(fmt::format("visual score {} clamped to 100", *score));
  out.value = std::clamp(*score, 0.0, 100.0) / 100.0;
  return out;
}

ordered_json code_quality_to_json(const CodeQualityResult& result) {
  ordered_json j;
  j["score"] = scoring::round4(aggregate_llm_score(result.results));
  j["threshold"] = kPassThreshold;
  j["features"] = ordered_json::array();
  for (const auto& r : result.results) {
    j["features"].push_back({{"requirement_id", r.requirement_id},
                             {"satisfied", r.satisfied},
                             {"score", r.score},
                             {"passed", r.score > kPassThreshold},
                             {"reason", r.reason}});
  }
  j["warnings"] = result.warnings;
  return j;
}

ordered_json visual_quality_to_json(const VisualQualityResult& result) {
  return {{"score", scoring::round4(result.value)}, {"raw", result.raw}, {"warnings", result.warnings}};
}

}  // namespace appjudge::staticeval
