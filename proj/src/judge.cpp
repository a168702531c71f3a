#include "appjudge/judge.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include <fmt/format.h>

#include "appjudge/error.hpp"
#include "appjudge/json_io.hpp"
#include "appjudge/prompts.hpp"

namespace appjudge::judge {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string_view trim_view(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<int> case_key(std::string_view key) {
  key = trim_view(key);
  int value = 0;
  auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), value);
  if (ec != std::errc{} || ptr != key.data() + key.size() || value < 0) return std::nullopt;
  return value;
}

[[noreturn]] void unparseable(std::string_view text, const std::string& why) {
  throw UnparseableError("final report: " + why, std::string(text));
}

constexpr std::string_view kFailureModePrompt = R"(A GUI testing agent did not pass the test case below. Classify the most likely reason for this outcome.

Test Case: {case}

Agent Verdict: {result}

Agent Evidence: {evidence}

Trace Excerpt:
{trace}

Categories:
- missing_information: the check needs information the environment cannot provide (sound, external devices, absent data), so the evidence is insufficient
- model_hallucination: the agent observed the relevant facts but drew a conclusion that contradicts them
- low_quality_test_case: the test case is mis-specified or more specific than a reasonable implementation requires
- advanced_reasoning_needed: the case requires sustained memory or multi-step logic that the agent could not maintain
- real_time_feedback_needed: the application changes faster than the agent can observe and act
- standard_understanding_mismatch: the agent applied a different pass standard than the test case intends
- none: the verdict is a correct report of a genuinely missing or broken feature

Answer with the category name only.)";

}  // namespace

ReportMap parse_final_report(std::string_view text) {
  std::string body(trim_view(llmgateway::strip_code_fences(text)));
  if (body.size() >= 2 && body.front() == '(' && body.back() == ')') {
    body = std::string(trim_view(std::string_view(body).substr(1, body.size() - 2)));
  }
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) {
    const auto open = body.find('{');
    const auto close = body.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) unparseable(text, "no JSON object found");
    doc = json::parse(body.substr(open, close - open + 1), nullptr, false);
    if (doc.is_discarded()) unparseable(text, "malformed JSON object");
  }
  if (!doc.is_object()) unparseable(text, "expected a JSON object keyed by case number");

  ReportMap out;
  for (const auto& [key, value] : doc.items()) {
    const auto id = case_key(key);
    if (!id) unparseable(text, fmt::format("key '{}' is not a case number", key));
    ReportEntry entry;
    std::string token;
    if (value.is_string()) {
      token = value.get<std::string>();
    } else if (value.is_object() && value.contains("result") && value["result"].is_string()) {
      token = value["result"].get<std::string>();
      if (value.contains("evidence")) {
        entry.evidence = value["evidence"].is_string() ? value["evidence"].get<std::string>() : value["evidence"].dump();
      }
    } else {
      unparseable(text, fmt::format("case {} has no result string", key));
    }
    const auto outcome = parse_outcome(token);
    if (!outcome) throw Error(Errc::unknown_token, fmt::format("case {}: unknown result token '{}'", key, token));
    entry.result = *outcome;
    out[*id] = std::move(entry);
  }
  return out;
}

std::string render_final_report(const ReportMap& report) {
  ordered_json doc = ordered_json::object();
  for (const auto& [id, entry] : report) {
    doc[std::to_string(id)] = {{"result", std::string(to_string(entry.result))}, {"evidence", entry.evidence}};
  }
  return doc.dump(4);
}

ReportMap merge_reports(std::span<const std::string> payloads, std::vector<std::string>& warnings) {
  ReportMap merged;
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    try {
      for (auto& [id, entry] : parse_final_report(payloads[i])) merged[id] = std::move(entry);
    } catch (const Error& e) {
      warnings.push_back(fmt::format("Tell payload {} skipped: {}", i, e.what()));
    }
  }
  return merged;
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::agent_report: return "agent_report";
    case Provenance::llm_judgment: return "llm_judgment";
    case Provenance::fill_missing: return "fill_missing";
  }
  return "fill_missing";
}

std::optional<Provenance> parse_provenance(std::string_view text) {
  for (auto p : {Provenance::agent_report, Provenance::llm_judgment, Provenance::fill_missing}) {
    if (to_string(p) == text) return p;
  }
  return std::nullopt;
}

std::string_view to_string(FailureMode mode) {
  switch (mode) {
    case FailureMode::missing_information: return "missing_information";
    case FailureMode::model_hallucination: return "model_hallucination";
    case FailureMode::low_quality_test_case: return "low_quality_test_case";
    case FailureMode::advanced_reasoning_needed: return "advanced_reasoning_needed";
    case FailureMode::real_time_feedback_needed: return "real_time_feedback_needed";
    case FailureMode::standard_understanding_mismatch: return "standard_understanding_mismatch";
    case FailureMode::none: return "none";
  }
  return "none";
}

std::optional<FailureMode> parse_failure_mode(std::string_view text) {
  std::string t = normalize_token(text);
  std::replace_if(t.begin(), t.end(), [](char c) { return c == ' ' || c == '-'; }, '_');
  static const FailureMode all[] = {
      FailureMode::missing_information,       FailureMode::model_hallucination,
      FailureMode::low_quality_test_case,     FailureMode::advanced_reasoning_needed,
      FailureMode::real_time_feedback_needed, FailureMode::standard_understanding_mismatch,
      FailureMode::none,
  };
  for (auto m : all) {
    if (t == to_string(m)) return m;
  }
  // Longer replies: accept exactly one tag mentioned anywhere.
  std::optional<FailureMode> found;
  for (auto m : all) {
    if (m == FailureMode::none) continue;
    if (t.find(to_string(m)) != std::string::npos) {
      if (found) return std::nullopt;
      found = m;
    }
  }
  return found;
}

std::vector<CaseVerdict> normalize_verdicts(const ReportMap& report, const std::vector<testgen::TestCase>& cases,
                                            std::vector<std::string>& warnings) {
  std::set<int> known;
  for (const auto& c : cases) known.insert(c.id);
  for (const auto& [id, entry] : report) {
    (void)entry;
    if (!known.count(id)) warnings.push_back(fmt::format("report entry for unknown case {} dropped", id));
  }
  std::vector<CaseVerdict> out;
  for (int id : known) {
    CaseVerdict v;
    v.case_id = id;
    if (auto it = report.find(id); it != report.end()) {
      v.result = it->second.result;
      v.evidence = trim_view(it->second.evidence).empty() ? "no evidence reported" : it->second.evidence;
      v.provenance = Provenance::agent_report;
    } else {
      v.result = Outcome::Uncertain;
      v.provenance = Provenance::fill_missing;
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::string_view to_string(JudgeAnswer answer) {
  switch (answer) {
    case JudgeAnswer::Yes: return "Yes";
    case JudgeAnswer::No: return "No";
    case JudgeAnswer::Uncertain: return "Uncertain";
  }
  return "Uncertain";
}

Outcome to_outcome(JudgeAnswer answer) {
  switch (answer) {
    case JudgeAnswer::Yes: return Outcome::Pass;
    case JudgeAnswer::No: return Outcome::Fail;
    case JudgeAnswer::Uncertain: return Outcome::Uncertain;
  }
  return Outcome::Uncertain;
}

std::optional<JudgeAnswer> parse_judge_answer(std::string_view reply) {
  const auto t = normalize_token(reply);
  if (t == "yes") return JudgeAnswer::Yes;
  if (t == "no") return JudgeAnswer::No;
  if (t == "uncertain") return JudgeAnswer::Uncertain;
  return std::nullopt;
}

std::string build_judgement_prompt(std::string_view case_text, std::string_view model_result_text) {
  return prompts::fill_template(prompts::kTestJudgement, {{"[task_desc]", std::string(case_text)},
                                                          {"[model_output]", std::string(model_result_text)}});
}

JudgeAnswer judge_case(std::string_view case_text, std::string_view model_result_text, llmgateway::Gateway& gateway,
                       const std::string& model_id) {
  if (trim_view(case_text).empty() || trim_view(model_result_text).empty()) {
    throw Error(Errc::precondition, "judge_case: case text and model result must be non-empty");
  }
  auto request = llmgateway::make_request(model_id, "", build_judgement_prompt(case_text, model_result_text));
  auto reply = gateway.complete(request);
  if (auto answer = parse_judge_answer(reply.text)) return *answer;
  request.messages.push_back({llmgateway::Role::assistant, reply.text, {}});
  request.messages.push_back({llmgateway::Role::user, "Only answer with \"Yes\", \"No\", or \"Uncertain\".", {}});
  reply = gateway.complete(request);
  return parse_judge_answer(reply.text).value_or(JudgeAnswer::Uncertain);
}

std::string case_evidence(int case_id, const ReportMap& report, const executor::Trace& trace) {
  std::string text;
  if (auto it = report.find(case_id); it != report.end()) {
    text += fmt::format("Reported result: {}\nReported evidence: {}\n", to_string(it->second.result),
                        it->second.evidence);
  }
  std::string steps;
  for (const auto& step : trace.steps) {
    if (step.active_case != case_id) continue;
    steps += fmt::format("- {} -> {}{}\n", envdriver::format_action(step.action),
                         step.outcome.ok ? "ok" : "failed",
                         step.outcome.detail.empty() ? "" : " (" + step.outcome.detail + ")");
    if (!step.thought.empty()) steps += "  thought: " + step.thought + "\n";
  }
  if (!steps.empty()) text += "Recorded steps:\n" + steps;
  if (text.empty()) text = "The tester reported no result and recorded no steps for this test case.";
  return text;
}

std::vector<CaseVerdict> rejudge(const std::vector<testgen::TestCase>& cases, const ReportMap& report,
                                 const executor::Trace& trace, llmgateway::Gateway& gateway,
                                 const std::string& model_id) {
  std::vector<CaseVerdict> out;
  auto sorted = cases;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& c : sorted) {
    const auto evidence = case_evidence(c.id, report, trace);
    const auto answer = judge_case(c.text, evidence, gateway, model_id);
    out.push_back({c.id, to_outcome(answer), evidence, Provenance::llm_judgment, std::nullopt});
  }
  return out;
}

std::string build_failure_mode_prompt(const CaseVerdict& verdict, std::string_view case_text,
                                      std::string_view trace_excerpt) {
  return prompts::fill_template(
      kFailureModePrompt,
      {{"{case}", std::string(case_text)},
       {"{result}", std::string(to_string(verdict.result))},
       {"{evidence}", verdict.evidence.empty() ? "(none)" : verdict.evidence},
       {"{trace}", trim_view(trace_excerpt).empty() ? "(none)" : std::string(trace_excerpt)}});
}

FailureMode classify_failure_mode(const CaseVerdict& verdict, std::string_view case_text,
                                  std::string_view trace_excerpt, llmgateway::Gateway& gateway,
                                  const std::string& model_id) {
  if (verdict.result == Outcome::Pass) {
    throw Error(Errc::precondition, fmt::format("case {}: Pass verdicts are not classified", verdict.case_id));
  }
  const auto request =
      llmgateway::make_request(model_id, "", build_failure_mode_prompt(verdict, case_text, trace_excerpt));
  return parse_failure_mode(gateway.complete(request).text).value_or(FailureMode::none);
}

std::string_view to_string(JudgePath path) { return path == JudgePath::agent ? "agent" : "rejudge"; }

std::optional<JudgePath> parse_judge_path(std::string_view text) {
  if (text == "agent") return JudgePath::agent;
  if (text == "rejudge") return JudgePath::rejudge;
  return std::nullopt;
}

ordered_json verdict_file_to_json(const VerdictFile& file) {
  ordered_json doc;
  doc["schema_version"] = 1;
  doc["task_id"] = file.task_id;
  doc["judge_path"] = std::string(to_string(file.path));
  doc["verdicts"] = ordered_json::array();
  for (const auto& v : file.verdicts) {
    doc["verdicts"].push_back({{"case_id", v.case_id},
                               {"result", std::string(to_string(v.result))},
                               {"evidence", v.evidence},
                               {"provenance", std::string(to_string(v.provenance))},
                               {"failure_mode", v.failure_mode ? ordered_json(std::string(to_string(*v.failure_mode)))
                                                               : ordered_json()}});
  }
  doc["warnings"] = file.warnings;
  return doc;
}

VerdictFile verdict_file_from_json(const json& doc) {
  require_schema_version(doc, "verdict file");
  VerdictFile file;
  try {
    file.task_id = doc.at("task_id").get<std::string>();
    const auto path = parse_judge_path(doc.value("judge_path", std::string("agent")));
    if (!path) throw Error(Errc::schema_violation, "verdict file: unknown judge_path");
    file.path = *path;
    for (const auto& v : doc.at("verdicts")) {
      CaseVerdict cv;
      cv.case_id = v.at("case_id").get<int>();
      const auto token = v.at("result").get<std::string>();
      const auto result = parse_outcome(token);
      if (!result) throw Error(Errc::unknown_token, "verdict file: unknown result token '" + token + "'");
      cv.result = *result;
      cv.evidence = v.value("evidence", std::string{});
      const auto prov = parse_provenance(v.value("provenance", std::string("agent_report")));
      if (!prov) throw Error(Errc::schema_violation, "verdict file: unknown provenance");
      cv.provenance = *prov;
      if (v.contains("failure_mode") && !v["failure_mode"].is_null()) {
        const auto mode = parse_failure_mode(v["failure_mode"].get<std::string>());
        if (!mode) throw Error(Errc::schema_violation, "verdict file: unknown failure_mode");
        cv.failure_mode = *mode;
      }
      file.verdicts.push_back(std::move(cv));
    }
    file.warnings = doc.value("warnings", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(Errc::schema_violation, std::string("verdict file: ") + e.what());
  }
  return file;
}

void save_verdicts(const VerdictFile& file, const std::filesystem::path& path) {
  write_json_file(path, verdict_file_to_json(file));
}

VerdictFile load_verdicts(const std::filesystem::path& path) { return verdict_file_from_json(read_json_file(path)); }

}  // namespace appjudge::judge
