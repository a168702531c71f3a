#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/executor.hpp"
#include "appjudge/llmgateway.hpp"
#include "appjudge/outcome.hpp"
#include "appjudge/testgen.hpp"

namespace appjudge::judge {

struct ReportEntry {
  Outcome result = Outcome::Uncertain;
  std::string evidence;
  bool operator==(const ReportEntry&) const = default;
};

/// Case id -> reported result.
using ReportMap = std::map<int, ReportEntry>;

/// Reads `{"0": {"result": "Pass", "evidence": "..."}, ...}`. Code fences and
/// a wrapping `( ... )` are removed first. Throws UnparseableError, or
/// Error{unknown_token} naming a result that is not Pass/Fail/Uncertain.
ReportMap parse_final_report(std::string_view text);

/// Inverse of parse_final_report: ids in numeric order, 4-space indent.
std::string render_final_report(const ReportMap& report);

/// Parses every Tell payload and overlays them in order, so later reports
/// override earlier ones. Payloads that cannot be read are skipped with a
/// warning.
ReportMap merge_reports(std::span<const std::string> payloads, std::vector<std::string>& warnings);

enum class Provenance { agent_report, llm_judgment, fill_missing };

std::string_view to_string(Provenance p);
std::optional<Provenance> parse_provenance(std::string_view text);

enum class FailureMode {
  missing_information,
  model_hallucination,
  low_quality_test_case,
  advanced_reasoning_needed,
  real_time_feedback_needed,
  standard_understanding_mismatch,
  none,
};

std::string_view to_string(FailureMode mode);
std::optional<FailureMode> parse_failure_mode(std::string_view text);

struct CaseVerdict {
  int case_id = 0;
  Outcome result = Outcome::Uncertain;
  std::string evidence;
  Provenance provenance = Provenance::fill_missing;
  std::optional<FailureMode> failure_mode;
  bool operator==(const CaseVerdict&) const = default;
};

/// One verdict per case, ordered by id. Missing ids become Uncertain with
/// provenance fill_missing; ids not in `cases` are dropped with a warning.
std::vector<CaseVerdict> normalize_verdicts(const ReportMap& report, const std::vector<testgen::TestCase>& cases,
                                            std::vector<std::string>& warnings);

enum class JudgeAnswer { Yes, No, Uncertain };

std::string_view to_string(JudgeAnswer answer);
Outcome to_outcome(JudgeAnswer answer);

/// Maps a reply token to an answer after trimming, lowercasing and stripping
/// punctuation.
std::optional<JudgeAnswer> parse_judge_answer(std::string_view reply);

std::string build_judgement_prompt(std::string_view case_text, std::string_view model_result_text);

/// One judgement call; a non-conforming reply gets one corrective re-ask and
/// then falls back to Uncertain. Both texts must be non-empty.
JudgeAnswer judge_case(std::string_view case_text, std::string_view model_result_text,
                       llmgateway::Gateway& gateway, const std::string& model_id);

/// What the judge sees for one case: the agent's reported entry (if any) and
/// the steps recorded while that case was active.
std::string case_evidence(int case_id, const ReportMap& report, const executor::Trace& trace);

/// Re-judges every case from the trace; provenance llm_judgment.
std::vector<CaseVerdict> rejudge(const std::vector<testgen::TestCase>& cases, const ReportMap& report,
                                 const executor::Trace& trace, llmgateway::Gateway& gateway,
                                 const std::string& model_id);

std::string build_failure_mode_prompt(const CaseVerdict& verdict, std::string_view case_text,
                                      std::string_view trace_excerpt);

/// Single classification call into the failure taxonomy. Throws
/// Error{precondition} for Pass verdicts; unreadable replies map to `none`.
FailureMode classify_failure_mode(const CaseVerdict& verdict, std::string_view case_text,
                                  std::string_view trace_excerpt, llmgateway::Gateway& gateway,
                                  const std::string& model_id);

enum class JudgePath { agent, rejudge };

std::string_view to_string(JudgePath path);
std::optional<JudgePath> parse_judge_path(std::string_view text);

struct VerdictFile {
  std::string task_id;
  JudgePath path = JudgePath::agent;
  std::vector<CaseVerdict> verdicts;
  std::vector<std::string> warnings;
  bool operator==(const VerdictFile&) const = default;
};

nlohmann::ordered_json verdict_file_to_json(const VerdictFile& file);
VerdictFile verdict_file_from_json(const nlohmann::json& doc);
void save_verdicts(const VerdictFile& file, const std::filesystem::path& path);
VerdictFile load_verdicts(const std::filesystem::path& path);

}  // namespace appjudge::judge
