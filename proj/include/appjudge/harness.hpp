#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/envdriver.hpp"
#include "appjudge/executor.hpp"
#include "appjudge/judge.hpp"
#include "appjudge/llmgateway.hpp"
#include "appjudge/scoring.hpp"
#include "appjudge/staticeval.hpp"
#include "appjudge/taskmodel.hpp"
#include "appjudge/testgen.hpp"

namespace appjudge::harness {

enum class DriverMode { real, simulated };
enum class PolicyKind { llm, scripted, probe };

std::string_view to_string(DriverMode mode);
std::string_view to_string(PolicyKind kind);

/// Model ids per role; empty entries fall back to `default_model`.
struct ModelRoles {
  std::string default_model = "gpt-4o";
  std::string generation;
  std::string linking;
  std::string execution;
  std::string judgment;
  std::string static_code;
  std::string visual;

  const std::string& pick(const std::string& role_model) const {
    return role_model.empty() ? default_model : role_model;
  }
};

struct HarnessConfig {
  llmgateway::ProviderConfig provider;
  /// Scripted replies file; when set, no remote provider is contacted.
  std::filesystem::path scripted_replies;
  ModelRoles models;
  testgen::GenerationConfig generation;
  executor::ExecutionBudget budget;
  DriverMode driver_mode = DriverMode::real;
  envdriver::RealDriverSettings real_driver;
  PolicyKind policy = PolicyKind::llm;
  /// Scripted or probe policy file, or a directory of `<task_id>.json`.
  std::filesystem::path policy_file;
  judge::JudgePath judge_path = judge::JudgePath::agent;
  scoring::FeatureStrategy feature_strategy = scoring::FeatureStrategy::all_pass;
  bool classify_failures = false;
  bool static_code = false;
  bool static_visual = false;
  std::string visual_rubric;  // empty: built-in default rubric
  std::filesystem::path out_dir = "out";
  int workers = 1;
};

std::vector<std::string> validate_config(const HarnessConfig& config);

/// Applies the keys present in `doc` on top of `base`. Credentials are
/// rejected: keys are only ever read from the environment.
HarnessConfig apply_config_json(HarnessConfig base, const nlohmann::json& doc);

/// APPJUDGE_* variables as a config document (only those that are set).
nlohmann::json config_from_environment(const std::function<const char*(const char*)>& getenv_fn);

/// defaults < config file < environment < CLI overrides.
HarnessConfig resolve_config(const std::optional<std::filesystem::path>& config_file,
                             const std::function<const char*(const char*)>& getenv_fn,
                             const nlohmann::json& cli_overrides);

nlohmann::ordered_json config_to_json(const HarnessConfig& config);

/// FNV-1a over the canonical config document, as 16 hex digits. Output
/// directory and worker count do not contribute.
std::string config_fingerprint(const HarnessConfig& config);

enum class Stage { generate, link, execute, judge, score };

std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view text);

struct StageMarker {
  Stage stage = Stage::generate;
  bool ok = false;
  std::string detail;
  bool operator==(const StageMarker&) const = default;
};

struct StaticScores {
  std::optional<double> code;
  std::optional<double> visual;
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();
};

struct EvaluationRecord {
  std::string task_id;
  int n_features = 0;
  std::vector<StageMarker> stages;  // in execution order
  bool incomplete = false;
  std::optional<Stage> failed_stage;
  std::string failure;  // error text of the failed stage
  std::vector<std::string> warnings;
  std::vector<testgen::TestCase> cases;
  std::string trace_file;
  std::string trace_end;
  int trace_steps = 0;
  std::vector<judge::CaseVerdict> verdicts;
  std::optional<scoring::QualityScore> quality_case;
  std::optional<scoring::QualityScore> quality_feature;
  std::vector<scoring::FeatureResult> feature_results;
  scoring::FeatureStrategy feature_strategy = scoring::FeatureStrategy::all_pass;
  std::optional<StaticScores> static_scores;
  llmgateway::UsageSummary usage;
  std::string config_fingerprint;
  std::string started_at;
  std::string finished_at;
  double wall_time_s = 0.0;
};

nlohmann::ordered_json record_to_json(const EvaluationRecord& record);
EvaluationRecord record_from_json(const nlohmann::json& doc);
void save_record(const EvaluationRecord& record, const std::filesystem::path& path);
EvaluationRecord load_record(const std::filesystem::path& path);

/// Stages in pipeline order with nothing after a failure; stored qualities
/// equal those recomputed from stored verdicts.
std::vector<std::string> audit_record(const EvaluationRecord& record);

/// A simulated application or a real deployment.
using Target = std::variant<envdriver::SimAppSpec, taskmodel::ProjectUnderTest>;

/// Everything a run needs besides the config: the root gateway (forked per
/// stage) and, optionally, pre-built test cases that replace generation.
struct RunContext {
  llmgateway::Gateway* gateway = nullptr;
  std::optional<std::vector<testgen::TestCase>> provided_cases;
};

/// generate -> link -> execute -> judge -> score, persisting
/// cases.json, trace.jsonl, verdicts.json, record.json, report.md and
/// report.json under <out_dir>/<task_id>/. Failures produce a record flagged
/// incomplete at the failing stage; nothing is thrown for stage errors.
EvaluationRecord evaluate_project(const taskmodel::TaskSpec& task, const Target& target,
                                  const HarnessConfig& config, RunContext context);

struct Job {
  taskmodel::TaskSpec task;
  Target target;
  std::optional<std::vector<testgen::TestCase>> provided_cases;
};

/// Worker pool over projects, `config.workers` threads, one forked gateway
/// per job. Records come back in job order.
std::vector<EvaluationRecord> run_suite(const std::vector<Job>& jobs, const HarnessConfig& config,
                                        llmgateway::Gateway& gateway);

/// Scores each record against the labels with the same task id. Throws
/// Error{unmatched_task} for records without labels.
scoring::AlignmentReport align_run(const std::vector<EvaluationRecord>& records,
                                   const std::vector<taskmodel::HumanLabels>& labels);

/// report.json and report.md in `directory`. Throws Error{precondition} for
/// an empty record list and Error{io} when the directory is not writable.
void emit_report(const std::vector<EvaluationRecord>& records, const std::optional<scoring::AlignmentReport>& alignment,
                 const std::filesystem::path& directory);

std::string render_markdown(const std::vector<EvaluationRecord>& records,
                            const std::optional<scoring::AlignmentReport>& alignment);
nlohmann::ordered_json render_json(const std::vector<EvaluationRecord>& records,
                                   const std::optional<scoring::AlignmentReport>& alignment);

/// Builds a provider from the config: scripted replies when configured,
/// otherwise the HTTP provider.
std::shared_ptr<llmgateway::ChatProvider> make_provider(const HarnessConfig& config);

/// Policy for one task according to `config.policy`.
std::unique_ptr<executor::Policy> make_policy(const HarnessConfig& config, const taskmodel::TaskSpec& task,
                                              llmgateway::Gateway& gateway);

/// UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace appjudge::harness
