#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/envdriver.hpp"
#include "appjudge/llmgateway.hpp"
#include "appjudge/taskmodel.hpp"
#include "appjudge/testgen.hpp"

namespace appjudge::executor {

struct Step {
  int index = 0;
  std::string thought;
  envdriver::ActionCommand action;
  envdriver::ActionOutcome outcome;
  std::optional<int> active_case;
  std::optional<std::string> note;  // e.g. a policy parse failure

  bool operator==(const Step&) const = default;
};

enum class EndMarker { stopped, budget_exhausted, driver_failure, policy_failure };

std::string_view to_string(EndMarker marker);
std::optional<EndMarker> parse_end_marker(std::string_view text);

struct Trace {
  std::string task_id;
  envdriver::Observation initial_observation;
  std::vector<Step> steps;
  std::vector<std::string> tell_payloads;
  llmgateway::UsageSummary usage;
  double wall_time_s = 0.0;
  EndMarker end = EndMarker::stopped;
  std::string end_detail;

  /// Driver or policy failure, or a budget that ran out before any Tell.
  bool incomplete() const;

  bool operator==(const Trace&) const = default;
};

/// Ends with Stop or a non-stop marker; Tell payloads mirror the Tell steps;
/// indices dense from 0.
std::vector<std::string> validate_trace(const Trace& trace);

struct ExecutionBudget {
  int max_steps_total = 200;
  int min_steps_guidance = 5;  // prompt guidance only
  double per_step_timeout_s = 300.0;
};

std::vector<std::string> validate_budget(const ExecutionBudget& budget);

struct PolicyContext {
  const taskmodel::TaskSpec& task;
  const std::vector<testgen::TestCase>& cases;
  const ExecutionBudget& budget;
};

struct Decision {
  std::string thought;
  envdriver::ActionCommand action;
  std::optional<int> active_case;
  std::optional<std::string> note;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual Decision next_action(const std::vector<Step>& history, const envdriver::Observation& observation,
                               const PolicyContext& context) = 0;
  /// Model usage accrued by this policy so far.
  virtual llmgateway::UsageSummary usage() const { return {}; }
};

/// An action pulled out of free-form model text.
struct ParsedReply {
  std::string thought;
  envdriver::ActionCommand action;
  std::optional<int> active_case;
};

/// Accepts `Name: argument` and `Name (argument)` on the last action line;
/// a Tell payload (and a Run script given on following lines) may span
/// several lines. An optional `Case: N` line names the active test case.
/// Returns nullopt when no valid action is found.
std::optional<ParsedReply> parse_action_reply(std::string_view text);

/// Model-driven policy: the execution prompt with the task list as system
/// message, full thought/action history and only the latest observation.
class LlmPolicy : public Policy {
 public:
  LlmPolicy(llmgateway::Gateway& gateway, std::string model_id);
  Decision next_action(const std::vector<Step>& history, const envdriver::Observation& observation,
                       const PolicyContext& context) override;
  llmgateway::UsageSummary usage() const override;

 private:
  llmgateway::Gateway& gateway_;
  std::string model_id_;
};

std::string build_system_prompt(const PolicyContext& context);
llmgateway::ChatMessage build_turn_message(const std::vector<Step>& history,
                                           const envdriver::Observation& observation,
                                           const PolicyContext& context);

/// Fixed sequence of decisions; Stop once exhausted.
class ScriptedPolicy : public Policy {
 public:
  explicit ScriptedPolicy(std::vector<Decision> decisions);
  Decision next_action(const std::vector<Step>& history, const envdriver::Observation& observation,
                       const PolicyContext& context) override;

  /// {"schema_version":1, "steps":[{"thought":s, "action":"Run: ...", "case":n}]}
  static ScriptedPolicy from_json(const nlohmann::json& doc);
  static ScriptedPolicy load(const std::filesystem::path& path);

 private:
  std::vector<Decision> decisions_;
  std::size_t next_ = 0;
};

/// One check per test case: relaunch, run `script`, then report Pass when
/// `expect` occurs in the accessibility tree.
struct Probe {
  int case_id = 0;
  std::string script;
  std::string expect;
};

/// Deterministic tester used for offline runs: Open, Run and a per-case Tell
/// for each probe, then the final result map and Stop.
class ProbePolicy : public Policy {
 public:
  ProbePolicy(std::string app_name, std::vector<Probe> probes);
  Decision next_action(const std::vector<Step>& history, const envdriver::Observation& observation,
                       const PolicyContext& context) override;

  /// {"schema_version":1, "app_name":s, "probes":[{"case_id", "script", "expect"}]}
  static ProbePolicy from_json(const nlohmann::json& doc);

 private:
  std::string app_name_;
  std::vector<Probe> probes_;
  std::size_t probe_ = 0;
  int phase_ = 0;
  nlohmann::ordered_json results_ = nlohmann::ordered_json::object();
};

/// observe -> next_action -> apply until Stop or the step budget runs out.
/// Driver and policy errors end the trace with a marker instead of throwing.
Trace run_evaluation(const taskmodel::TaskSpec& task, const std::vector<testgen::TestCase>& cases,
                     envdriver::DriverSession& session, Policy& policy, const ExecutionBudget& budget);

/// Tell payloads in emission order.
std::vector<std::string> collect_reports(const Trace& trace);

/// Initial observation followed by each step's observation_after.
std::vector<envdriver::Observation> observation_sequence(const Trace& trace);

/// Re-applies the trace's actions to a fresh session and returns the
/// observation sequence it produces.
std::vector<envdriver::Observation> replay_trace(const Trace& trace, envdriver::DriverSession& session);

/// Line-delimited: one step record per line, then a footer record.
std::string trace_to_jsonl(const Trace& trace);
Trace trace_from_jsonl(std::string_view text);
void save_trace(const Trace& trace, const std::filesystem::path& path);
Trace load_trace(const std::filesystem::path& path);

}  // namespace appjudge::executor
