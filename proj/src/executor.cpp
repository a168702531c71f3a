#include "appjudge/executor.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <sstream>

#include <fmt/format.h>

#include "appjudge/error.hpp"
#include "appjudge/json_io.hpp"
#include "appjudge/prompts.hpp"

namespace appjudge::executor {

using envdriver::ActionCommand;
using envdriver::Observation;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string_view trim_view(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

// Drops list bullets, quote markers and emphasis around a line.
std::string_view strip_markup(std::string_view s) {
  s = trim_view(s);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::string_view lead : {"- ", "* ", "> ", "**", "`"}) {
      if (s.substr(0, lead.size()) == lead) {
        s.remove_prefix(lead.size());
        s = trim_view(s);
        changed = true;
      }
    }
  }
  while (!s.empty() && (s.back() == '`' || s.back() == '*')) s.remove_suffix(1);
  return trim_view(s);
}

struct ActionLine {
  std::string name;
  std::string rest;
};

std::optional<ActionLine> match_action_line(std::string_view raw) {
  auto line = strip_markup(raw);
  if (starts_with_ci(line, "action:")) line = strip_markup(line.substr(7));
  for (std::string_view keyword : {"Open", "Run", "Tell", "Stop"}) {
    if (!starts_with_ci(line, keyword)) continue;
    auto rest = line.substr(keyword.size());
    if (!rest.empty() && std::isalnum(static_cast<unsigned char>(rest.front()))) continue;
    while (!rest.empty() && (rest.front() == '*' || rest.front() == '`')) rest.remove_prefix(1);
    rest = trim_view(rest);
    if (keyword == "Stop") {
      if (rest.empty() || rest == "." || rest == "()" || rest == ":") return ActionLine{"Stop", ""};
      continue;
    }
    if (!rest.empty() && rest.front() == ':') return ActionLine{std::string(keyword), std::string(trim_view(rest.substr(1)))};
    if (!rest.empty() && rest.front() == '(') return ActionLine{std::string(keyword), std::string(rest)};
    if (rest.empty()) return ActionLine{std::string(keyword), ""};
  }
  return std::nullopt;
}

std::optional<int> match_case_line(std::string_view raw) {
  auto line = strip_markup(raw);
  if (starts_with_ci(line, "active case")) line.remove_prefix(7);
  if (!starts_with_ci(line, "case")) return std::nullopt;
  line.remove_prefix(4);
  while (!line.empty() && (line.front() == ':' || line.front() == '#' || line.front() == ' ')) line.remove_prefix(1);
  if (line.empty() || !std::isdigit(static_cast<unsigned char>(line.front()))) return std::nullopt;
  int value = 0;
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) value = value * 10 + (line[i++] - '0');
  if (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])) && line[i] != '.') return std::nullopt;
  return value;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

std::string describe_outcome(const envdriver::ActionOutcome& outcome) {
  return (outcome.ok ? "ok" : "failed") + (outcome.detail.empty() ? "" : ": " + outcome.detail);
}

const char* kActionSpace = R"(Action Space:
- Open: <app name>  launch or relaunch the application ("app" is the application under test)
- Run: <script>  semicolon-separated statements: click(selector); type(selector, "text"); press(key); scroll(up|down|top|bottom); navigate(page)
- Tell: <report>  report test results
- Stop  end the test session

Reply with your reasoning first. You may add a line `Case: <number>` naming the test case you are working on. End your reply with exactly one action in the form `ActionName: argument`; a Tell report may continue over several lines.)";

}  // namespace

std::string_view to_string(EndMarker marker) {
  switch (marker) {
    case EndMarker::stopped: return "stopped";
    case EndMarker::budget_exhausted: return "budget_exhausted";
    case EndMarker::driver_failure: return "driver_failure";
    case EndMarker::policy_failure: return "policy_failure";
  }
  return "stopped";
}

std::optional<EndMarker> parse_end_marker(std::string_view text) {
  for (auto m : {EndMarker::stopped, EndMarker::budget_exhausted, EndMarker::driver_failure,
                 EndMarker::policy_failure}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

bool Trace::incomplete() const {
  if (end == EndMarker::driver_failure || end == EndMarker::policy_failure) return true;
  return end == EndMarker::budget_exhausted && tell_payloads.empty();
}

std::vector<std::string> validate_trace(const Trace& trace) {
  std::vector<std::string> out;
  std::vector<std::string> tells;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& step = trace.steps[i];
    if (step.index != static_cast<int>(i)) {
      out.push_back(fmt::format("steps[{}].index: expected {}, found {}", i, i, step.index));
    }
    if (const auto* tell = std::get_if<envdriver::TellAction>(&step.action)) tells.push_back(tell->payload);
    if (std::holds_alternative<envdriver::StopAction>(step.action) && i + 1 != trace.steps.size()) {
      out.push_back(fmt::format("steps[{}]: Stop before the end of the trace", i));
    }
  }
  if (tells != trace.tell_payloads) out.emplace_back("tell_payloads: differ from the Tell steps");
  const bool ends_with_stop =
      !trace.steps.empty() && std::holds_alternative<envdriver::StopAction>(trace.steps.back().action);
  if (trace.end == EndMarker::stopped && !ends_with_stop) out.emplace_back("end: stopped but no final Stop step");
  if (trace.end != EndMarker::stopped && ends_with_stop) {
    out.push_back(fmt::format("end: {} but the trace ends with Stop", to_string(trace.end)));
  }
  return out;
}

std::vector<std::string> validate_budget(const ExecutionBudget& budget) {
  std::vector<std::string> out;
  if (budget.max_steps_total < 1) out.emplace_back("max_steps_total: must be >= 1");
  if (budget.min_steps_guidance < 0) out.emplace_back("min_steps_guidance: must be >= 0");
  if (budget.per_step_timeout_s <= 0) out.emplace_back("per_step_timeout_s: must be positive");
  return out;
}

std::optional<ParsedReply> parse_action_reply(std::string_view text) {
  const auto lines = split_lines(text);
  std::optional<std::size_t> chosen;
  std::optional<ActionLine> action;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (auto m = match_action_line(lines[i])) {
      chosen = i;
      action = std::move(m);
    }
  }
  if (!action) return std::nullopt;

  std::string argument = action->rest;
  if (action->name == "Tell" || (action->name == "Run" && argument.empty())) {
    for (std::size_t i = *chosen + 1; i < lines.size(); ++i) {
      if (!argument.empty()) argument += '\n';
      argument += lines[i];
    }
  }
  auto arg = std::string(trim_view(argument));
  if (arg.size() >= 2 && arg.front() == '(' && arg.back() == ')') arg = std::string(trim_view(std::string_view(arg).substr(1, arg.size() - 2)));
  if (arg.find("```") != std::string::npos) arg = std::string(trim_view(llmgateway::strip_code_fences(arg)));
  if (action->name == "Run") {
    // single-line scripts sometimes arrive wrapped in backticks
    while (!arg.empty() && arg.front() == '`') arg.erase(0, 1);
    while (!arg.empty() && arg.back() == '`') arg.pop_back();
  }

  auto command = envdriver::make_action(action->name, arg);
  if (!command || !envdriver::validate_action(*command).empty()) return std::nullopt;

  ParsedReply reply{{}, *command, std::nullopt};
  std::string thought;
  for (std::size_t i = 0; i < *chosen; ++i) {
    if (auto c = match_case_line(lines[i])) {
      reply.active_case = c;
      continue;
    }
    thought += lines[i];
    thought += '\n';
  }
  reply.thought = std::string(trim_view(thought));
  return reply;
}

// ---------------------------------------------------------------------------
// LLM policy

std::string build_system_prompt(const PolicyContext& context) {
  std::string prompt = std::string(prompts::kTestExecution) + "\n\n" + std::string(prompts::kTestExecutionReport) +
                       "\n\n" + kActionSpace + "\n\nTask List:\n";
  for (const auto& c : context.cases) prompt += fmt::format("{}. {}\n", c.id, c.text);
  return prompt;
}

llmgateway::ChatMessage build_turn_message(const std::vector<Step>& history, const Observation& observation,
                                           const PolicyContext& context) {
  llmgateway::ChatMessage message;
  message.role = llmgateway::Role::user;
  std::string text = fmt::format("Step budget: {} of {} steps used. Take at least {} steps before Stop.\n\n",
                                 history.size(), context.budget.max_steps_total, context.budget.min_steps_guidance);
  if (history.empty()) {
    text += "History: none yet.\n";
  } else {
    text += "History:\n";
    for (const auto& step : history) {
      text += fmt::format("Step {}:", step.index);
      if (step.active_case) text += fmt::format(" (case {})", *step.active_case);
      text += "\n";
      if (!step.thought.empty()) text += "Thought: " + step.thought + "\n";
      text += "Action: " + envdriver::format_action(step.action) + "\n";
      text += "Result: " + describe_outcome(step.outcome) + "\n";
    }
  }
  text += fmt::format("\nCurrent observation:\nLocation: {}\nScroll position: {:.2f}\nAccessibility tree:\n{}\n",
                      observation.location, observation.scroll_position, observation.a11y_tree);
  if (observation.screenshot_media_type == "text/plain") {
    text += "Screen:\n" + observation.screenshot + "\n";
  } else if (!observation.screenshot.empty()) {
    message.images.push_back({observation.screenshot_media_type, observation.screenshot, observation.screenshot_base64});
  }
  message.text = std::move(text);
  return message;
}

LlmPolicy::LlmPolicy(llmgateway::Gateway& gateway, std::string model_id)
    : gateway_(gateway), model_id_(std::move(model_id)) {}

Decision LlmPolicy::next_action(const std::vector<Step>& history, const Observation& observation,
                                const PolicyContext& context) {
  llmgateway::ChatRequest request;
  request.model_id = model_id_;
  request.messages.push_back({llmgateway::Role::system, build_system_prompt(context), {}});
  request.messages.push_back(build_turn_message(history, observation, context));

  auto reply = gateway_.complete(request);
  if (auto parsed = parse_action_reply(reply.text)) {
    return {parsed->thought, parsed->action, parsed->active_case, std::nullopt};
  }
  request.messages.push_back({llmgateway::Role::assistant, reply.text, {}});
  request.messages.push_back(
      {llmgateway::Role::user,
       "Your reply did not end with a valid action. Reply again and end with exactly one action line: "
       "`Open: <app name>`, `Run: <script>`, `Tell: <report>` or `Stop`.",
       {}});
  reply = gateway_.complete(request);
  if (auto parsed = parse_action_reply(reply.text)) {
    return {parsed->thought, parsed->action, parsed->active_case, std::nullopt};
  }
  return {std::string(trim_view(reply.text)), envdriver::StopAction{}, std::nullopt,
          "parse failure: no valid action in the model reply after one corrective re-ask"};
}

llmgateway::UsageSummary LlmPolicy::usage() const { return gateway_.usage(); }

// ---------------------------------------------------------------------------
// Scripted and probe policies

ScriptedPolicy::ScriptedPolicy(std::vector<Decision> decisions) : decisions_(std::move(decisions)) {}

Decision ScriptedPolicy::next_action(const std::vector<Step>&, const Observation&, const PolicyContext&) {
  if (next_ >= decisions_.size()) return {"script exhausted", envdriver::StopAction{}, std::nullopt, std::nullopt};
  return decisions_[next_++];
}

ScriptedPolicy ScriptedPolicy::from_json(const json& doc) {
  require_schema_version(doc, "policy script");
  std::vector<Decision> decisions;
  try {
    for (const auto& s : doc.at("steps")) {
      const auto text = s.at("action").get<std::string>();
      auto parsed = parse_action_reply(text);
      if (!parsed) throw Error(Errc::schema_violation, "policy script: unreadable action '" + text + "'");
      Decision d{s.value("thought", std::string{}), parsed->action, parsed->active_case, std::nullopt};
      if (s.contains("case")) d.active_case = s.at("case").get<int>();
      decisions.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::schema_violation, std::string("policy script: ") + e.what());
  }
  return ScriptedPolicy(std::move(decisions));
}

ScriptedPolicy ScriptedPolicy::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

ProbePolicy::ProbePolicy(std::string app_name, std::vector<Probe> probes)
    : app_name_(std::move(app_name)), probes_(std::move(probes)) {}

Decision ProbePolicy::next_action(const std::vector<Step>& history, const Observation& observation,
                                  const PolicyContext&) {
  if (probe_ >= probes_.size()) {
    if (phase_ == 0) {
      phase_ = 1;
      return {"All test cases checked; reporting the complete results.", envdriver::TellAction{results_.dump(4)},
              std::nullopt, std::nullopt};
    }
    return {"Testing finished.", envdriver::StopAction{}, std::nullopt, std::nullopt};
  }
  const auto& probe = probes_[probe_];
  switch (phase_) {
    case 0:
      phase_ = 1;
      return {fmt::format("Relaunch the application before test case {}.", probe.case_id),
              envdriver::OpenAction{app_name_}, probe.case_id, std::nullopt};
    case 1:
      phase_ = 2;
      return {fmt::format("Exercise test case {}.", probe.case_id), envdriver::RunAction{probe.script},
              probe.case_id, std::nullopt};
    default: {
      const bool ran = !history.empty() && history.back().outcome.ok;
      const bool seen = ran && observation.a11y_tree.find(probe.expect) != std::string::npos;
      std::string evidence;
      if (!ran) {
        evidence = "The interaction failed: " + (history.empty() ? std::string("no step") : history.back().outcome.detail);
      } else if (seen) {
        evidence = fmt::format("After running `{}` the page shows `{}`.", probe.script, probe.expect);
      } else {
        evidence = fmt::format("After running `{}` the expected `{}` did not appear on {}.", probe.script,
                               probe.expect, observation.location);
      }
      ordered_json entry{{"result", seen ? "Pass" : "Fail"}, {"evidence", evidence}};
      results_[std::to_string(probe.case_id)] = entry;
      ordered_json single{{std::to_string(probe.case_id), entry}};
      phase_ = 0;
      ++probe_;
      return {fmt::format("Report test case {}.", probe.case_id), envdriver::TellAction{single.dump()},
              probe.case_id, std::nullopt};
    }
  }
}

ProbePolicy ProbePolicy::from_json(const json& doc) {
  require_schema_version(doc, "probe set");
  std::vector<Probe> probes;
  try {
    for (const auto& p : doc.at("probes")) {
      probes.push_back({p.at("case_id").get<int>(), p.at("script").get<std::string>(),
                        p.at("expect").get<std::string>()});
    }
    return ProbePolicy(doc.value("app_name", std::string("app")), std::move(probes));
  } catch (const json::exception& e) {
    throw Error(Errc::schema_violation, std::string("probe set: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Loop

Trace run_evaluation(const taskmodel::TaskSpec& task, const std::vector<testgen::TestCase>& cases,
                     envdriver::DriverSession& session, Policy& policy, const ExecutionBudget& budget) {
  if (auto problems = validate_budget(budget); !problems.empty()) {
    throw Error(Errc::precondition, "execution budget: " + problems.front());
  }
  if (cases.empty()) throw Error(Errc::precondition, "run_evaluation: no test cases");
  if (!session.is_open()) throw Error(Errc::session_closed, "run_evaluation: session is not open");

  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  const PolicyContext context{task, cases, budget};

  Trace trace;
  trace.task_id = task.id;
  trace.end = EndMarker::budget_exhausted;
  const auto finish = [&] {
    trace.usage = policy.usage();
    trace.wall_time_s = std::chrono::duration<double>(clock::now() - started).count();
    return trace;
  };

  Observation observation;
  try {
    observation = session.observe();
  } catch (const std::exception& e) {
    trace.end = EndMarker::driver_failure;
    trace.end_detail = std::string("initial observation failed: ") + e.what();
    return finish();
  }
  trace.initial_observation = observation;

  for (int i = 0; i < budget.max_steps_total; ++i) {
    const auto step_started = clock::now();
    Decision decision;
    try {
      decision = policy.next_action(trace.steps, observation, context);
    } catch (const std::exception& e) {
      trace.end = EndMarker::policy_failure;
      trace.end_detail = fmt::format("step {}: policy failed: {}", i, e.what());
      return finish();
    }
    const double decide_s = std::chrono::duration<double>(clock::now() - step_started).count();

    envdriver::ActionOutcome outcome;
    try {
      outcome = session.apply(decision.action);
    } catch (const std::exception& e) {
      trace.end = EndMarker::driver_failure;
      trace.end_detail = fmt::format("step {}: driver failed: {}", i, e.what());
      return finish();
    }

    trace.steps.push_back({i, decision.thought, decision.action, outcome, decision.active_case, decision.note});
    if (const auto* tell = std::get_if<envdriver::TellAction>(&decision.action)) {
      trace.tell_payloads.push_back(tell->payload);
    }
    observation = outcome.observation_after;

    if (std::holds_alternative<envdriver::StopAction>(decision.action)) {
      trace.end = EndMarker::stopped;
      if (decision.note) trace.end_detail = *decision.note;
      return finish();
    }
    const double step_s = std::chrono::duration<double>(clock::now() - step_started).count();
    if (step_s > budget.per_step_timeout_s) {
      const bool policy_slow = decide_s > budget.per_step_timeout_s;
      trace.end = policy_slow ? EndMarker::policy_failure : EndMarker::driver_failure;
      trace.end_detail = fmt::format("step {} took {:.1f}s, over the {:.1f}s per-step timeout", i, step_s,
                                     budget.per_step_timeout_s);
      return finish();
    }
  }
  trace.end_detail = fmt::format("step budget of {} exhausted", budget.max_steps_total);
  return finish();
}

std::vector<std::string> collect_reports(const Trace& trace) { return trace.tell_payloads; }

std::vector<Observation> observation_sequence(const Trace& trace) {
  std::vector<Observation> out{trace.initial_observation};
  for (const auto& step : trace.steps) out.push_back(step.outcome.observation_after);
  return out;
}

std::vector<Observation> replay_trace(const Trace& trace, envdriver::DriverSession& session) {
  std::vector<Observation> out{session.observe()};
  for (const auto& step : trace.steps) out.push_back(session.apply(step.action).observation_after);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

std::string trace_to_jsonl(const Trace& trace) {
  std::string out;
  for (const auto& step : trace.steps) {
    ordered_json line{{"type", "step"},
                      {"index", step.index},
                      {"thought", step.thought},
                      {"action", envdriver::action_to_json(step.action)},
                      {"active_case", step.active_case ? ordered_json(*step.active_case) : ordered_json()}};
    if (step.note) line["note"] = *step.note;
    line["outcome"] = {{"ok", step.outcome.ok},
                       {"detail", step.outcome.detail},
                       {"observation", envdriver::observation_to_json(step.outcome.observation_after)}};
    out += line.dump() + "\n";
  }
  ordered_json footer{{"type", "footer"},
                      {"schema_version", 1},
                      {"task_id", trace.task_id},
                      {"end", std::string(to_string(trace.end))},
                      {"end_detail", trace.end_detail},
                      {"incomplete", trace.incomplete()},
                      {"step_count", trace.steps.size()},
                      {"tell_count", trace.tell_payloads.size()},
                      {"usage", llmgateway::usage_to_json(trace.usage)},
                      {"wall_time_s", trace.wall_time_s},
                      {"initial_observation", envdriver::observation_to_json(trace.initial_observation)}};
  out += footer.dump() + "\n";
  return out;
}

Trace trace_from_jsonl(std::string_view text) {
  Trace trace;
  bool footer_seen = false;
  std::size_t line_no = 0;
  for (auto line : split_lines(text)) {
    ++line_no;
    if (trim_view(line).empty()) continue;
    if (footer_seen) throw Error(Errc::schema_violation, fmt::format("trace line {}: record after footer", line_no));
    const json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      throw Error(Errc::schema_violation, fmt::format("trace line {}: not a JSON object", line_no));
    }
    try {
      const auto type = doc.at("type").get<std::string>();
      if (type == "step") {
        Step step;
        step.index = doc.at("index").get<int>();
        step.thought = doc.value("thought", std::string{});
        step.action = envdriver::action_from_json(doc.at("action"));
        if (doc.contains("active_case") && !doc["active_case"].is_null()) step.active_case = doc["active_case"].get<int>();
        if (doc.contains("note")) step.note = doc["note"].get<std::string>();
        const auto& outcome = doc.at("outcome");
        step.outcome.ok = outcome.at("ok").get<bool>();
        step.outcome.detail = outcome.value("detail", std::string{});
        step.outcome.observation_after = envdriver::observation_from_json(outcome.at("observation"));
        if (const auto* tell = std::get_if<envdriver::TellAction>(&step.action)) {
          trace.tell_payloads.push_back(tell->payload);
        }
        trace.steps.push_back(std::move(step));
      } else if (type == "footer") {
        require_schema_version(doc, "trace footer");
        trace.task_id = doc.at("task_id").get<std::string>();
        const auto end = parse_end_marker(doc.at("end").get<std::string>());
        if (!end) throw Error(Errc::schema_violation, "trace footer: unknown end marker " + doc["end"].dump());
        trace.end = *end;
        trace.end_detail = doc.value("end_detail", std::string{});
        trace.usage = llmgateway::usage_from_json(doc.at("usage"));
        trace.wall_time_s = doc.value("wall_time_s", 0.0);
        trace.initial_observation = envdriver::observation_from_json(doc.at("initial_observation"));
        footer_seen = true;
      } else {
        throw Error(Errc::schema_violation, fmt::format("trace line {}: unknown record type '{}'", line_no, type));
      }
    } catch (const json::exception& e) {
      throw Error(Errc::schema_violation, fmt::format("trace line {}: {}", line_no, e.what()));
    }
  }
  if (!footer_seen) throw Error(Errc::schema_violation, "trace: missing footer record");
  return trace;
}

void save_trace(const Trace& trace, const std::filesystem::path& path) { write_text_file(path, trace_to_jsonl(trace)); }

Trace load_trace(const std::filesystem::path& path) { return trace_from_jsonl(read_text_file(path)); }

}  // namespace appjudge::executor
