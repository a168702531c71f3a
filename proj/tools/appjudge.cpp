// appjudge: command-line front end for the evaluation pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "appjudge/envdriver.hpp"
#include "appjudge/error.hpp"
#include "appjudge/executor.hpp"
#include "appjudge/harness.hpp"
#include "appjudge/json_io.hpp"
#include "appjudge/judge.hpp"
#include "appjudge/scoring.hpp"
#include "appjudge/staticeval.hpp"
#include "appjudge/taskmodel.hpp"
#include "appjudge/testgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace appjudge;

namespace {

constexpr int kExitIncomplete = 1;
constexpr int kExitError = 2;

struct Common {
  std::string config;
  std::string out;
  std::string script;
  std::string judge_path;
  std::string feature_strategy;
  int budget_steps = 0;
  int workers = 0;
  std::string policy;
  std::string policy_file;
  std::string model;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Harness config file (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--script", c.script, "Scripted model replies (offline runs)")->check(CLI::ExistingFile);
  cmd->add_option("--model", c.model, "Default model id");
}

void add_run_options(CLI::App* cmd, Common& c) {
  cmd->add_option("--judge-path", c.judge_path, "agent | rejudge")->check(CLI::IsMember({"agent", "rejudge"}));
  cmd->add_option("--feature-strategy", c.feature_strategy, "all | majority")
      ->check(CLI::IsMember({"all", "majority"}));
  cmd->add_option("--budget-steps", c.budget_steps, "Step budget per evaluation")->check(CLI::PositiveNumber);
  cmd->add_option("--workers", c.workers, "Parallel projects")->check(CLI::PositiveNumber);
  cmd->add_option("--policy", c.policy, "llm | scripted | probe")->check(CLI::IsMember({"llm", "scripted", "probe"}));
  cmd->add_option("--policy-file", c.policy_file, "Policy file, or a directory of <task_id>.json");
}

json cli_overrides(const Common& c) {
  json o = json::object();
  if (!c.out.empty()) o["out_dir"] = c.out;
  if (!c.script.empty()) o["scripted_replies"] = c.script;
  if (!c.model.empty()) o["models"]["default"] = c.model;
  if (!c.judge_path.empty()) o["judge_path"] = c.judge_path;
  if (!c.feature_strategy.empty()) o["feature_strategy"] = c.feature_strategy;
  if (c.budget_steps > 0) o["budget"]["max_steps_total"] = c.budget_steps;
  if (c.workers > 0) o["workers"] = c.workers;
  if (!c.policy.empty()) o["policy"]["kind"] = c.policy;
  if (!c.policy_file.empty()) o["policy"]["file"] = c.policy_file;
  return o;
}

harness::HarnessConfig load_config(const Common& c, json extra = json::object()) {
  auto overrides = cli_overrides(c);
  overrides.merge_patch(extra);
  const auto file = c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config);
  return harness::resolve_config(file, [](const char* name) { return std::getenv(name); }, overrides);
}

/// A task file, a task directory holding task.json, or a suite directory.
std::vector<taskmodel::TaskSpec> load_tasks(const fs::path& path) {
  if (fs::is_regular_file(path)) return {taskmodel::load_task(path)};
  if (fs::is_regular_file(path / "task.json")) return {taskmodel::load_task(path / "task.json")};
  return taskmodel::load_task_suite(path);
}

std::vector<taskmodel::HumanLabels> load_labels(const fs::path& path) {
  std::vector<taskmodel::HumanLabels> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(taskmodel::load_labels(f));
  } else {
    out.push_back(taskmodel::load_labels(path));
  }
  return out;
}

std::vector<harness::EvaluationRecord> load_records(const std::vector<std::string>& paths) {
  std::vector<harness::EvaluationRecord> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == "record.json") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back(harness::load_record(f));
    } else {
      out.push_back(harness::load_record(p));
    }
  }
  return out;
}

/// A spec file for a single task, or a directory of <task_id>.json specs.
envdriver::SimAppSpec sim_for(const fs::path& sim, const std::string& task_id) {
  return envdriver::load_sim_spec(fs::is_directory(sim) ? sim / (task_id + ".json") : sim);
}

void print_alignment(const scoring::AlignmentReport& a) {
  std::cout << scoring::alignment_to_json(a).dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agent-as-a-judge evaluation of generated applications"};
  app.require_subcommand(1);

  Common common;

  // gen
  std::string gen_task;
  auto* gen = app.add_subcommand("gen", "Generate and link test cases");
  gen->add_option("--task", gen_task, "Task file or directory")->required();
  add_common(gen, common);

  // run
  std::string run_task, run_target, run_sim, run_labels, run_cases, deploy_hint, app_url;
  bool run_static_code = false;
  bool run_static_visual = false;
  auto* run = app.add_subcommand("run", "Full pipeline: generate, execute, judge, score");
  run->add_option("--task", run_task, "Task file, task directory or suite directory")->required();
  auto* target_opt = run->add_option("--target", run_target, "URL or working directory of the application");
  auto* sim_opt = run->add_option("--sim", run_sim, "Simulated app spec, or a directory of <task_id>.json");
  target_opt->excludes(sim_opt);
  run->add_option("--deploy-hint", deploy_hint, "Shell command that serves a directory target");
  run->add_option("--app-url", app_url, "Where the deployed directory target is served");
  run->add_option("--labels", run_labels, "Human labels file or directory; enables alignment");
  run->add_option("--cases", run_cases, "Use this case file instead of generating")->check(CLI::ExistingFile);
  run->add_flag("--static-code", run_static_code, "Also score the source corpus");
  run->add_flag("--static-visual", run_static_visual, "Also score screenshots");
  add_common(run, common);
  add_run_options(run, common);

  // judge
  std::string judge_task, judge_trace, judge_cases;
  auto* judge_cmd = app.add_subcommand("judge", "Judge a stored trace");
  judge_cmd->add_option("--task", judge_task, "Task file")->required();
  judge_cmd->add_option("--trace", judge_trace, "Trace file (JSONL)")->required()->check(CLI::ExistingFile);
  judge_cmd->add_option("--cases", judge_cases, "Case file")->required()->check(CLI::ExistingFile);
  add_common(judge_cmd, common);
  add_run_options(judge_cmd, common);

  // score
  std::string score_task, score_verdicts, score_cases;
  auto* score = app.add_subcommand("score", "Case- and feature-level quality from stored verdicts");
  score->add_option("--task", score_task, "Task file")->required();
  score->add_option("--verdicts", score_verdicts, "Verdict file")->required()->check(CLI::ExistingFile);
  score->add_option("--cases", score_cases, "Case file")->required()->check(CLI::ExistingFile);
  add_common(score, common);
  add_run_options(score, common);

  // align
  std::vector<std::string> align_records;
  std::string align_labels;
  auto* align = app.add_subcommand("align", "Alignment of stored records with human labels");
  align->add_option("--records", align_records, "Record files or run directories")->required();
  align->add_option("--labels", align_labels, "Labels file or directory")->required();
  add_common(align, common);

  // static
  std::string static_task, static_source;
  auto* static_cmd = app.add_subcommand("static", "Static code-quality score of a source tree");
  static_cmd->add_option("--task", static_task, "Task file")->required();
  static_cmd->add_option("--source", static_source, "Source directory")->required()->check(CLI::ExistingDirectory);
  add_common(static_cmd, common);

  // report
  std::vector<std::string> report_records;
  std::string report_labels;
  auto* report = app.add_subcommand("report", "Render report.md and report.json from stored records");
  report->add_option("--records", report_records, "Record files or run directories")->required();
  report->add_option("--labels", report_labels, "Labels file or directory; adds alignment");
  add_common(report, common);

  // simulate
  std::string sim_spec, sim_script;
  auto* simulate = app.add_subcommand("simulate", "Validate a simulated app spec, optionally run a script");
  simulate->add_option("spec", sim_spec, "Simulated app spec")->required()->check(CLI::ExistingFile);
  simulate->add_option("--run", sim_script, "Interaction script to run after Open");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto config = load_config(common);
      llmgateway::Gateway gateway(harness::make_provider(config), config.provider);
      for (const auto& task : load_tasks(gen_task)) {
        auto gen_config = testgen::with_domain_examples(config.generation, task.domain);
        if (gen_config.model_id.empty()) gen_config.model_id = config.models.pick(config.models.generation);
        auto generated = testgen::generate_test_cases(task, gen_config, gateway);
        auto linked = testgen::link_cases_to_features(std::move(generated.cases), task, gateway,
                                                      config.models.pick(config.models.linking));
        for (const auto& w : generated.warnings) std::cerr << task.id << ": warning: " << w << "\n";
        for (const auto& w : linked.warnings) std::cerr << task.id << ": warning: " << w << "\n";
        const auto path = config.out_dir / task.id / "cases.json";
        testgen::save_case_file({task.id, linked.cases, gen_config.model_id, harness::utc_timestamp()}, path);
        std::cout << fmt::format("{}: {} cases -> {}\n", task.id, linked.cases.size(), path.string());
      }
      return 0;
    }

    if (*run) {
      if (run_target.empty() && run_sim.empty()) throw Error(Errc::precondition, "run: --target or --sim is required");
      json extra = json::object();
      extra["driver"]["mode"] = run_sim.empty() ? "real" : "simulated";
      if (!app_url.empty()) extra["driver"]["app_url"] = app_url;
      if (run_static_code) extra["static"]["code"] = true;
      if (run_static_visual) extra["static"]["visual"] = true;
      auto config = load_config(common, extra);
      const auto tasks = load_tasks(run_task);
      if (!run_target.empty() && tasks.size() != 1) {
        throw Error(Errc::precondition, "run: --target serves exactly one task");
      }
      std::optional<std::vector<testgen::TestCase>> provided;
      if (!run_cases.empty()) {
        if (tasks.size() != 1) throw Error(Errc::precondition, "run: --cases applies to exactly one task");
        provided = testgen::load_case_file(run_cases).cases;
      }
      std::vector<harness::Job> jobs;
      for (const auto& task : tasks) {
        if (!run_sim.empty()) {
          jobs.push_back({task, sim_for(run_sim, task.id), provided});
        } else {
          auto hint = deploy_hint.empty() ? std::nullopt : std::optional<std::string>(deploy_hint);
          jobs.push_back({task, taskmodel::make_project(task.id, run_target, hint), provided});
        }
      }
      llmgateway::Gateway gateway(harness::make_provider(config), config.provider);
      const auto records = harness::run_suite(jobs, config, gateway);

      std::optional<scoring::AlignmentReport> alignment;
      if (!run_labels.empty()) alignment = harness::align_run(records, load_labels(run_labels));
      harness::emit_report(records, alignment, config.out_dir);

      bool incomplete = false;
      for (const auto& r : records) {
        if (r.incomplete) {
          incomplete = true;
          std::cout << fmt::format("{}: incomplete at {}: {}\n", r.task_id, harness::to_string(*r.failed_stage),
                                   r.failure);
        } else {
          std::cout << fmt::format("{}: case quality {:.4f}, feature quality {:.4f}\n", r.task_id,
                                   scoring::round4(r.quality_case->value), scoring::round4(r.quality_feature->value));
        }
      }
      if (alignment) print_alignment(*alignment);
      std::cout << "report: " << (config.out_dir / "report.md").string() << "\n";
      return incomplete ? kExitIncomplete : 0;
    }

    if (*judge_cmd) {
      auto config = load_config(common);
      const auto task = taskmodel::load_task(judge_task);
      const auto trace = executor::load_trace(judge_trace);
      const auto cases = testgen::load_case_file(judge_cases).cases;
      judge::VerdictFile file{task.id, config.judge_path, {}, {}};
      const auto report_map = judge::merge_reports(trace.tell_payloads, file.warnings);
      if (config.judge_path == judge::JudgePath::agent) {
        file.verdicts = judge::normalize_verdicts(report_map, cases, file.warnings);
      } else {
        llmgateway::Gateway gateway(harness::make_provider(config), config.provider);
        file.verdicts = judge::rejudge(cases, report_map, trace, gateway, config.models.pick(config.models.judgment));
      }
      const auto path = config.out_dir / task.id / "verdicts.json";
      judge::save_verdicts(file, path);
      for (const auto& w : file.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << fmt::format("{} verdicts -> {}\n", file.verdicts.size(), path.string());
      return 0;
    }

    if (*score) {
      auto config = load_config(common);
      const auto task = taskmodel::load_task(score_task);
      const auto verdicts = judge::load_verdicts(score_verdicts).verdicts;
      const auto cases = testgen::load_case_file(score_cases).cases;
      const auto cq = scoring::case_level_quality(verdicts);
      const auto fq = scoring::feature_level_quality(verdicts, cases, static_cast<int>(task.features.size()),
                                                     config.feature_strategy);
      nlohmann::ordered_json out;
      out["task_id"] = task.id;
      out["quality_case"] = scoring::round4(cq.value);
      out["quality_feature"] = scoring::round4(fq.score.value);
      out["feature_strategy"] = scoring::to_string(config.feature_strategy);
      out["features"] = nlohmann::ordered_json::array();
      for (const auto& f : fq.features) {
        out["features"].push_back({{"feature_index", f.feature_index}, {"passed", f.passed}, {"linked_cases", f.linked_cases}});
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    }

    if (*align) {
      auto config = load_config(common);
      const auto records = load_records(align_records);
      const auto alignment = harness::align_run(records, load_labels(align_labels));
      write_json_file(config.out_dir / "alignment.json", scoring::alignment_to_json(alignment));
      print_alignment(alignment);
      return 0;
    }

    if (*static_cmd) {
      auto config = load_config(common);
      const auto task = taskmodel::load_task(static_task);
      const auto corpus = staticeval::collect_sources(static_source, {});
      llmgateway::Gateway gateway(harness::make_provider(config), config.provider);
      auto result = staticeval::code_quality_eval(task, corpus.text, gateway, config.models.pick(config.models.static_code));
      if (corpus.truncated) result.warnings.emplace_back("source corpus truncated");
      std::cout << staticeval::code_quality_to_json(result).dump(2) << "\n";
      return 0;
    }

    if (*report) {
      auto config = load_config(common);
      const auto records = load_records(report_records);
      std::optional<scoring::AlignmentReport> alignment;
      if (!report_labels.empty()) alignment = harness::align_run(records, load_labels(report_labels));
      harness::emit_report(records, alignment, config.out_dir);
      std::cout << "report: " << (config.out_dir / "report.md").string() << "\n";
      return 0;
    }

    if (*simulate) {
      const auto spec = envdriver::load_sim_spec(sim_spec);
      if (auto problems = envdriver::validate_sim_spec(spec); !problems.empty()) {
        for (const auto& p : problems) std::cerr << "invalid: " << p << "\n";
        return kExitIncomplete;
      }
      auto session = envdriver::open_session(spec);
      auto outcome = session->apply(envdriver::OpenAction{spec.app_name});
      if (!sim_script.empty()) {
        outcome = session->apply(envdriver::RunAction{sim_script});
        std::cout << (outcome.ok ? "ok" : "failed") << (outcome.detail.empty() ? "" : ": " + outcome.detail) << "\n";
      }
      std::cout << outcome.observation_after.a11y_tree << "\n";
      return outcome.ok ? 0 : kExitIncomplete;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
