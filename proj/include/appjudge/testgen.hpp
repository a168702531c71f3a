#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/llmgateway.hpp"
#include "appjudge/taskmodel.hpp"

namespace appjudge::testgen {

enum class CaseOrigin { generated, provided };

struct TestCase {
  int id = 0;  // dense from 0
  std::string text;
  std::vector<int> linked_features;  // 1-based feature indices, sorted, unique
  CaseOrigin origin = CaseOrigin::generated;

  bool operator==(const TestCase&) const = default;
};

struct GenerationConfig {
  int min_cases = 15;
  int max_cases = 20;
  /// When empty, the domain's built-in example bank is used.
  std::vector<std::string> few_shot_examples;
  std::string model_id;
};

std::vector<std::string> validate_config(const GenerationConfig& config);

/// Example cases steering generation per domain: web-presentation checks for
/// Display, data-integrity and privacy checks for Data, chart/summary checks
/// for Analysis, game-mechanics checks for Game.
const std::vector<std::string>& default_examples(taskmodel::Domain domain);

/// Same config with `few_shot_examples` filled from the domain bank if empty.
GenerationConfig with_domain_examples(GenerationConfig config, taskmodel::Domain domain);

/// Pure function of (task, config).
std::string build_generation_prompt(const taskmodel::TaskSpec& task, const GenerationConfig& config);

struct GenerationResult {
  std::vector<TestCase> cases;
  std::vector<std::string> warnings;
};

/// One corrective retry when the count is outside [min, max]; an overlong
/// second answer is truncated to max (with a warning), a short one throws
/// Error{count_violation}.
GenerationResult generate_test_cases(const taskmodel::TaskSpec& task, const GenerationConfig& config,
                                     llmgateway::Gateway& gateway);

std::string build_linking_prompt(const std::vector<TestCase>& cases, const taskmodel::TaskSpec& task);

struct LinkResult {
  std::vector<TestCase> cases;
  std::vector<std::string> warnings;
};

/// Single classification call assigning feature indices to every case.
/// Out-of-range indices and unknown case ids are dropped with a warning.
LinkResult link_cases_to_features(std::vector<TestCase> cases, const taskmodel::TaskSpec& task,
                                  llmgateway::Gateway& gateway, const std::string& model_id);

/// Dense ids, non-empty text, links inside the task's feature range.
std::vector<std::string> validate_cases(const std::vector<TestCase>& cases,
                                        const taskmodel::TaskSpec& task);

struct CaseFile {
  std::string task_id;
  std::vector<TestCase> cases;
  std::string generator_model;
  std::string timestamp;
};

nlohmann::ordered_json case_file_to_json(const CaseFile& file);
CaseFile case_file_from_json(const nlohmann::json& doc);
void save_case_file(const CaseFile& file, const std::filesystem::path& path);
CaseFile load_case_file(const std::filesystem::path& path);

}  // namespace appjudge::testgen
