#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/outcome.hpp"

namespace appjudge::taskmodel {

inline constexpr int kSchemaVersion = 1;

enum class Domain { Display, Analysis, Data, Game };

std::string_view to_string(Domain domain);
std::optional<Domain> parse_domain(std::string_view text);

struct FeatureSpec {
  int index = 0;  // 1-based, contiguous
  std::string text;

  bool operator==(const FeatureSpec&) const = default;
};

enum class MaterialKind { image, audio, dataset, document, other };

std::string_view to_string(MaterialKind kind);
std::optional<MaterialKind> parse_material_kind(std::string_view text);

struct MaterialRef {
  MaterialKind kind = MaterialKind::other;
  std::string path;  // relative to the task's materials/ directory
  std::optional<std::string> note;

  bool operator==(const MaterialRef&) const = default;
};

/// The requirement triplet: description, ordered feature list, materials.
struct TaskSpec {
  std::string id;
  Domain domain = Domain::Display;
  std::string description;
  std::vector<FeatureSpec> features;
  std::vector<MaterialRef> materials;

  bool operator==(const TaskSpec&) const = default;
};

struct UrlTarget {
  std::string url;
  bool operator==(const UrlTarget&) const = default;
};

struct DirectoryTarget {
  std::filesystem::path directory;
  bool operator==(const DirectoryTarget&) const = default;
};

struct ProjectUnderTest {
  std::string task_id;
  std::variant<UrlTarget, DirectoryTarget> target;
  std::optional<std::string> deploy_hint;
};

/// Classifies a --target argument: anything with a scheme is a URL,
/// everything else a working directory.
ProjectUnderTest make_project(std::string task_id, std::string_view target,
                              std::optional<std::string> deploy_hint = {});

struct FeatureLabel {
  int feature_index = 0;
  Outcome result = Outcome::Uncertain;
  bool operator==(const FeatureLabel&) const = default;
};

struct CaseLabel {
  int case_id = 0;
  Outcome result = Outcome::Uncertain;
  bool operator==(const CaseLabel&) const = default;
};

struct HumanLabels {
  std::string task_id;
  std::vector<FeatureLabel> feature_labels;
  std::optional<std::vector<CaseLabel>> case_labels;
  int annotator_count = 1;
  bool operator==(const HumanLabels&) const = default;
};

// Validation. Each violation string starts with the offending field path.
std::vector<std::string> validate_task(const TaskSpec& task);
std::vector<std::string> validate_task_document(const nlohmann::json& doc);
std::vector<std::string> validate_labels(const HumanLabels& labels,
                                         const TaskSpec& task);

TaskSpec task_from_json(const nlohmann::json& doc);
nlohmann::ordered_json task_to_json(const TaskSpec& task);

/// Reads `path` (a task document), validates it, and checks that every
/// material exists under the sibling `materials/` directory.
TaskSpec load_task(const std::filesystem::path& path);
void save_task(const TaskSpec& task, const std::filesystem::path& path);

/// Every `*/task.json` below `directory`, sorted by id. Duplicate ids throw.
std::vector<TaskSpec> load_task_suite(const std::filesystem::path& directory);

std::filesystem::path materials_directory(const std::filesystem::path& task_path);

HumanLabels labels_from_json(const nlohmann::json& doc);
nlohmann::ordered_json labels_to_json(const HumanLabels& labels);
HumanLabels load_labels(const std::filesystem::path& path);
void save_labels(const HumanLabels& labels, const std::filesystem::path& path);

/// Fraction of feature labels that are `true`; false and uncertain count 0.
double human_quality(const HumanLabels& labels);

/// Mean binary score of the case labels, when present.
std::optional<double> human_case_quality(const HumanLabels& labels);

}  // namespace appjudge::taskmodel
