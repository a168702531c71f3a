#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/judge.hpp"
#include "appjudge/outcome.hpp"
#include "appjudge/testgen.hpp"

namespace appjudge::scoring {

/// 1 for Pass, 0 for Fail and Uncertain.
int binary_score(Outcome result);

/// Same mapping over the label tokens true/false/uncertain (and their
/// Pass/Fail/Uncertain aliases). Throws Error{unknown_token}.
int binary_score(std::string_view token);

enum class Level { case_level, feature_level };

std::string_view to_string(Level level);

struct QualityScore {
  double value = 0.0;
  Level level = Level::case_level;
  int n_items = 0;
  bool operator==(const QualityScore&) const = default;
};

/// Mean binary score. Throws Error{empty_input}.
QualityScore case_level_quality(std::span<const judge::CaseVerdict> verdicts);

enum class FeatureStrategy { all_pass, majority };

std::string_view to_string(FeatureStrategy strategy);
std::optional<FeatureStrategy> parse_feature_strategy(std::string_view text);

struct FeatureResult {
  int feature_index = 0;
  bool passed = false;
  std::vector<int> linked_cases;
  bool operator==(const FeatureResult&) const = default;
};

struct FeatureQuality {
  QualityScore score;
  std::vector<FeatureResult> features;
};

/// A feature with linked cases passes when every case is Pass (all_pass) or
/// strictly more than half are Pass (majority); an unlinked feature fails.
/// Cases without a verdict count as not Pass.
FeatureQuality feature_level_quality(std::span<const judge::CaseVerdict> verdicts,
                                     std::span<const testgen::TestCase> cases, int n_features,
                                     FeatureStrategy strategy);

/// Fraction of positions whose binary scores agree. Throws
/// Error{length_mismatch} or Error{empty_input}.
double accuracy(std::span<const Outcome> agent, std::span<const Outcome> human);

/// Exact three-valued agreement; auxiliary statistic.
double three_class_accuracy(std::span<const Outcome> agent, std::span<const Outcome> human);

/// Product-moment correlation, nullopt when either variance is zero. Throws
/// Error{length_mismatch}, or Error{empty_input} below two points.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

/// Histogram intersection over `bins` equal-width bins on [0,1]; the value 1
/// falls into the last bin. Throws Error{out_of_range} or Error{empty_input}.
double distribution_overlap(std::span<const double> xs, std::span<const double> ys, int bins = 10);

/// Mean |method - human|. Throws Error{length_mismatch} or Error{empty_input}.
double mean_abs_deviation(std::span<const double> method_scores, std::span<const double> human_scores);

/// Per-project inputs to alignment. Case outcome vectors are aligned by
/// case id and may be empty when no case labels exist.
struct ProjectScores {
  std::string task_id;
  double case_quality = 0.0;
  double feature_quality = 0.0;
  double human_quality = 0.0;
  std::vector<Outcome> agent_cases;
  std::vector<Outcome> human_cases;
};

struct AlignmentReport {
  std::optional<double> accuracy;  // absent without case labels
  std::optional<double> three_class_accuracy;
  std::optional<double> pearson_case;  // nullopt: undefined
  std::optional<double> pearson_feature;
  double overlap_rate = 0.0;
  double mean_abs_deviation = 0.0;
  int n_projects = 0;
  int n_cases = 0;
  std::vector<std::string> notes;
};

/// Accuracy pools all labelled cases; correlations, overlap and deviation
/// compare agent quality against human quality per project. Correlations
/// are undefined below two projects or at zero variance.
AlignmentReport align(std::span<const ProjectScores> projects);

/// Floats rounded to 4 decimals; undefined correlations as the string
/// "undefined". The overlap entry is labelled as an interpretation.
nlohmann::ordered_json alignment_to_json(const AlignmentReport& report);

/// Rounds half away from zero to 4 decimals.
double round4(double value);

}  // namespace appjudge::scoring
