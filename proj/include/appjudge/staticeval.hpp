#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/llmgateway.hpp"
#include "appjudge/taskmodel.hpp"

namespace appjudge::staticeval {

struct CodeScanConfig {
  std::vector<std::string> extension_allowlist{".py", ".html", ".css", ".js", ".ts", ".tsx", ".jsx"};
  std::size_t max_total_bytes = 400000;
  /// Shell globs matched against every path component and the whole
  /// relative path.
  std::vector<std::string> path_excludes{"node_modules", ".git", "dist", "build", ".next", "out",
                                         "venv", ".venv", "__pycache__", "vendor", "coverage", "*.min.js"};
};

std::vector<std::string> validate_config(const CodeScanConfig& config);

inline constexpr std::string_view kTruncationMarker = "\n[... corpus truncated ...]\n";

struct Corpus {
  std::string text;
  std::vector<std::string> files;  // relative paths, in corpus order
  bool truncated = false;
};

/// Matching files in lexicographic path order, each preceded by a
/// `### File: <path>` header. Throws Error{missing_file} for a missing root
/// and Error{empty_input} when nothing matches.
Corpus collect_sources(const std::filesystem::path& root, const CodeScanConfig& config);

struct StaticFeatureResult {
  std::string requirement_id;
  bool satisfied = false;
  int score = 0;  // 0..100
  std::string reason;
  bool operator==(const StaticFeatureResult&) const = default;
};

struct CodeQualityResult {
  std::vector<StaticFeatureResult> results;  // one per feature, in feature order
  std::vector<std::string> warnings;
};

std::string build_code_quality_prompt(const taskmodel::TaskSpec& task, const std::string& corpus);

/// Missing features are filled with {false, 0, "not returned"}; scores
/// outside 0..100 are clamped. Both produce warnings.
CodeQualityResult code_quality_eval(const taskmodel::TaskSpec& task, const std::string& corpus,
                                    llmgateway::Gateway& gateway, const std::string& model_id);

/// Passed features (score strictly above 75) over all features. Throws
/// Error{empty_input}.
double aggregate_llm_score(const std::vector<StaticFeatureResult>& results);

inline constexpr int kPassThreshold = 75;

/// First number in the reply ("80", "score: 55/100", "72.5"), or nullopt.
std::optional<double> extract_score(std::string_view reply);

struct VisualQualityResult {
  double value = 0.0;  // [0,1]
  double raw = 0.0;    // 0..100 as returned
  std::vector<std::string> warnings;
};

/// One multimodal call over all screenshots with `rubric` ({query} is the
/// task description). Unreadable replies get one re-ask, then throw
/// UnparseableError. Throws Error{precondition} without screenshots.
VisualQualityResult visual_quality_eval(const taskmodel::TaskSpec& task,
                                        const std::vector<llmgateway::ImageAttachment>& screenshots,
                                        llmgateway::Gateway& gateway, const std::string& model_id,
                                        std::string_view rubric);

nlohmann::ordered_json code_quality_to_json(const CodeQualityResult& result);
nlohmann::ordered_json visual_quality_to_json(const VisualQualityResult& result);

}  // namespace appjudge::staticeval
