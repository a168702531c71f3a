#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Prompt templates. Placeholders are literal tokens substituted by
// fill_template; the surrounding text is kept byte-for-byte.
namespace appjudge::prompts {

/// Placeholders: [Test Case Examples], [demand], [min_cases], [max_cases].
extern const std::string_view kCaseGeneration;

/// Placeholders: [task_desc], [model_output].
extern const std::string_view kTestJudgement;

/// System prompt governing the execution agent.
extern const std::string_view kTestExecution;

/// Reporting rules and the final result format for the execution agent.
extern const std::string_view kTestExecutionReport;

/// Placeholders: {query}, {features}, {codes}, {example}.
extern const std::string_view kCodeQuality;

/// Generic aesthetic rubric used for screenshot scoring unless the config
/// supplies another one. Not a published rubric. Placeholder: {query}.
extern const std::string_view kDefaultVisualRubric;

/// Replaces every occurrence of each key with its value, left to right, in
/// one pass over the template (substituted text is never re-scanned).
std::string fill_template(std::string_view tmpl,
                          const std::vector<std::pair<std::string, std::string>>& values);

}  // namespace appjudge::prompts
