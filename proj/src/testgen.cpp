#include "appjudge/testgen.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include <fmt/format.h>

#include "appjudge/error.hpp"
#include "appjudge/json_io.hpp"
#include "appjudge/prompts.hpp"

namespace appjudge::testgen {

using llmgateway::Gateway;
using llmgateway::Role;
using llmgateway::Shape;
using nlohmann::json;
using taskmodel::Domain;
using taskmodel::TaskSpec;

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> non_blank(const json& list, std::vector<std::string>& warnings) {
  std::vector<std::string> out;
  for (const auto& item : list) {
    auto text = trim(item.get<std::string>());
    if (text.empty()) {
      warnings.emplace_back("dropped a blank test case from the model reply");
      continue;
    }
    out.push_back(std::move(text));
  }
  return out;
}

std::optional<int> leading_int(std::string_view s) {
  while (!s.empty() && !std::isdigit(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr == s.data()) return std::nullopt;
  return value;
}

}  // namespace

std::vector<std::string> validate_config(const GenerationConfig& config) {
  std::vector<std::string> out;
  if (config.min_cases < 1) out.emplace_back("min_cases: must be >= 1");
  if (config.max_cases < config.min_cases) out.emplace_back("max_cases: must be >= min_cases");
  return out;
}

const std::vector<std::string>& default_examples(Domain domain) {
  static const std::vector<std::string> display{
      "Navigation Verification: Persistent top navigation bar positioning during scrolling",
      "Link Validation: Intra-page navigation link accuracy (\"Home\", \"Projects\", etc.)",
      "Image Quality: Avatar image rendering quality and aspect ratio preservation",
      "Content Integrity: Biographical text completeness and typographic consistency",
      "Layout Testing: Project card list formatting and content integrity",
      "Privacy Compliance: Verify absence of compensation data in project disclosures",
      "Responsive Design: Skill tag cloud layout responsiveness across devices",
      "Interactive Elements: Test hover effects on skill tags and buttons",
      "External Links: Social media link destination accuracy verification",
      "Download Function: PDF resume download functionality testing",
      "File Integrity: Validate PDF file integrity and readability",
  };
  static const std::vector<std::string> analysis{
      "Trend Chart: Verify the daily trend chart renders one point per day present in the data",
      "Ranking Table: Verify the ranking is sorted in descending order of the measured value",
      "Chart Interaction: Hover a data point and verify the tooltip shows its exact value",
      "Summary Accuracy: Verify summary percentages add up to 100%",
      "Filter Function: Change the date range filter and verify all charts update",
      "Empty Data: Verify a clear message is shown when a filter leaves no data",
  };
  static const std::vector<std::string> data{
      "Data Loading: Verify the provided CSV loads and the record count matches the file",
      "Input Validation: Enter a malformed amount and verify it is rejected with an error message",
      "Data Security: Verify sensitive fields are masked or omitted from the exported file",
      "Export Function: Export the data and verify the downloaded file opens with correct columns",
      "Aggregation: Verify monthly totals equal the sum of the underlying records",
      "Persistence: Add a record, reload the page, and verify the record is still present",
  };
  static const std::vector<std::string> game{
      "Game Start: Click the start button and verify a new game begins in its initial state",
      "Turn Mechanics: Complete a turn and verify the turn counter increments by one",
      "Opponent Behavior: Verify the computer opponent makes a legal move after the player",
      "Win Condition: Play until a game ends and verify the winner is announced correctly",
      "Controls: Press the documented control keys and verify the game responds to each",
      "Replay: Click the replay button and verify scores and board are reset",
  };
  switch (domain) {
    case Domain::Display: return display;
    case Domain::Analysis: return analysis;
    case Domain::Data: return data;
    case Domain::Game: return game;
  }
  return display;
}

GenerationConfig with_domain_examples(GenerationConfig config, Domain domain) {
  if (config.few_shot_examples.empty()) config.few_shot_examples = default_examples(domain);
  return config;
}

std::string build_generation_prompt(const TaskSpec& task, const GenerationConfig& config) {
  std::string examples = "Test Case Examples:\n";
  for (std::size_t i = 0; i < config.few_shot_examples.size(); ++i) {
    examples += fmt::format("{}. {}\n", i + 1, config.few_shot_examples[i]);
  }

  std::string demand;
  if (!trim(task.description).empty()) demand = trim(task.description) + "\n";
  demand += "Feature List:\n";
  for (const auto& f : task.features) demand += fmt::format("{}. {}\n", f.index, f.text);

  return prompts::fill_template(prompts::kCaseGeneration,
                                {{"[Test Case Examples]", examples},
                                 {"[demand]", demand},
                                 {"[min_cases]", std::to_string(config.min_cases)},
                                 {"[max_cases]", std::to_string(config.max_cases)}});
}

GenerationResult generate_test_cases(const TaskSpec& task, const GenerationConfig& config,
                                     Gateway& gateway) {
  if (auto problems = validate_config(config); !problems.empty()) {
    throw Error(Errc::precondition, "generation config: " + problems.front());
  }
  GenerationResult result;
  const auto in_range = [&](std::size_t n) {
    return n >= static_cast<std::size_t>(config.min_cases) &&
           n <= static_cast<std::size_t>(config.max_cases);
  };

  auto request = llmgateway::make_request(config.model_id, "", build_generation_prompt(task, config));
  auto texts = non_blank(gateway.complete_structured(request, Shape::string_list), result.warnings);

  if (!in_range(texts.size())) {
    result.warnings.push_back(fmt::format("model returned {} test cases (expected {}-{}); retrying once",
                                          texts.size(), config.min_cases, config.max_cases));
    json previous = texts;
    request.messages.push_back({Role::assistant, previous.dump(), {}});
    request.messages.push_back(
        {Role::user,
         fmt::format("You returned {} test cases. Return between {} and {} test cases in List(str) "
                     "format, without any additional characters.",
                     texts.size(), config.min_cases, config.max_cases),
         {}});
    texts = non_blank(gateway.complete_structured(request, Shape::string_list), result.warnings);
    if (texts.size() > static_cast<std::size_t>(config.max_cases)) {
      result.warnings.push_back(fmt::format("model returned {} test cases after retry; truncated to {}",
                                            texts.size(), config.max_cases));
      texts.resize(static_cast<std::size_t>(config.max_cases));
    } else if (texts.size() < static_cast<std::size_t>(config.min_cases)) {
      throw Error(Errc::count_violation,
                  fmt::format("model returned {} test cases after retry; at least {} required",
                              texts.size(), config.min_cases));
    }
  }

  result.cases.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    result.cases.push_back({static_cast<int>(i), std::move(texts[i]), {}, CaseOrigin::generated});
  }
  return result;
}

std::string build_linking_prompt(const std::vector<TestCase>& cases, const TaskSpec& task) {
  std::string prompt =
      "Map each test case to the features it verifies.\n\n"
      "Feature List:\n";
  for (const auto& f : task.features) prompt += fmt::format("{}. {}\n", f.index, f.text);
  prompt += "\nTest Cases:\n";
  for (const auto& c : cases) prompt += fmt::format("{}. {}\n", c.id, c.text);
  prompt += fmt::format(
      "\nReturn a JSON object whose keys are the test case numbers (as strings) and whose values "
      "are lists of the feature numbers (1-{}) that the test case verifies. Use an empty list when a "
      "test case verifies none of the features. Return only the JSON object.",
      task.features.size());
  return prompt;
}

LinkResult link_cases_to_features(std::vector<TestCase> cases, const TaskSpec& task,
                                  Gateway& gateway, const std::string& model_id) {
  LinkResult result;
  const auto request = llmgateway::make_request(model_id, "", build_linking_prompt(cases, task));
  const json map = gateway.complete_structured(request, Shape::index_map);

  const int n_features = static_cast<int>(task.features.size());
  for (auto& c : cases) c.linked_features.clear();

  for (const auto& [key, value] : map.items()) {
    const auto id = leading_int(key);
    auto it = id ? std::find_if(cases.begin(), cases.end(), [&](const TestCase& c) { return c.id == *id; })
                 : cases.end();
    if (it == cases.end()) {
      result.warnings.push_back(fmt::format("linking reply names unknown test case '{}'", key));
      continue;
    }
    std::vector<int> indices;
    if (value.is_number_integer()) indices.push_back(value.get<int>());
    if (value.is_array()) {
      for (const auto& v : value) indices.push_back(v.get<int>());
    }
    std::set<int> kept;
    for (int idx : indices) {
      if (idx < 1 || idx > n_features) {
        result.warnings.push_back(
            fmt::format("case {}: dropped link to out-of-range feature {}", it->id, idx));
        continue;
      }
      kept.insert(idx);
    }
    it->linked_features.assign(kept.begin(), kept.end());
  }
  result.cases = std::move(cases);
  return result;
}

std::vector<std::string> validate_cases(const std::vector<TestCase>& cases, const TaskSpec& task) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    if (c.id != static_cast<int>(i)) {
      out.push_back(fmt::format("cases[{}].id: expected {}, found {}", i, i, c.id));
    }
    if (trim(c.text).empty()) out.push_back(fmt::format("cases[{}].text: must be non-empty", i));
    for (int f : c.linked_features) {
      if (f < 1 || f > static_cast<int>(task.features.size())) {
        out.push_back(fmt::format("cases[{}].linked_features: {} references no feature", i, f));
      }
    }
  }
  return out;
}

nlohmann::ordered_json case_file_to_json(const CaseFile& file) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = 1;
  doc["task_id"] = file.task_id;
  doc["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : file.cases) {
    doc["cases"].push_back({{"id", c.id},
                            {"text", c.text},
                            {"linked_features", c.linked_features},
                            {"origin", c.origin == CaseOrigin::generated ? "generated" : "provided"}});
  }
  doc["generator_model"] = file.generator_model;
  doc["timestamp"] = file.timestamp;
  return doc;
}

CaseFile case_file_from_json(const json& doc) {
  require_schema_version(doc, "case file");
  CaseFile file;
  try {
    file.task_id = doc.at("task_id").get<std::string>();
    for (const auto& c : doc.at("cases")) {
      TestCase tc;
      tc.id = c.at("id").get<int>();
      tc.text = c.at("text").get<std::string>();
      tc.linked_features = c.value("linked_features", std::vector<int>{});
      tc.origin = c.value("origin", std::string("generated")) == "provided" ? CaseOrigin::provided
                                                                              : CaseOrigin::generated;
      file.cases.push_back(std::move(tc));
    }
    file.generator_model = doc.value("generator_model", std::string{});
    file.timestamp = doc.value("timestamp", std::string{});
  } catch (const json::exception& e) {
    throw Error(Errc::schema_violation, std::string("case file: ") + e.what());
  }
  return file;
}

void save_case_file(const CaseFile& file, const std::filesystem::path& path) {
  write_json_file(path, case_file_to_json(file));
}

CaseFile load_case_file(const std::filesystem::path& path) {
  return case_file_from_json(read_json_file(path));
}

}  // namespace appjudge::testgen
