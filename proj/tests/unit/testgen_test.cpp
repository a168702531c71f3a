#include <random>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "../support/golden.hpp"
#include "appjudge/error.hpp"
#include "appjudge/testgen.hpp"

using namespace appjudge;
using namespace appjudge::testgen;
namespace fs = std::filesystem;
using nlohmann::json;
using llmgateway::Gateway;
using llmgateway::ScriptedProvider;

namespace {

const fs::path kTasks = fs::path(APPJUDGE_FIXTURES) / "tasks";

// The portfolio feature list as published with the benchmark.
const std::vector<std::string> kPortfolioFeatures = {
    "Navigation System: Fixed header with smooth scrolling navigation links",
    "Hero Section: Professional profile photograph integration with dynamic introduction",
    "Project Showcase: Interactive card-based layout with hover effects",
    "Skills Visualization: Dynamic skill tag cloud with proficiency indicators",
    "Social Integration: Elegant social media link collection with animations",
    "Resume Access: Secure PDF download with privacy filtering",
    "Responsive Design: Adaptive layout for all device types",
};

std::string case_list(int n, const std::string& stem = "Check item") {
  json list = json::array();
  for (int i = 0; i < n; ++i) list.push_back(fmt::format("{} {}", stem, i));
  return list.dump();
}

Gateway gateway_of(const std::shared_ptr<ScriptedProvider>& p) {
  return Gateway(p, {}, [](std::chrono::duration<double>) {});
}

std::vector<TestCase> plain_cases(const std::vector<std::string>& texts) {
  std::vector<TestCase> out;
  for (std::size_t i = 0; i < texts.size(); ++i) out.push_back({static_cast<int>(i), texts[i], {}, CaseOrigin::generated});
  return out;
}

}  // namespace

TEST(GenerationPrompt, PortfolioCarriesEveryFeatureVerbatim) {
  const auto task = taskmodel::load_task(kTasks / "portfolio" / "task.json");
  const auto prompt = build_generation_prompt(task, with_domain_examples({}, task.domain));
  for (const auto& f : kPortfolioFeatures) EXPECT_NE(prompt.find(f), std::string::npos) << f;
  EXPECT_NE(prompt.find("professional test engineer"), std::string::npos);
  EXPECT_NE(prompt.find(task.description), std::string::npos);
  EXPECT_EQ(prompt.find("[demand]"), std::string::npos);
  EXPECT_EQ(prompt.find("[Test Case Examples]"), std::string::npos);
}

TEST(GenerationPrompt, EmptyDescriptionStillListsFeatures) {
  auto task = testsupport::golden_task("t", 3);
  task.description = "";
  const auto prompt = build_generation_prompt(task, {});
  EXPECT_NE(prompt.find("Feature List:\n1. "), std::string::npos);
  EXPECT_NE(prompt.find("Test Case Examples:\n"), std::string::npos);
}

TEST(GenerationPrompt, PureFunctionOfInputs) {
  const auto task = taskmodel::load_task(kTasks / "card-game" / "task.json");
  const auto config = with_domain_examples({}, task.domain);
  EXPECT_EQ(build_generation_prompt(task, config), build_generation_prompt(task, config));
  auto other = config;
  other.max_cases = 18;
  EXPECT_NE(build_generation_prompt(task, config), build_generation_prompt(task, other));
}

TEST(GenerationPrompt, DomainBanksDiffer) {
  EXPECT_FALSE(default_examples(taskmodel::Domain::Game).empty());
  EXPECT_NE(default_examples(taskmodel::Domain::Game), default_examples(taskmodel::Domain::Data));
  GenerationConfig own;
  own.few_shot_examples = {"mine"};
  EXPECT_EQ(with_domain_examples(own, taskmodel::Domain::Game).few_shot_examples, own.few_shot_examples);
}

TEST(Generate, SeventeenPassThrough) {
  auto p = std::make_shared<ScriptedProvider>();
  p->push(case_list(17));
  auto gw = gateway_of(p);
  const auto task = testsupport::golden_task("t");
  const auto r = generate_test_cases(task, {}, gw);
  ASSERT_EQ(r.cases.size(), 17u);
  for (int i = 0; i < 17; ++i) {
    EXPECT_EQ(r.cases[i].id, i);
    EXPECT_EQ(r.cases[i].text, fmt::format("Check item {}", i));
  }
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_TRUE(validate_cases(r.cases, task).empty());
  EXPECT_EQ(p->calls(), 1);
}

TEST(Generate, TwentyFiveTwiceTruncatesToTwenty) {
  auto p = std::make_shared<ScriptedProvider>();
  p->push(case_list(25, "first"));
  p->push(case_list(25, "second"));
  auto gw = gateway_of(p);
  const auto r = generate_test_cases(testsupport::golden_task("t"), {}, gw);
  ASSERT_EQ(r.cases.size(), 20u);
  EXPECT_EQ(r.cases.front().text, "second 0");
  EXPECT_EQ(r.cases.back().text, "second 19");
  EXPECT_EQ(r.warnings.size(), 2u);
  EXPECT_NE(r.warnings.back().find("truncated to 20"), std::string::npos);
  EXPECT_EQ(p->calls(), 2);
}

TEST(Generate, TooManyThenInRangeAcceptsRetry) {
  auto p = std::make_shared<ScriptedProvider>();
  p->push(case_list(25));
  p->push(case_list(16));
  auto gw = gateway_of(p);
  EXPECT_EQ(generate_test_cases(testsupport::golden_task("t"), {}, gw).cases.size(), 16u);
}

TEST(Generate, ThreeTwiceIsCountViolation) {
  auto p = std::make_shared<ScriptedProvider>();
  p->push(case_list(3));
  p->push(case_list(3));
  auto gw = gateway_of(p);
  try {
    generate_test_cases(testsupport::golden_task("t"), {}, gw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::count_violation);
  }
}

TEST(Generate, InvalidConfigRejected) {
  GenerationConfig bad;
  bad.min_cases = 10;
  bad.max_cases = 5;
  EXPECT_FALSE(validate_config(bad).empty());
  bad.min_cases = 0;
  bad.max_cases = 5;
  EXPECT_FALSE(validate_config(bad).empty());
  EXPECT_TRUE(validate_config(GenerationConfig{}).empty());
}

TEST(Generate, CountWithinBoundsWheneverItReturns) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    GenerationConfig config;
    config.min_cases = 1 + static_cast<int>(rng() % 10);
    config.max_cases = config.min_cases + static_cast<int>(rng() % 10);
    auto p = std::make_shared<ScriptedProvider>();
    p->push(case_list(static_cast<int>(rng() % 30)));
    p->push(case_list(static_cast<int>(rng() % 30)));
    auto gw = gateway_of(p);
    try {
      const auto r = generate_test_cases(testsupport::golden_task("t"), config, gw);
      EXPECT_GE(static_cast<int>(r.cases.size()), config.min_cases);
      EXPECT_LE(static_cast<int>(r.cases.size()), config.max_cases);
      for (std::size_t i = 0; i < r.cases.size(); ++i) EXPECT_EQ(r.cases[i].id, static_cast<int>(i));
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::count_violation);
    }
  }
}

TEST(Link, ResumeDownloadMapsToResumeAccess) {
  const auto task = taskmodel::load_task(kTasks / "portfolio" / "task.json");
  auto p = std::make_shared<ScriptedProvider>();
  p->on("Map each test case", R"({"0": [6], "1": [1]})");
  auto gw = gateway_of(p);
  const auto r = link_cases_to_features(
      plain_cases({"Verify PDF resume download", "Click a nav link and check smooth scroll"}), task, gw, "m");
  EXPECT_EQ(r.cases[0].linked_features, std::vector<int>{6});
  EXPECT_EQ(r.cases[1].linked_features, std::vector<int>{1});
  EXPECT_TRUE(r.warnings.empty());
  const auto prompt = llmgateway::prompt_text(p->requests()[0]);
  EXPECT_NE(prompt.find("0. Verify PDF resume download"), std::string::npos);
  EXPECT_NE(prompt.find("6. Resume Access"), std::string::npos);
}

TEST(Link, OutOfRangeDroppedWithWarning) {
  const auto task = testsupport::golden_task("t", 5);
  auto p = std::make_shared<ScriptedProvider>();
  p->push(R"({"0": [2, 99], "1": [], "7": [1]})");
  auto gw = gateway_of(p);
  const auto r = link_cases_to_features(plain_cases({"a", "b"}), task, gw, "m");
  EXPECT_EQ(r.cases[0].linked_features, std::vector<int>{2});
  EXPECT_TRUE(r.cases[1].linked_features.empty());
  ASSERT_EQ(r.warnings.size(), 2u);
  EXPECT_NE(r.warnings[0].find("99"), std::string::npos);
  EXPECT_TRUE(validate_cases(r.cases, task).empty());
}

TEST(Link, SingleFeatureTaskLinksOnlyToOne) {
  const auto task = testsupport::golden_task("t", 1);
  auto p = std::make_shared<ScriptedProvider>();
  p->push(R"({"0": [1, 2], "1": [0], "2": [1, 1]})");
  auto gw = gateway_of(p);
  const auto r = link_cases_to_features(plain_cases({"a", "b", "c"}), task, gw, "m");
  for (const auto& c : r.cases) {
    EXPECT_TRUE(c.linked_features.empty() || c.linked_features == std::vector<int>{1});
  }
  EXPECT_EQ(r.cases[2].linked_features, std::vector<int>{1});
}

TEST(Link, UnparseableAfterRepairThrows) {
  auto p = std::make_shared<ScriptedProvider>();
  p->push("cannot say");
  p->push("still cannot say");
  auto gw = gateway_of(p);
  EXPECT_THROW(link_cases_to_features(plain_cases({"a"}), testsupport::golden_task("t"), gw, "m"),
               UnparseableError);
}

TEST(ValidateCases, FlagsEachViolation) {
  const auto task = testsupport::golden_task("t", 2);
  auto cases = plain_cases({"a", " ", "c"});
  cases[2].id = 5;
  cases[0].linked_features = {3};
  EXPECT_EQ(validate_cases(cases, task).size(), 3u);
}

TEST(CaseFile, RoundTrip) {
  const auto dir = testsupport::fresh_dir("casefile");
  CaseFile f{"t", plain_cases({"a", "b"}), "gpt-4o", "2026-01-01T00:00:00Z"};
  f.cases[1].linked_features = {1, 3};
  f.cases[1].origin = CaseOrigin::provided;
  save_case_file(f, dir / "cases.json");
  const auto back = load_case_file(dir / "cases.json");
  EXPECT_EQ(back.task_id, f.task_id);
  EXPECT_EQ(back.cases, f.cases);
  EXPECT_EQ(back.generator_model, f.generator_model);
  EXPECT_EQ(back.timestamp, f.timestamp);
}
