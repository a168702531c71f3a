#include <random>

#include <gtest/gtest.h>

#include "../support/golden.hpp"
#include "appjudge/judge.hpp"

using namespace appjudge;
using namespace appjudge::judge;
using nlohmann::json;
using llmgateway::ScriptedProvider;

namespace {

constexpr const char* kVerdictSample = R"({
    "0": {"result": "Pass", "evidence": "The thumbnail click functionality is working correctly. When clicking on 'Digital Artwork 1' thumbnail, it successfully redirects to a properly formatted detail page containing the artwork's title, image, description, creation process, sharing options, and comments section."},
    "1": {"result": "Uncertain", "evidence": "Cannot verify price calculation accuracy as no pricing information is displayed"},
    "2": {"result": "Fail", "evidence": "After fully browsing and exploring the web page, I did not find the message board appearing on the homepage or any subpage."}
})";

std::vector<testgen::TestCase> cases(int n) {
  std::vector<testgen::TestCase> out;
  for (int i = 0; i < n; ++i) out.push_back({i, "check " + std::to_string(i), {}, testgen::CaseOrigin::generated});
  return out;
}

llmgateway::Gateway scripted(std::vector<std::string> replies, std::shared_ptr<ScriptedProvider>* out = nullptr) {
  auto p = std::make_shared<ScriptedProvider>();
  for (auto& r : replies) p->push(std::move(r));
  if (out) *out = p;
  return llmgateway::Gateway(p, {}, [](std::chrono::duration<double>) {});
}

}  // namespace

TEST(ParseFinalReport, SampleMap) {
  const auto m = parse_final_report(kVerdictSample);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.at(0).result, Outcome::Pass);
  EXPECT_EQ(m.at(1).result, Outcome::Uncertain);
  EXPECT_EQ(m.at(2).result, Outcome::Fail);
  EXPECT_EQ(m.at(0).evidence.rfind("The thumbnail click functionality is working correctly.", 0), 0u);
  EXPECT_EQ(m.at(1).evidence, "Cannot verify price calculation accuracy as no pricing information is displayed");
}

TEST(ParseFinalReport, EmptyAndWrapped) {
  EXPECT_TRUE(parse_final_report("{}").empty());
  const auto fenced = parse_final_report("```json\n{\"3\": {\"result\": \"pass\", \"evidence\": \"e\"}}\n```");
  EXPECT_EQ(fenced.at(3).result, Outcome::Pass);
  const auto wrapped = parse_final_report(R"(({"0": {"result": "FAIL.", "evidence": "e"}}))");
  EXPECT_EQ(wrapped.at(0).result, Outcome::Fail);
}

TEST(ParseFinalReport, UnknownTokenNamed) {
  try {
    parse_final_report(R"({"0": {"result": "Maybe", "evidence": "x"}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_token);
    EXPECT_NE(std::string(e.what()).find("Maybe"), std::string::npos);
  }
  EXPECT_THROW(parse_final_report("the app works"), UnparseableError);
}

TEST(ParseFinalReport, RenderRoundTripIsIdentity) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    ReportMap m;
    const int n = static_cast<int>(rng() % 25);
    for (int i = 0; i < n; ++i) {
      m[static_cast<int>(rng() % 40)] = {static_cast<Outcome>(rng() % 3), "evidence \"" + std::to_string(rng() % 1000) + "\"\n"};
    }
    EXPECT_EQ(parse_final_report(render_final_report(m)), m);
  }
}

TEST(MergeReports, LaterOverridesAndBadSkipped) {
  const std::vector<std::string> payloads{R"({"0": {"result": "Fail", "evidence": "first"}})", "not json",
                                          R"({"0": {"result": "Pass", "evidence": "second"}, "1": {"result": "Fail", "evidence": "b"}})"};
  std::vector<std::string> warnings;
  const auto m = merge_reports(payloads, warnings);
  EXPECT_EQ(m.at(0), (ReportEntry{Outcome::Pass, "second"}));
  EXPECT_EQ(m.at(1).result, Outcome::Fail);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(NormalizeVerdicts, FullCoverage) {
  std::vector<std::string> warnings;
  const auto v = normalize_verdicts(parse_final_report(kVerdictSample), cases(3), warnings);
  ASSERT_EQ(v.size(), 3u);
  for (const auto& x : v) EXPECT_EQ(x.provenance, Provenance::agent_report);
  EXPECT_TRUE(warnings.empty());
}

TEST(NormalizeVerdicts, MissingBecomeUncertain) {
  std::vector<std::string> warnings;
  const auto v = normalize_verdicts({{0, {Outcome::Pass, "ok"}}}, cases(3), warnings);
  ASSERT_EQ(v.size(), 3u);
  for (int i : {1, 2}) {
    EXPECT_EQ(v[i].case_id, i);
    EXPECT_EQ(v[i].result, Outcome::Uncertain);
    EXPECT_EQ(v[i].provenance, Provenance::fill_missing);
  }
}

TEST(NormalizeVerdicts, ExtraKeyDropped) {
  std::vector<std::string> warnings;
  ReportMap m = parse_final_report(kVerdictSample);
  m[7] = {Outcome::Pass, "x"};
  const auto v = normalize_verdicts(m, cases(3), warnings);
  EXPECT_EQ(v.size(), 3u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find('7'), std::string::npos);
}

TEST(NormalizeVerdicts, LengthAlwaysEqualsCaseCount) {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    ReportMap m;
    for (int i = 0, n = static_cast<int>(rng() % 30); i < n; ++i) m[static_cast<int>(rng() % 30)] = {Outcome::Fail, "e"};
    const int k = static_cast<int>(rng() % 20);
    std::vector<std::string> warnings;
    const auto v = normalize_verdicts(m, cases(k), warnings);
    ASSERT_EQ(static_cast<int>(v.size()), k);
    for (int i = 0; i < k; ++i) {
      EXPECT_EQ(v[i].case_id, i);
      if (v[i].provenance != Provenance::fill_missing) EXPECT_FALSE(v[i].evidence.empty());
    }
  }
}

TEST(JudgeCase, Replies) {
  auto yes = scripted({"Yes"});
  EXPECT_EQ(judge_case("check login", "login works", yes, "m"), JudgeAnswer::Yes);
  auto no = scripted({" no. "});
  EXPECT_EQ(judge_case("check login", "login broken", no, "m"), JudgeAnswer::No);
  std::shared_ptr<ScriptedProvider> p;
  auto vague = scripted({"It depends", "It depends"}, &p);
  EXPECT_EQ(judge_case("check login", "unclear", vague, "m"), JudgeAnswer::Uncertain);
  EXPECT_EQ(p->calls(), 2);
  auto repaired = scripted({"Well...", "\"Yes\""});
  EXPECT_EQ(judge_case("check login", "ok", repaired, "m"), JudgeAnswer::Yes);
  EXPECT_THROW(judge_case("", "x", yes, "m"), Error);
}

TEST(JudgeCase, PromptInterpolatesBothTexts) {
  const auto prompt = build_judgement_prompt("Click the logo", "Logo opens the home page");
  EXPECT_NE(prompt.find("Test Case Description: Click the logo"), std::string::npos);
  EXPECT_NE(prompt.find("Model Result: Logo opens the home page"), std::string::npos);
  EXPECT_EQ(prompt.find("[task_desc]"), std::string::npos);
}

TEST(JudgeCase, TotalOverArbitraryReplies) {
  std::mt19937 rng(2);
  const std::string alphabet = "yesnoYESNOuncertain .!?,xyz";
  for (int trial = 0; trial < 100; ++trial) {
    std::string a, b;
    for (int i = 0, n = static_cast<int>(rng() % 12); i < n; ++i) a += alphabet[rng() % alphabet.size()];
    for (int i = 0, n = static_cast<int>(rng() % 12); i < n; ++i) b += alphabet[rng() % alphabet.size()];
    auto gw = scripted({a, b});
    const auto answer = judge_case("c", "r", gw, "m");
    EXPECT_TRUE(answer == JudgeAnswer::Yes || answer == JudgeAnswer::No || answer == JudgeAnswer::Uncertain);
  }
  EXPECT_EQ(to_outcome(JudgeAnswer::Yes), Outcome::Pass);
  EXPECT_EQ(to_outcome(JudgeAnswer::No), Outcome::Fail);
  EXPECT_EQ(to_outcome(JudgeAnswer::Uncertain), Outcome::Uncertain);
}

TEST(Rejudge, UsesTraceEvidence) {
  executor::Trace trace;
  trace.steps.push_back({0, "try", envdriver::RunAction{"click(#a)"}, {true, "executed 1 statement", {}}, 1, std::nullopt});
  std::shared_ptr<ScriptedProvider> p;
  auto gw = scripted({"No", "Yes"}, &p);
  const ReportMap report{{0, {Outcome::Pass, "claimed"}}};
  const auto v = rejudge(cases(2), report, trace, gw, "m");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].result, Outcome::Fail);
  EXPECT_EQ(v[1].result, Outcome::Pass);
  for (const auto& x : v) EXPECT_EQ(x.provenance, Provenance::llm_judgment);
  const auto first = llmgateway::prompt_text(p->requests()[0]);
  EXPECT_NE(first.find("Reported evidence: claimed"), std::string::npos);
  const auto second = llmgateway::prompt_text(p->requests()[1]);
  EXPECT_NE(second.find("Run: click(#a)"), std::string::npos);
  EXPECT_EQ(case_evidence(5, report, trace), "The tester reported no result and recorded no steps for this test case.");
}

TEST(FailureMode, ClassifiedFromReply) {
  const CaseVerdict audio{0, Outcome::Fail, "no audio device available to verify playback", Provenance::agent_report, {}};
  auto a = scripted({"missing_information"});
  EXPECT_EQ(classify_failure_mode(audio, "Verify that audio playback for quiz words functions correctly.", "", a, "m"),
            FailureMode::missing_information);
  const CaseVerdict songs{1, Outcome::Pass, "the playlist has 3 songs, within 10-15", Provenance::agent_report, {}};
  auto b = scripted({"Model hallucination."});
  auto wrong = songs;
  wrong.result = Outcome::Uncertain;
  EXPECT_EQ(classify_failure_mode(wrong, "Test if the generated playlist contains between 10-15 songs.", "", b, "m"),
            FailureMode::model_hallucination);
  try {
    classify_failure_mode(songs, "x", "", b, "m");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::precondition);
  }
  auto c = scripted({"no idea"});
  EXPECT_EQ(classify_failure_mode(audio, "x", "", c, "m"), FailureMode::none);
}

TEST(FailureMode, PromptCarriesVerdictAndTaxonomy) {
  const CaseVerdict v{3, Outcome::Fail, "no audio device", Provenance::agent_report, {}};
  const auto prompt = build_failure_mode_prompt(v, "Play the word audio", "- Run: click(#play) -> ok");
  for (const auto* s : {"no audio device", "Play the word audio", "click(#play)", "missing_information",
                        "real_time_feedback_needed", "standard_understanding_mismatch"}) {
    EXPECT_NE(prompt.find(s), std::string::npos) << s;
  }
}

TEST(VerdictFile, RoundTrip) {
  const auto dir = testsupport::fresh_dir("verdicts");
  VerdictFile f{"t", JudgePath::rejudge,
                {{0, Outcome::Pass, "e", Provenance::llm_judgment, std::nullopt},
                 {1, Outcome::Uncertain, "", Provenance::fill_missing, FailureMode::missing_information}},
                {"w"}};
  save_verdicts(f, dir / "v.json");
  EXPECT_EQ(load_verdicts(dir / "v.json"), f);
}
