#include <cstdlib>
#include <random>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "appjudge/llmgateway.hpp"

using namespace appjudge;
using namespace appjudge::llmgateway;
using nlohmann::json;

namespace {

Gateway quiet_gateway(std::shared_ptr<ChatProvider> provider, ProviderConfig config = {}) {
  return Gateway(std::move(provider), std::move(config), [](std::chrono::duration<double>) {});
}

ChatRequest ask(const std::string& text) { return make_request("m", "", text); }

ChatResponse response(double cost, double latency) {
  ChatResponse r;
  r.cost = cost;
  r.latency_s = latency;
  return r;
}

constexpr const char* kVerdictSample = R"({
    "0": {"result": "Pass", "evidence": "The thumbnail click functionality is working correctly. When clicking on 'Digital Artwork 1' thumbnail, it successfully redirects to a properly formatted detail page containing the artwork's title, image, description, creation process, sharing options, and comments section."},
    "1": {"result": "Uncertain", "evidence": "Cannot verify price calculation accuracy as no pricing information is displayed"},
    "2": {"result": "Fail", "evidence": "After fully browsing and exploring the web page, I did not find the message board appearing on the homepage or any subpage."}
})";

}  // namespace

TEST(Complete, ScriptedYesCostsNothing) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push("Yes");
  auto gw = quiet_gateway(provider);
  const auto r = gw.complete(ask("Is it?"));
  EXPECT_EQ(r.text, "Yes");
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_GE(r.prompt_tokens, 0);
  EXPECT_GE(r.latency_s, 0.0);
}

TEST(Complete, TwoTransportErrorsThenSuccessOnThirdAttempt) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push(ScriptedProvider::Reply::fail(Errc::transport));
  provider->push(ScriptedProvider::Reply::fail(Errc::transport));
  provider->push("ok");
  std::vector<double> sleeps;
  ProviderConfig config;
  config.retry.max_attempts = 3;
  Gateway gw(provider, config, [&](std::chrono::duration<double> d) { sleeps.push_back(d.count()); });
  EXPECT_EQ(gw.complete(ask("x")).text, "ok");
  EXPECT_EQ(provider->calls(), 3);
  EXPECT_EQ(sleeps, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(gw.usage().call_count, 1);
}

TEST(Complete, SingleAttemptExhausts) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push(ScriptedProvider::Reply::fail(Errc::transport));
  ProviderConfig config;
  config.retry.max_attempts = 1;
  auto gw = quiet_gateway(provider, config);
  try {
    gw.complete(ask("x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::retries_exhausted);
  }
  EXPECT_EQ(provider->calls(), 1);
}

TEST(Complete, AuthenticationIsNotRetried) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push(ScriptedProvider::Reply::fail(Errc::authentication));
  provider->push("never");
  auto gw = quiet_gateway(provider);
  try {
    gw.complete(ask("x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::authentication);
  }
  EXPECT_EQ(provider->calls(), 1);
}

TEST(Complete, MalformedRequestRejected) {
  auto gw = quiet_gateway(std::make_shared<ScriptedProvider>());
  ChatRequest empty;
  empty.model_id = "m";
  EXPECT_THROW(gw.complete(empty), Error);
  ChatRequest assistant_image = ask("x");
  assistant_image.messages.push_back({Role::assistant, "y", {ImageAttachment{}}});
  EXPECT_FALSE(validate_request(assistant_image).empty());
}

TEST(Complete, PriceTableYieldsCost) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push("abcdefgh");  // 8 chars -> 2 estimated completion tokens
  ProviderConfig config;
  config.prices["m"] = {0.5, 2.0};
  auto gw = quiet_gateway(provider, config);
  const auto r = gw.complete(ask("x"));
  EXPECT_EQ(r.completion_tokens, 2);
  EXPECT_DOUBLE_EQ(r.cost, 0.5 * static_cast<double>(r.prompt_tokens) + 2.0 * 2);
}

TEST(Complete, RequestNotMutatedAndMockDeterministic) {
  auto make = [] {
    auto p = std::make_shared<ScriptedProvider>();
    p->on("alpha", std::vector<ScriptedProvider::Reply>{ScriptedProvider::Reply::ok("A1"),
                                                         ScriptedProvider::Reply::ok("A2")});
    p->push("S1");
    return p;
  };
  auto g1 = quiet_gateway(make());
  auto g2 = quiet_gateway(make());
  const auto req = ask("alpha beta");
  const auto copy = prompt_text(req);
  std::vector<std::string> a, b;
  for (int i = 0; i < 3; ++i) {
    a.push_back(g1.complete(req).text);
    b.push_back(g2.complete(req).text);
  }
  EXPECT_EQ(a, (std::vector<std::string>{"A1", "A2", "A2"}));
  EXPECT_EQ(a, b);
  EXPECT_EQ(prompt_text(req), copy);
  EXPECT_EQ(g1.complete(ask("gamma")).text, "S1");
}

TEST(ScriptedProvider, FromJson) {
  const auto p = ScriptedProvider::from_json(json::parse(
      R"({"schema_version":1,"sequence":["one",{"error":"transport"}],"rules":[{"match":"k","replies":[{"a":1}]}]})"));
  EXPECT_EQ(p->send(ask("k")).text, R"({"a":1})");
  EXPECT_EQ(p->send(ask("z")).text, "one");
  EXPECT_THROW(p->send(ask("z")), Error);
  EXPECT_THROW(p->send(ask("z")), Error);  // exhausted
}

TEST(Structured, StringList) {
  const auto v = extract_structured(R"(["check login", "check logout"])", Shape::string_list);
  EXPECT_EQ(v, json::array({"check login", "check logout"}));
  const auto fenced = extract_structured("Here:\n```json\n[\"a\"]\n```\nDone.", Shape::string_list);
  EXPECT_EQ(fenced, json::array({"a"}));
  const auto py = extract_structured("['a', \"b's\"]", Shape::string_list);
  EXPECT_EQ(py, json::array({"a", "b's"}));
}

TEST(Structured, VerdictMapSample) {
  const auto v = extract_structured(kVerdictSample, Shape::verdict_map);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v["0"]["result"], "Pass");
  EXPECT_EQ(v["1"]["result"], "Uncertain");
  EXPECT_EQ(v["2"]["result"], "Fail");
}

TEST(Structured, ShapeMismatchUnparseable) {
  EXPECT_THROW(extract_structured(R"({"0": {"evidence": "x"}})", Shape::verdict_map), UnparseableError);
  EXPECT_THROW(extract_structured(R"([1, 2])", Shape::string_list), UnparseableError);
  EXPECT_THROW(extract_structured(R"([{"score": "high"}])", Shape::feature_score_list), UnparseableError);
  EXPECT_EQ(extract_structured(R"({"0":[1,2],"1":3})", Shape::index_map).size(), 2u);
}

TEST(Structured, ProseOnlyUnparseableAfterRepair) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push("Sure! Here are the tests you asked for.");
  provider->push("Sure! Here are the tests, again.");
  auto gw = quiet_gateway(provider);
  try {
    gw.complete_structured(ask("x"), Shape::string_list);
    FAIL();
  } catch (const UnparseableError& e) {
    EXPECT_EQ(e.raw(), "Sure! Here are the tests, again.");
  }
  ASSERT_EQ(provider->calls(), 2);
  const auto second = provider->requests()[1];
  EXPECT_EQ(second.messages.size(), 3u);
  EXPECT_EQ(second.messages[1].role, Role::assistant);
}

TEST(Structured, RepairSucceeds) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push("no structure here");
  provider->push(R"(["a"])");
  auto gw = quiet_gateway(provider);
  EXPECT_EQ(gw.complete_structured(ask("x"), Shape::string_list), json::array({"a"}));
  EXPECT_EQ(gw.usage().call_count, 2);
}

TEST(Usage, Examples) {
  EXPECT_EQ(usage_summary({}), UsageSummary{});
  const std::vector<ChatResponse> two{response(0.10, 1), response(0.16, 1)};
  EXPECT_NEAR(usage_summary(two).total_cost, 0.26, 1e-12);
  const std::vector<ChatResponse> five(5, response(0, 60));
  const auto u = usage_summary(five);
  EXPECT_EQ(u.total_latency_s, 300.0);
  EXPECT_EQ(u.call_count, 5);
}

TEST(Usage, AdditiveOverConcatenation) {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> cents(0, 1000);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ChatResponse> a(rng() % 6), b(rng() % 6);
    for (auto* v : {&a, &b}) {
      for (auto& r : *v) {
        r = response(cents(rng) / 4.0, cents(rng) / 8.0);  // dyadic: sums are exact
        r.prompt_tokens = cents(rng);
        r.completion_tokens = cents(rng);
      }
    }
    auto ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    EXPECT_EQ(usage_summary(ab), usage_summary(a) + usage_summary(b));
  }
}

TEST(Usage, JsonRoundTrip) {
  UsageSummary u{0.25, 12.5, 3, 100, 40};
  EXPECT_EQ(usage_from_json(json::parse(usage_to_json(u).dump())), u);
}

TEST(Gateway, ForkKeepsSeparateLogs) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->push("a");
  provider->push("b");
  auto root = quiet_gateway(provider);
  auto child = root.fork();
  child.complete(ask("x"));
  root.complete(ask("x"));
  EXPECT_EQ(child.usage().call_count, 1);
  EXPECT_EQ(root.usage().call_count, 1);
}

TEST(Gateway, ConcurrentCallsAllAccounted) {
  auto provider = std::make_shared<ScriptedProvider>();
  provider->on("q", "r");
  auto gw = quiet_gateway(provider);
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&] {
        for (int i = 0; i < 25; ++i) gw.complete(ask("q"));
      });
    }
  }
  EXPECT_EQ(gw.usage().call_count, 200);
}

class HttpProviderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = json::parse(req.body);
      if (++hits_ <= fail_first_) {
        res.status = 503;
        return;
      }
      res.set_content(
          R"({"choices":[{"message":{"role":"assistant","content":"Pass"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}})",
          "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::jthread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    ::setenv("APPJUDGE_TEST_KEY", "sk-test", 1);
  }
  void TearDown() override {
    server_.stop();
    ::unsetenv("APPJUDGE_TEST_KEY");
  }

  ProviderConfig config() const {
    ProviderConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    c.credential_env = "APPJUDGE_TEST_KEY";
    c.prices["gpt-test"] = {0.01, 0.1};
    c.timeout_s = 5;
    return c;
  }

  httplib::Server server_;
  std::jthread thread_;
  int port_ = 0;
  int fail_first_ = 0;
  std::atomic<int> hits_{0};
  std::string last_auth_;
  json last_body_;
};

TEST_F(HttpProviderTest, SendsBearerAndParsesUsage) {
  auto gw = quiet_gateway(std::make_shared<HttpProvider>(config()), config());
  auto req = make_request("gpt-test", "sys", "hello");
  req.messages[1].images.push_back({"image/png", "PNG", false});
  const auto r = gw.complete(req);
  EXPECT_EQ(r.text, "Pass");
  EXPECT_EQ(r.prompt_tokens, 12);
  EXPECT_EQ(r.completion_tokens, 3);
  EXPECT_DOUBLE_EQ(r.cost, 12 * 0.01 + 3 * 0.1);
  EXPECT_EQ(last_auth_, "Bearer sk-test");
  EXPECT_EQ(last_body_["model"], "gpt-test");
  EXPECT_EQ(last_body_["temperature"], 0.0);
  EXPECT_EQ(last_body_["messages"][0]["role"], "system");
  EXPECT_EQ(last_body_["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,UE5H");
}

TEST_F(HttpProviderTest, ServerErrorsAreRetried) {
  fail_first_ = 2;
  auto gw = quiet_gateway(std::make_shared<HttpProvider>(config()), config());
  EXPECT_EQ(gw.complete(make_request("gpt-test", "", "x")).text, "Pass");
  EXPECT_EQ(hits_.load(), 3);
}

TEST_F(HttpProviderTest, MissingCredentialIsAuthenticationError) {
  ::unsetenv("APPJUDGE_TEST_KEY");
  auto gw = quiet_gateway(std::make_shared<HttpProvider>(config()), config());
  try {
    gw.complete(make_request("gpt-test", "", "x"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::authentication);
  }
  EXPECT_EQ(hits_.load(), 0);
}
