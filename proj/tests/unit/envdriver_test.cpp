#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "../support/golden.hpp"
#include "appjudge/envdriver.hpp"

using namespace appjudge;
using namespace appjudge::envdriver;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kSim = fs::path(APPJUDGE_FIXTURES) / "sim";

SimAppSpec link_tree() { return load_sim_spec(kSim / "link-tree.json"); }

int count_role(const std::string& tree, const std::string& role) {
  int n = 0;
  for (auto pos = tree.find("<" + role + " "); pos != std::string::npos; pos = tree.find("<" + role + " ", pos + 1)) ++n;
  return n;
}

SimAppSpec tiny_spec() {
  SimAppSpec spec;
  spec.start_page = "home";
  SimElement go{"go", "button", "Go", std::nullopt, std::nullopt, 0.0, {}};
  go.behaviors.push_back({Trigger::click, std::nullopt, {NavigateEffect{"about"}}, {}});
  spec.pages["home"] = SimPage{"Home", {go}, 1, {}};
  spec.pages["about"] = SimPage{"About", {}, 1, {}};
  return spec;
}

}  // namespace

TEST(SimSession, StartsAtStartPage) {
  auto s = open_session(tiny_spec());
  EXPECT_EQ(s->observe().location, "home");
  EXPECT_TRUE(s->is_open());
}

TEST(SimSession, DanglingTransitionIsInvalidSpec) {
  auto spec = tiny_spec();
  spec.pages.erase("about");
  try {
    open_session(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_spec);
    EXPECT_NE(std::string(e.what()).find("about"), std::string::npos);
  }
  auto bad_flag = tiny_spec();
  bad_flag.pages["home"].elements[0].behaviors[0].feature = 4;
  EXPECT_FALSE(validate_sim_spec(bad_flag).empty());
  auto bad_start = tiny_spec();
  bad_start.start_page = "nowhere";
  EXPECT_FALSE(validate_sim_spec(bad_start).empty());
}

TEST(SimSession, LinkTreeShowsFiveButtons) {
  const auto spec = link_tree();
  int declared = 0;
  for (const auto& el : spec.pages.at("home").elements) {
    if (el.role == "button" && el.min_scroll == 0.0 && (!el.feature || spec.feature_flags.at(*el.feature))) ++declared;
  }
  auto s = open_session(spec);
  EXPECT_EQ(count_role(s->observe().a11y_tree, "button"), declared);
  EXPECT_EQ(declared, 5);
}

TEST(SimSession, ScrollBottomIsOne) {
  auto s = open_session(link_tree());
  EXPECT_EQ(s->observe().scroll_position, 0.0);
  const auto out = s->apply(RunAction{"scroll(down)"});
  EXPECT_EQ(out.observation_after.scroll_position, 0.25);
  EXPECT_EQ(s->apply(RunAction{"scroll(bottom)"}).observation_after.scroll_position, 1.0);
  EXPECT_NE(s->observe().a11y_tree.find("id=\"footer\""), std::string::npos);
  EXPECT_EQ(s->apply(RunAction{"scroll(down)"}).observation_after.scroll_position, 1.0);
  EXPECT_EQ(s->apply(RunAction{"scroll(top)"}).observation_after.scroll_position, 0.0);
}

TEST(SimSession, ClosedSessionRejectsEverything) {
  auto s = open_session(link_tree());
  const auto out = s->apply(StopAction{});
  EXPECT_TRUE(out.ok);
  EXPECT_EQ(out.observation_after.location, "home");
  EXPECT_FALSE(s->is_open());
  for (auto call : {0, 1}) {
    try {
      if (call == 0) s->observe();
      else s->apply(RunAction{"scroll(down)"});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::session_closed);
    }
  }
}

TEST(SimSession, ThemeToggleShowsDark) {
  auto s = open_session(link_tree());
  EXPECT_NE(s->observe().a11y_tree.find(R"(<state name="theme" value="light"/>)"), std::string::npos);
  const auto out = s->apply(RunAction{"click(#theme-toggle)"});
  EXPECT_TRUE(out.ok) << out.detail;
  EXPECT_NE(out.observation_after.a11y_tree.find(R"(<state name="theme" value="dark"/>)"), std::string::npos);
}

TEST(SimSession, DisabledFlagGivesNoEffect) {
  auto s = open_session(link_tree());
  const auto before = s->observe();
  const auto out = s->apply(RunAction{"click(#tag-code)"});
  EXPECT_TRUE(out.ok);
  EXPECT_EQ(out.observation_after.a11y_tree.find("filter"), std::string::npos);
  EXPECT_EQ(out.observation_after.a11y_tree, before.a11y_tree);
}

TEST(SimSession, MissingElementLeavesObservationUnchanged) {
  auto s = open_session(link_tree());
  const auto before = s->observe();
  const auto out = s->apply(RunAction{"click(#missing)"});
  EXPECT_FALSE(out.ok);
  EXPECT_NE(out.detail.find("element not found"), std::string::npos);
  EXPECT_EQ(out.observation_after, before);
}

TEST(SimSession, RunStopsAtFirstFailure) {
  auto s = open_session(link_tree());
  const auto out = s->apply(RunAction{"click(#theme-toggle); click(#missing); click(#theme-toggle)"});
  EXPECT_FALSE(out.ok);
  EXPECT_NE(out.detail.find("statement 2"), std::string::npos);
  EXPECT_NE(out.observation_after.a11y_tree.find(R"(value="dark")"), std::string::npos);
}

TEST(SimSession, TellAndObserveDoNotChangeState) {
  auto s = open_session(link_tree());
  s->apply(RunAction{"click(#theme-toggle)"});
  const auto before = s->observe();
  EXPECT_EQ(s->observe(), before);
  const auto out = s->apply(TellAction{R"({"0": {"result": "Pass", "evidence": "x"}})"});
  EXPECT_TRUE(out.ok);
  EXPECT_EQ(out.observation_after, before);
  ASSERT_EQ(s->transcript().size(), 1u);
  EXPECT_EQ(s->transcript()[0], R"({"0": {"result": "Pass", "evidence": "x"}})");
}

TEST(SimSession, OpenAcceptsAppNameOnly) {
  auto s = open_session(link_tree());
  s->apply(RunAction{"click(#theme-toggle)"});
  EXPECT_FALSE(s->apply(OpenAction{"terminal"}).ok);
  const auto out = s->apply(OpenAction{"link-tree"});
  EXPECT_TRUE(out.ok);
  EXPECT_NE(out.observation_after.a11y_tree.find(R"(value="light")"), std::string::npos);
}

TEST(SimSession, DeterministicAcrossSessions) {
  const std::vector<ActionCommand> actions{
      RunAction{"click(#theme-toggle)"}, RunAction{"scroll(bottom)"},  RunAction{"click(#missing)"},
      TellAction{"{}"},                   RunAction{"click(#qr-button)"}, RunAction{"click(#link-blog)"},
      OpenAction{"app"},                  StopAction{}};
  auto a = open_session(link_tree());
  auto b = open_session(link_tree());
  for (const auto& act : actions) {
    const auto x = a->apply(act);
    const auto y = b->apply(act);
    EXPECT_EQ(x, y);
    EXPECT_EQ(x.observation_after.screenshot, y.observation_after.screenshot);
  }
}

TEST(SimSession, TypeEchoesValue) {
  auto spec = tiny_spec();
  SimElement box{"q", "textbox", "Search", std::nullopt, std::nullopt, 0.0, {}};
  box.behaviors.push_back({Trigger::type, std::nullopt, {SetMarkerEffect{"query", "$input"}}, {}});
  spec.pages["home"].elements.push_back(box);
  auto s = open_session(spec);
  const auto out = s->apply(RunAction{R"(type(#q, "hello \"you\""))"});
  ASSERT_TRUE(out.ok) << out.detail;
  EXPECT_NE(out.observation_after.a11y_tree.find(R"(value="hello &quot;you&quot;")"), std::string::npos);
}

TEST(SimSpec, JsonRoundTripAndGroundTruth) {
  const auto spec = link_tree();
  EXPECT_EQ(sim_spec_from_json(json::parse(sim_spec_to_json(spec).dump())), spec);
  EXPECT_DOUBLE_EQ(ground_truth_quality(spec, 5), 0.6);
  const auto labels = ground_truth_labels(spec, taskmodel::load_task(fs::path(APPJUDGE_FIXTURES) / "tasks" / "link-tree" / "task.json"));
  EXPECT_DOUBLE_EQ(taskmodel::human_quality(labels), 0.6);
}

TEST(Script, ParsesGrammar) {
  const auto stmts = parse_script(R"( click(#a) ; type(#b, "x;y") ;press(Enter);scroll(bottom); navigate(about) )");
  ASSERT_EQ(stmts.size(), 5u);
  EXPECT_EQ(std::get<ClickStmt>(stmts[0]).selector, "#a");
  EXPECT_EQ(std::get<TypeStmt>(stmts[1]).text, "x;y");
  EXPECT_EQ(std::get<PressStmt>(stmts[2]).key, "Enter");
  EXPECT_EQ(std::get<ScrollStmt>(stmts[3]).target, ScrollTarget::bottom);
  EXPECT_EQ(std::get<NavigateStmt>(stmts[4]).target, "about");
  for (const auto& s : stmts) EXPECT_EQ(parse_script(format_statement(s)).front(), s);
}

TEST(Script, ErrorsCarryPosition) {
  struct Case {
    const char* script;
    std::size_t position;
  };
  for (const auto& [script, position] : {Case{"click(#a) click(#b)", 10}, Case{"hover(#a)", 0},
                                         Case{"scroll(sideways)", 7}, Case{"type(#a, \"x", 11}}) {
    try {
      parse_script(script);
      ADD_FAILURE() << script;
    } catch (const ScriptParseError& e) {
      EXPECT_EQ(e.position(), position) << script << ": " << e.what();
      EXPECT_EQ(e.code(), Errc::script_parse);
    }
  }
  EXPECT_THROW(parse_script("   "), ScriptParseError);
}

TEST(Script, ParseErrorIsFailedOutcome) {
  auto s = open_session(link_tree());
  const auto before = s->observe();
  const auto out = s->apply(RunAction{"click(#a"});
  EXPECT_FALSE(out.ok);
  EXPECT_NE(out.detail.find("position"), std::string::npos);
  EXPECT_EQ(out.observation_after, before);
}

TEST(Action, FormatAndParse) {
  EXPECT_EQ(format_action(RunAction{"scroll(down)"}), "Run: scroll(down)");
  EXPECT_EQ(format_action(StopAction{}), "Stop");
  EXPECT_EQ(make_action("open", "app"), ActionCommand{OpenAction{"app"}});
  EXPECT_EQ(make_action("Jump", "x"), std::nullopt);
  EXPECT_FALSE(validate_action(RunAction{""}).empty());
  const ActionCommand tell = TellAction{"{}"};
  EXPECT_EQ(action_from_json(json::parse(action_to_json(tell).dump())), tell);
}

TEST(RealDriver, RefusedConnectionIsUnreachable) {
  RealDriverSettings settings;
  settings.timeout_s = 1;
  try {
    open_session(taskmodel::make_project("t", "http://127.0.0.1:1/"), settings);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unreachable);
  }
}

TEST(RealDriver, DirectoryWithoutDeployHintRefused) {
  RealDriverSettings settings;
  settings.app_url = "http://127.0.0.1:1/";
  try {
    open_session(taskmodel::make_project("t", "/tmp"), settings);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::precondition);
  }
}

// Minimal W3C WebDriver endpoint plus an application page on the same port.
class FakeWebDriver : public ::testing::Test {
 protected:
  static constexpr const char* kKey = "element-6066-11e4-a52e-4f735466cecf";

  void SetUp() override {
    server_.Get("/app/index.html", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("<html></html>", "text/html");
    });
    server_.Get("/wd/status", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"value":{"ready":true}})", "application/json");
    });
    server_.Post("/wd/session", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"value":{"sessionId":"s1","capabilities":{}}})", "application/json");
    });
    server_.Post("/wd/session/s1/window/rect", [this](const httplib::Request& req, httplib::Response& res) {
      rect_ = json::parse(req.body);
      ok(res, nullptr);
    });
    server_.Post("/wd/session/s1/url", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      url_ = json::parse(req.body).at("url").get<std::string>();
      ok(res, nullptr);
    });
    server_.Get("/wd/session/s1/url", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      ok(res, url_);
    });
    server_.Get("/wd/session/s1/screenshot", [](const httplib::Request&, httplib::Response& res) { ok(res, "iVBORw0KGgo="); });
    server_.Post("/wd/session/s1/execute/sync", [this](const httplib::Request& req, httplib::Response& res) {
      const auto script = json::parse(req.body).at("script").get<std::string>();
      std::lock_guard lock(mutex_);
      if (script.find("scrollTo(0, document") != std::string::npos) scroll_ = 1.0;
      ok(res, {{"title", "Fake"},
               {"scroll", scroll_},
               {"elements", {{{"role", "button"}, {"id", "ok"}, {"label", "OK"}, {"x", 1}, {"y", 2}, {"w", 3}, {"h", 4}}}}});
    });
    server_.Post("/wd/session/s1/element", [](const httplib::Request& req, httplib::Response& res) {
      if (json::parse(req.body).at("value") == "#ok") {
        ok(res, {{kKey, "e1"}});
      } else {
        res.status = 404;
        res.set_content(R"({"value":{"error":"no such element","message":"none"}})", "application/json");
      }
    });
    server_.Post("/wd/session/s1/element/e1/click", [this](const httplib::Request&, httplib::Response& res) {
      ++clicks_;
      ok(res, nullptr);
    });
    server_.Delete("/wd/session/s1", [this](const httplib::Request&, httplib::Response& res) {
      ++deletes_;
      ok(res, nullptr);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::jthread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override { server_.stop(); }

  static void ok(httplib::Response& res, const json& value) {
    res.set_content(json{{"value", value}}.dump(), "application/json");
  }

  std::string origin() const { return "http://127.0.0.1:" + std::to_string(port_); }

  RealDriverSettings settings() const {
    RealDriverSettings s;
    s.webdriver_url = origin() + "/wd";
    s.timeout_s = 5;
    s.open_whitelist["docs"] = origin() + "/app/docs.html";
    return s;
  }

  httplib::Server server_;
  std::jthread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::string url_;
  double scroll_ = 0.0;
  json rect_;
  std::atomic<int> clicks_{0};
  std::atomic<int> deletes_{0};
};

TEST_F(FakeWebDriver, DrivesSessionThroughProtocol) {
  const auto app = origin() + "/app/index.html";
  auto s = open_session(taskmodel::make_project("t", app), settings());
  EXPECT_EQ(rect_, (json{{"width", 1280}, {"height", 800}}));

  const auto first = s->observe();
  EXPECT_EQ(first.location, app);
  EXPECT_TRUE(first.screenshot_base64);
  EXPECT_EQ(first.screenshot_media_type, "image/png");
  EXPECT_NE(first.a11y_tree.find(R"(<button id="ok" label="OK" x="1" y="2" w="3" h="4"/>)"), std::string::npos);

  EXPECT_TRUE(s->apply(RunAction{"click(#ok)"}).ok);
  EXPECT_EQ(clicks_.load(), 1);
  const auto missing = s->apply(RunAction{"click(#nope)"});
  EXPECT_FALSE(missing.ok);
  EXPECT_NE(missing.detail.find("element not found"), std::string::npos);

  EXPECT_EQ(s->apply(RunAction{"scroll(bottom)"}).observation_after.scroll_position, 1.0);

  EXPECT_FALSE(s->apply(RunAction{"navigate(http://example.com/)"}).ok);
  EXPECT_TRUE(s->apply(RunAction{"navigate(other.html)"}).ok);
  EXPECT_EQ(s->observe().location, origin() + "/app/other.html");

  EXPECT_FALSE(s->apply(OpenAction{"terminal"}).ok);
  EXPECT_TRUE(s->apply(OpenAction{"docs"}).ok);
  EXPECT_EQ(s->observe().location, origin() + "/app/docs.html");
  EXPECT_TRUE(s->apply(OpenAction{"app"}).ok);
  EXPECT_EQ(s->observe().location, app);

  s->apply(TellAction{"{}"});
  EXPECT_EQ(s->transcript().size(), 1u);
  EXPECT_TRUE(s->apply(StopAction{}).ok);
  EXPECT_FALSE(s->is_open());
  EXPECT_EQ(deletes_.load(), 1);
  EXPECT_THROW(s->observe(), Error);
}

TEST_F(FakeWebDriver, UnreachableWebDriverEndpoint) {
  auto s = settings();
  s.webdriver_url = "http://127.0.0.1:1";
  s.timeout_s = 1;
  try {
    open_session(taskmodel::make_project("t", origin() + "/app/index.html"), s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unreachable);
  }
}
