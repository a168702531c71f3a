#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "appjudge/error.hpp"
#include "appjudge/taskmodel.hpp"

namespace appjudge::envdriver {

/// Composite view of the application after an action.
struct Observation {
  std::string screenshot;  // PNG (base64) from a real browser, text render in simulation
  std::string screenshot_media_type = "text/plain";
  bool screenshot_base64 = false;
  std::string a11y_tree;  // XML-like element tree
  std::string location;   // URL, or page id in simulation
  double scroll_position = 0.0;
  double timestamp = 0.0;  // wall seconds (real) or logical clock (simulated)

  bool operator==(const Observation&) const = default;
};

nlohmann::ordered_json observation_to_json(const Observation& obs);
Observation observation_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Action space

struct OpenAction {
  std::string app_name;
  bool operator==(const OpenAction&) const = default;
};
struct RunAction {
  std::string script;
  bool operator==(const RunAction&) const = default;
};
struct TellAction {
  std::string payload;
  bool operator==(const TellAction&) const = default;
};
struct StopAction {
  bool operator==(const StopAction&) const = default;
};

using ActionCommand = std::variant<OpenAction, RunAction, TellAction, StopAction>;

std::string_view action_name(const ActionCommand& action);
std::string action_argument(const ActionCommand& action);

/// `Name: argument`, or `Stop`.
std::string format_action(const ActionCommand& action);

/// Builds an action from its name (case-insensitive) and argument text.
std::optional<ActionCommand> make_action(std::string_view name, std::string_view argument);

std::vector<std::string> validate_action(const ActionCommand& action);

nlohmann::ordered_json action_to_json(const ActionCommand& action);
ActionCommand action_from_json(const nlohmann::json& doc);

struct ActionOutcome {
  bool ok = false;
  std::string detail;
  Observation observation_after;

  bool operator==(const ActionOutcome&) const = default;
};

// ---------------------------------------------------------------------------
// Interaction scripts: click(sel); type(sel, "text"); press(key);
// scroll(up|down|top|bottom); navigate(page_id)

enum class ScrollTarget { up, down, top, bottom };

struct ClickStmt {
  std::string selector;
  bool operator==(const ClickStmt&) const = default;
};
struct TypeStmt {
  std::string selector;
  std::string text;
  bool operator==(const TypeStmt&) const = default;
};
struct PressStmt {
  std::string key;
  bool operator==(const PressStmt&) const = default;
};
struct ScrollStmt {
  ScrollTarget target = ScrollTarget::down;
  bool operator==(const ScrollStmt&) const = default;
};
struct NavigateStmt {
  std::string target;
  bool operator==(const NavigateStmt&) const = default;
};

using Statement = std::variant<ClickStmt, TypeStmt, PressStmt, ScrollStmt, NavigateStmt>;

class ScriptParseError : public Error {
 public:
  ScriptParseError(std::size_t position, const std::string& message)
      : Error(Errc::script_parse, message), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Semicolon-separated statements. Throws ScriptParseError with the byte
/// offset of the offending character.
std::vector<Statement> parse_script(std::string_view script);

std::string format_statement(const Statement& stmt);

// ---------------------------------------------------------------------------
// Sessions

/// One live connection to an application. Not shared across threads.
class DriverSession {
 public:
  virtual ~DriverSession() = default;

  /// Current composite observation. Throws Error{session_closed}.
  virtual Observation observe() = 0;

  /// Always returns an observation. Throws Error{session_closed} when the
  /// session has already been stopped.
  virtual ActionOutcome apply(const ActionCommand& action) = 0;

  virtual bool is_open() const = 0;

  /// Tell payloads in emission order.
  const std::vector<std::string>& transcript() const { return transcript_; }

 protected:
  std::vector<std::string> transcript_;
};

// ---------------------------------------------------------------------------
// Simulated application

struct NavigateEffect {
  std::string page;
  bool operator==(const NavigateEffect&) const = default;
};
/// Sets a state marker; a value of "$input" takes the text just typed.
struct SetMarkerEffect {
  std::string name;
  std::string value;
  bool operator==(const SetMarkerEffect&) const = default;
};
/// Flips a marker between two values (first value when unset).
struct ToggleMarkerEffect {
  std::string name;
  std::string first;
  std::string second;
  bool operator==(const ToggleMarkerEffect&) const = default;
};

using Effect = std::variant<NavigateEffect, SetMarkerEffect, ToggleMarkerEffect>;

enum class Trigger { click, type };

/// What happens when an element is clicked or typed into. When `feature` is
/// set and that flag is off, `broken_effects` run instead (default: nothing).
struct Behavior {
  Trigger trigger = Trigger::click;
  std::optional<int> feature;
  std::vector<Effect> effects;
  std::vector<Effect> broken_effects;
  bool operator==(const Behavior&) const = default;
};

struct MarkerCondition {
  std::string marker;
  std::string equals;
  bool operator==(const MarkerCondition&) const = default;
};

struct SimElement {
  std::string id;
  std::string role;
  std::string label;
  std::optional<int> feature;  // element exists only while this flag is on
  std::optional<MarkerCondition> shown_if;
  double min_scroll = 0.0;  // hidden until scrolled at least this far
  std::vector<Behavior> behaviors;
  bool operator==(const SimElement&) const = default;
};

struct SimPage {
  std::string title;
  std::vector<SimElement> elements;
  int scroll_steps = 1;  // scroll(down) moves by 1/scroll_steps
  std::map<std::string, std::vector<Behavior>> key_bindings;
  bool operator==(const SimPage&) const = default;
};

struct SimAppSpec {
  std::string app_name = "app";
  std::map<std::string, SimPage> pages;
  std::string start_page;
  std::map<int, bool> feature_flags;  // feature index -> implemented
  std::map<std::string, std::string> initial_markers;
  bool operator==(const SimAppSpec&) const = default;
};

std::vector<std::string> validate_sim_spec(const SimAppSpec& spec);

SimAppSpec sim_spec_from_json(const nlohmann::json& doc);
nlohmann::ordered_json sim_spec_to_json(const SimAppSpec& spec);
SimAppSpec load_sim_spec(const std::filesystem::path& path);
void save_sim_spec(const SimAppSpec& spec, const std::filesystem::path& path);

/// Fraction of declared flags that are enabled, over `n_features`.
double ground_truth_quality(const SimAppSpec& spec, int n_features);

/// Feature labels implied by the flags: enabled -> true, otherwise false.
taskmodel::HumanLabels ground_truth_labels(const SimAppSpec& spec, const taskmodel::TaskSpec& task);

/// Throws Error{invalid_spec} listing every problem.
std::unique_ptr<DriverSession> open_session(const SimAppSpec& spec);

// ---------------------------------------------------------------------------
// Real driver (W3C WebDriver)

struct RealDriverSettings {
  std::string webdriver_url = "http://127.0.0.1:4444";
  std::string browser = "chrome";
  int viewport_width = 1280;
  int viewport_height = 800;
  double timeout_s = 30.0;
  /// Open{app} is honored only for names listed here; each maps to a URL.
  std::map<std::string, std::string> open_whitelist;
  /// Where a directory target is served once its deploy hint is running.
  std::string app_url;
};

/// URL targets are probed for reachability first (Error{unreachable}).
/// Directory targets need a deploy hint and `settings.app_url`; the hint is
/// run with `sh -c` inside the directory for the session's lifetime.
std::unique_ptr<DriverSession> open_session(const taskmodel::ProjectUnderTest& target,
                                            const RealDriverSettings& settings);

}  // namespace appjudge::envdriver
