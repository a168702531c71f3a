#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "appjudge/envdriver.hpp"

namespace appjudge::envdriver {

using nlohmann::json;

nlohmann::ordered_json observation_to_json(const Observation& obs) {
  return {{"location", obs.location},
          {"scroll_position", obs.scroll_position},
          {"timestamp", obs.timestamp},
          {"a11y_tree", obs.a11y_tree},
          {"screenshot_media_type", obs.screenshot_media_type},
          {"screenshot_base64", obs.screenshot_base64},
          {"screenshot", obs.screenshot}};
}

Observation observation_from_json(const json& doc) {
  Observation obs;
  obs.location = doc.value("location", std::string{});
  obs.scroll_position = doc.value("scroll_position", 0.0);
  obs.timestamp = doc.value("timestamp", 0.0);
  obs.a11y_tree = doc.value("a11y_tree", std::string{});
  obs.screenshot_media_type = doc.value("screenshot_media_type", std::string("text/plain"));
  obs.screenshot_base64 = doc.value("screenshot_base64", false);
  obs.screenshot = doc.value("screenshot", std::string{});
  return obs;
}

std::string_view action_name(const ActionCommand& action) {
  struct {
    std::string_view operator()(const OpenAction&) const { return "Open"; }
    std::string_view operator()(const RunAction&) const { return "Run"; }
    std::string_view operator()(const TellAction&) const { return "Tell"; }
    std::string_view operator()(const StopAction&) const { return "Stop"; }
  } visitor;
  return std::visit(visitor, action);
}

std::string action_argument(const ActionCommand& action) {
  struct {
    std::string operator()(const OpenAction& a) const { return a.app_name; }
    std::string operator()(const RunAction& a) const { return a.script; }
    std::string operator()(const TellAction& a) const { return a.payload; }
    std::string operator()(const StopAction&) const { return {}; }
  } visitor;
  return std::visit(visitor, action);
}

std::string format_action(const ActionCommand& action) {
  if (std::holds_alternative<StopAction>(action)) return "Stop";
  return fmt::format("{}: {}", action_name(action), action_argument(action));
}

std::optional<ActionCommand> make_action(std::string_view name, std::string_view argument) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::string arg(argument);
  if (lower == "open") return OpenAction{arg};
  if (lower == "run") return RunAction{arg};
  if (lower == "tell") return TellAction{arg};
  if (lower == "stop") return StopAction{};
  return std::nullopt;
}

std::vector<std::string> validate_action(const ActionCommand& action) {
  std::vector<std::string> out;
  const auto arg = action_argument(action);
  const bool blank = std::all_of(arg.begin(), arg.end(),
                                 [](unsigned char c) { return std::isspace(c) != 0; });
  if (std::holds_alternative<RunAction>(action) && blank) out.emplace_back("Run: script is empty");
  if (std::holds_alternative<OpenAction>(action) && blank) out.emplace_back("Open: app name is empty");
  return out;
}

nlohmann::ordered_json action_to_json(const ActionCommand& action) {
  nlohmann::ordered_json j{{"kind", std::string(action_name(action))}};
  if (!std::holds_alternative<StopAction>(action)) j["argument"] = action_argument(action);
  return j;
}

ActionCommand action_from_json(const json& doc) {
  auto action = make_action(doc.at("kind").get<std::string>(), doc.value("argument", std::string{}));
  if (!action) throw Error(Errc::schema_violation, "unknown action kind " + doc.at("kind").dump());
  return *action;
}

// ---------------------------------------------------------------------------
// Script grammar

namespace {

class ScriptParser {
 public:
  explicit ScriptParser(std::string_view src) : src_(src) {}

  std::vector<Statement> parse() {
    std::vector<Statement> out;
    skip_ws();
    if (at_end()) throw ScriptParseError(pos_, "empty script");
    while (true) {
      skip_ws();
      if (at_end()) break;
      out.push_back(statement());
      skip_ws();
      if (at_end()) break;
      if (src_[pos_] != ';') error(fmt::format("expected ';' but found '{}'", src_[pos_]));
      ++pos_;
    }
    return out;
  }

 private:
  [[noreturn]] void error(const std::string& what) const {
    throw ScriptParseError(pos_, fmt::format("script parse error at position {}: {}", pos_, what));
  }

  bool at_end() const { return pos_ >= src_.size(); }

  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  void expect(char c) {
    skip_ws();
    if (at_end() || src_[pos_] != c) error(fmt::format("expected '{}'", c));
    ++pos_;
  }

  std::string identifier() {
    skip_ws();
    const auto start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
    if (start == pos_) error("expected a statement name");
    return std::string(src_.substr(start, pos_ - start));
  }

  std::string quoted() {
    const char quote = src_[pos_++];
    std::string out;
    while (!at_end() && src_[pos_] != quote) {
      if (src_[pos_] == '\\' && pos_ + 1 < src_.size()) {
        const char next = src_[pos_ + 1];
        out += next == 'n' ? '\n' : next == 't' ? '\t' : next;
        pos_ += 2;
      } else {
        out += src_[pos_++];
      }
    }
    if (at_end()) error("unterminated string");
    ++pos_;
    return out;
  }

  // A quoted string, or raw text up to the next ',' or ')'.
  std::string argument() {
    skip_ws();
    if (at_end()) error("expected an argument");
    if (src_[pos_] == '"' || src_[pos_] == '\'') return quoted();
    const auto start = pos_;
    while (!at_end() && src_[pos_] != ',' && src_[pos_] != ')') ++pos_;
    std::string_view raw = src_.substr(start, pos_ - start);
    while (!raw.empty() && std::isspace(static_cast<unsigned char>(raw.back()))) raw.remove_suffix(1);
    if (raw.empty()) error("expected an argument");
    return std::string(raw);
  }

  Statement statement() {
    const auto name_pos = pos_;
    std::string name = identifier();
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    expect('(');
    Statement stmt;
    if (name == "click") {
      stmt = ClickStmt{argument()};
    } else if (name == "type") {
      auto selector = argument();
      expect(',');
      stmt = TypeStmt{std::move(selector), argument()};
    } else if (name == "press") {
      stmt = PressStmt{argument()};
    } else if (name == "scroll") {
      const auto arg_pos = pos_;
      const auto where = argument();
      if (where == "up") stmt = ScrollStmt{ScrollTarget::up};
      else if (where == "down") stmt = ScrollStmt{ScrollTarget::down};
      else if (where == "top") stmt = ScrollStmt{ScrollTarget::top};
      else if (where == "bottom") stmt = ScrollStmt{ScrollTarget::bottom};
      else {
        pos_ = arg_pos;
        error("scroll expects up, down, top or bottom");
      }
    } else if (name == "navigate") {
      stmt = NavigateStmt{argument()};
    } else {
      pos_ = name_pos;
      error("unknown statement '" + name + "'");
    }
    expect(')');
    return stmt;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<Statement> parse_script(std::string_view script) { return ScriptParser(script).parse(); }

std::string format_statement(const Statement& stmt) {
  struct {
    std::string operator()(const ClickStmt& s) const { return "click(" + s.selector + ")"; }
    std::string operator()(const TypeStmt& s) const {
      return "type(" + s.selector + ", " + quote(s.text) + ")";
    }
    std::string operator()(const PressStmt& s) const { return "press(" + s.key + ")"; }
    std::string operator()(const ScrollStmt& s) const {
      switch (s.target) {
        case ScrollTarget::up: return "scroll(up)";
        case ScrollTarget::down: return "scroll(down)";
        case ScrollTarget::top: return "scroll(top)";
        case ScrollTarget::bottom: return "scroll(bottom)";
      }
      return "scroll(down)";
    }
    std::string operator()(const NavigateStmt& s) const { return "navigate(" + s.target + ")"; }
  } visitor;
  return std::visit(visitor, stmt);
}

}  // namespace appjudge::envdriver
