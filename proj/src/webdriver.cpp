#include <chrono>
#include <thread>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <httplib.h>

#include "appjudge/envdriver.hpp"

namespace appjudge::envdriver {

using nlohmann::json;

namespace {

constexpr const char* kElementKey = "element-6066-11e4-a52e-4f735466cecf";

// Collects visible, meaningful elements. Elements without a unique DOM id get
// a stable data-aj attribute so later selectors can address them.
constexpr const char* kTreeScript = R"JS(
const sel = 'a,button,input,select,textarea,summary,[role],[onclick],[tabindex],h1,h2,h3,h4,h5,h6,img,label,li,p,td,th,canvas,video,audio';
const seen = new Set();
window.__ajn = window.__ajn || 0;
const out = [];
for (const el of document.querySelectorAll(sel)) {
  const r = el.getBoundingClientRect();
  const st = getComputedStyle(el);
  if ((r.width === 0 && r.height === 0) || st.visibility === 'hidden' || st.display === 'none') continue;
  let id = el.id;
  if (!id || seen.has(id)) {
    id = el.getAttribute('data-aj');
    if (!id) { id = 'aj' + (window.__ajn++); el.setAttribute('data-aj', id); }
  }
  seen.add(id);
  const role = el.getAttribute('role') || el.tagName.toLowerCase();
  const label = (el.getAttribute('aria-label') || el.getAttribute('alt') || el.getAttribute('placeholder') ||
                 el.innerText || '').trim().replace(/\s+/g, ' ').slice(0, 120);
  const value = (typeof el.value === 'string' && el.tagName !== 'LI' && el.tagName !== 'BUTTON') ? el.value : null;
  out.push({id, role, label, value, x: Math.round(r.x + scrollX), y: Math.round(r.y + scrollY),
            w: Math.round(r.width), h: Math.round(r.height)});
}
const max = document.documentElement.scrollHeight - innerHeight;
return {title: document.title, scroll: max > 0 ? Math.min(1, Math.max(0, scrollY / max)) : 0, elements: out};
)JS";

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::precondition, "not a URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string key_code(const std::string& key) {
  static const std::map<std::string, std::string> named{
      {"enter", "\uE007"},      {"return", "\uE006"},    {"tab", "\uE004"},
      {"escape", "\uE00C"},     {"esc", "\uE00C"},       {"backspace", "\uE003"},
      {"delete", "\uE017"},     {"space", " "},          {"pageup", "\uE00E"},
      {"pagedown", "\uE00F"},   {"end", "\uE010"},       {"home", "\uE011"},
      {"arrowleft", "\uE012"},  {"left", "\uE012"},      {"arrowup", "\uE013"},
      {"up", "\uE013"},         {"arrowright", "\uE014"}, {"right", "\uE014"},
      {"arrowdown", "\uE015"},  {"down", "\uE015"},
  };
  std::string lowered;
  for (char c : key) {
    if (c != '_' && c != '-') lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (auto it = named.find(lowered); it != named.end()) return it->second;
  return key;
}

bool reachable(const std::string& url, double timeout_s) {
  const auto parts = split_url(url);
  httplib::Client client(parts.origin);
  if (!client.is_valid()) return false;
  const auto secs = static_cast<time_t>(std::max(1.0, timeout_s));
  client.set_connection_timeout(secs);
  client.set_read_timeout(secs);
  return static_cast<bool>(client.Get(parts.path));
}

/// Child process started from a deploy hint; killed with its process group.
class DeployedProcess {
 public:
  DeployedProcess(const std::filesystem::path& dir, const std::string& command) {
    pid_ = ::fork();
    if (pid_ < 0) throw Error(Errc::io, "fork failed while starting the deploy hint");
    if (pid_ == 0) {
      ::setpgid(0, 0);
      if (::chdir(dir.c_str()) != 0) ::_exit(127);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::setpgid(pid_, pid_);
  }
  DeployedProcess(const DeployedProcess&) = delete;
  DeployedProcess& operator=(const DeployedProcess&) = delete;
  ~DeployedProcess() {
    if (pid_ <= 0) return;
    ::kill(-pid_, SIGTERM);
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
  }

  bool exited() {
    int status = 0;
    if (pid_ > 0 && ::waitpid(pid_, &status, WNOHANG) == pid_) pid_ = -1;
    return pid_ <= 0;
  }

 private:
  pid_t pid_ = -1;
};

class WebDriverSession final : public DriverSession {
 public:
  WebDriverSession(std::string app_url, RealDriverSettings settings, std::unique_ptr<DeployedProcess> process)
      : app_url_(std::move(app_url)),
        settings_(std::move(settings)),
        process_(std::move(process)),
        client_(split_url(settings_.webdriver_url).origin) {
    const auto secs = static_cast<time_t>(std::max(1.0, settings_.timeout_s));
    client_.set_connection_timeout(secs);
    client_.set_read_timeout(secs);
    base_path_ = split_url(settings_.webdriver_url).path;
    if (base_path_ == "/") base_path_.clear();

    const json caps{{"capabilities", {{"alwaysMatch", {{"browserName", settings_.browser}}}}}};
    const auto created = call("POST", "/session", caps);
    session_id_ = created.at("sessionId").get<std::string>();
    call("POST", session_path("/window/rect"),
         {{"width", settings_.viewport_width}, {"height", settings_.viewport_height}});
    go(app_url_);
  }

  ~WebDriverSession() override {
    if (open_) close_remote();
  }

  Observation observe() override {
    require_open();
    return snapshot();
  }

  ActionOutcome apply(const ActionCommand& action) override {
    require_open();
    ActionOutcome outcome;
    outcome.ok = true;
    if (const auto* open = std::get_if<OpenAction>(&action)) {
      if (auto it = settings_.open_whitelist.find(open->app_name); it != settings_.open_whitelist.end()) {
        go(it->second);
        outcome.detail = "opened " + open->app_name;
      } else if (open->app_name == "app") {
        go(app_url_);
        outcome.detail = "opened the application under test";
      } else {
        outcome.ok = false;
        outcome.detail = fmt::format("Open target '{}' is not whitelisted", open->app_name);
      }
    } else if (const auto* run = std::get_if<RunAction>(&action)) {
      outcome = run_script(run->script);
    } else if (const auto* tell = std::get_if<TellAction>(&action)) {
      transcript_.push_back(tell->payload);
      outcome.detail = "recorded";
    } else {
      outcome.observation_after = snapshot();
      close_remote();
      outcome.detail = "session stopped";
      return outcome;
    }
    outcome.observation_after = snapshot();
    return outcome;
  }

  bool is_open() const override { return open_; }

 private:
  struct WireError {
    std::string error;
    std::string message;
  };

  void require_open() const {
    if (!open_) throw Error(Errc::session_closed, "browser session is closed");
  }

  std::string session_path(const std::string& suffix) const { return "/session/" + session_id_ + suffix; }

  // Throws Error{transport} when the WebDriver endpoint cannot be reached;
  // protocol-level errors come back through `wire_error`.
  json call(const std::string& method, const std::string& path, const json& body = json::object(),
            WireError* wire_error = nullptr) {
    const auto full = base_path_ + path;
    httplib::Result res = method == "GET"      ? client_.Get(full)
                          : method == "DELETE" ? client_.Delete(full)
                                               : client_.Post(full, body.dump(), "application/json");
    if (!res) {
      throw Error(Errc::transport, fmt::format("WebDriver {} {} failed: {}", method, path,
                                               httplib::to_string(res.error())));
    }
    json doc = json::parse(res->body, nullptr, false);
    const json value = doc.is_object() && doc.contains("value") ? doc["value"] : json();
    if (res->status >= 400) {
      WireError err{value.is_object() ? value.value("error", std::string("unknown error")) : "unknown error",
                    value.is_object() ? value.value("message", std::string{}) : res->body};
      if (wire_error) {
        *wire_error = err;
        return json();
      }
      throw Error(Errc::transport, fmt::format("WebDriver {} {}: {} {}", method, path, err.error, err.message));
    }
    return value;
  }

  void go(const std::string& url) { call("POST", session_path("/url"), {{"url", url}}); }

  json execute(const std::string& script, const json& args = json::array()) {
    return call("POST", session_path("/execute/sync"), {{"script", script}, {"args", args}});
  }

  std::optional<std::string> find_element(const std::string& selector) {
    std::vector<std::string> candidates{selector};
    std::string bare = selector;
    if (!bare.empty() && bare.front() == '#') bare.erase(0, 1);
    candidates.push_back(fmt::format("[data-aj=\"{}\"]", bare));
    if (selector.front() != '#') candidates.push_back("#" + selector);
    for (const auto& css : candidates) {
      WireError err;
      const auto value = call("POST", session_path("/element"), {{"using", "css selector"}, {"value", css}}, &err);
      if (value.is_object() && value.contains(kElementKey)) return value[kElementKey].get<std::string>();
    }
    return std::nullopt;
  }

  // Relative targets resolve against the application; absolute URLs must stay
  // on its origin.
  std::optional<std::string> resolve(const std::string& target) const {
    const auto app = split_url(app_url_);
    if (target.find("://") != std::string::npos) {
      if (split_url(target).origin != app.origin) return std::nullopt;
      return target;
    }
    if (!target.empty() && target.front() == '/') return app.origin + target;
    auto dir = app.path.substr(0, app.path.rfind('/') + 1);
    return app.origin + dir + target;
  }

  std::optional<std::string> execute_statement(const Statement& stmt) {
    WireError err;
    if (const auto* click = std::get_if<ClickStmt>(&stmt)) {
      auto id = find_element(click->selector);
      if (!id) return "element not found: " + click->selector;
      call("POST", session_path("/element/" + *id + "/click"), json::object(), &err);
      if (!err.error.empty()) return err.error + ": " + err.message;
    } else if (const auto* type = std::get_if<TypeStmt>(&stmt)) {
      auto id = find_element(type->selector);
      if (!id) return "element not found: " + type->selector;
      call("POST", session_path("/element/" + *id + "/value"), {{"text", type->text}}, &err);
      if (!err.error.empty()) return err.error + ": " + err.message;
    } else if (const auto* press = std::get_if<PressStmt>(&stmt)) {
      const auto code = key_code(press->key);
      const json actions{{"actions",
                          {{{"type", "key"},
                            {"id", "keyboard"},
                            {"actions", {{{"type", "keyDown"}, {"value", code}}, {{"type", "keyUp"}, {"value", code}}}}}}}};
      call("POST", session_path("/actions"), actions, &err);
      if (!err.error.empty()) return err.error + ": " + err.message;
    } else if (const auto* sc = std::get_if<ScrollStmt>(&stmt)) {
      static const std::map<ScrollTarget, std::string> js{
          {ScrollTarget::up, "window.scrollBy(0, -0.9 * window.innerHeight);"},
          {ScrollTarget::down, "window.scrollBy(0, 0.9 * window.innerHeight);"},
          {ScrollTarget::top, "window.scrollTo(0, 0);"},
          {ScrollTarget::bottom, "window.scrollTo(0, document.documentElement.scrollHeight);"},
      };
      execute(js.at(sc->target));
    } else if (const auto* nav = std::get_if<NavigateStmt>(&stmt)) {
      const auto url = resolve(nav->target);
      if (!url) return "navigation outside the application is not allowed: " + nav->target;
      go(*url);
    }
    return std::nullopt;
  }

  ActionOutcome run_script(const std::string& script) {
    ActionOutcome outcome;
    std::vector<Statement> statements;
    try {
      statements = parse_script(script);
    } catch (const ScriptParseError& e) {
      outcome.detail = e.what();
      return outcome;
    }
    std::size_t done = 0;
    for (const auto& stmt : statements) {
      if (auto failure = execute_statement(stmt)) {
        outcome.detail = fmt::format("statement {} ({}): {}", done + 1, format_statement(stmt), *failure);
        return outcome;
      }
      ++done;
    }
    outcome.ok = true;
    outcome.detail = fmt::format("executed {} statement{}", done, done == 1 ? "" : "s");
    return outcome;
  }

  Observation snapshot() {
    Observation obs;
    obs.location = call("GET", session_path("/url")).get<std::string>();
    obs.screenshot = call("GET", session_path("/screenshot")).get<std::string>();
    obs.screenshot_media_type = "image/png";
    obs.screenshot_base64 = true;
    obs.timestamp = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();

    const auto tree = execute(kTreeScript);
    obs.scroll_position = tree.value("scroll", 0.0);
    std::string xml = fmt::format("<page url=\"{}\" title=\"{}\" scroll=\"{:.2f}\">\n", xml_escape(obs.location),
                                  xml_escape(tree.value("title", std::string{})), obs.scroll_position);
    for (const auto& el : tree.value("elements", json::array())) {
      const auto value = el.contains("value") && el["value"].is_string()
                             ? fmt::format(" value=\"{}\"", xml_escape(el["value"].get<std::string>()))
                             : std::string{};
      xml += fmt::format("  <{} id=\"{}\" label=\"{}\"{} x=\"{}\" y=\"{}\" w=\"{}\" h=\"{}\"/>\n",
                         el.value("role", std::string("element")), xml_escape(el.value("id", std::string{})),
                         xml_escape(el.value("label", std::string{})), value, el.value("x", 0), el.value("y", 0),
                         el.value("w", 0), el.value("h", 0));
    }
    obs.a11y_tree = xml + "</page>";
    return obs;
  }

  void close_remote() {
    open_ = false;
    try {
      WireError err;
      call("DELETE", session_path(""), json::object(), &err);
    } catch (const Error&) {
    }
    process_.reset();
  }

  std::string app_url_;
  RealDriverSettings settings_;
  std::unique_ptr<DeployedProcess> process_;
  httplib::Client client_;
  std::string base_path_;
  std::string session_id_;
  bool open_ = true;
};

}  // namespace

std::unique_ptr<DriverSession> open_session(const taskmodel::ProjectUnderTest& target,
                                            const RealDriverSettings& settings) {
  std::unique_ptr<DeployedProcess> process;
  std::string app_url;
  if (const auto* url = std::get_if<taskmodel::UrlTarget>(&target.target)) {
    app_url = url->url;
  } else {
    const auto& dir = std::get<taskmodel::DirectoryTarget>(target.target).directory;
    if (!target.deploy_hint || target.deploy_hint->empty()) {
      throw Error(Errc::precondition,
                  fmt::format("{}: directory target needs a deploy hint supplied by the user", dir.string()));
    }
    if (settings.app_url.empty()) {
      throw Error(Errc::precondition, "directory target needs the URL where the deployed app is served");
    }
    app_url = settings.app_url;
    process = std::make_unique<DeployedProcess>(dir, *target.deploy_hint);
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(settings.timeout_s);
    while (!reachable(app_url, 1.0)) {
      if (process->exited() || std::chrono::steady_clock::now() > deadline) {
        throw Error(Errc::unreachable, fmt::format("{} did not come up after running the deploy hint", app_url));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(250));
    }
  }

  if (!reachable(app_url, settings.timeout_s)) {
    throw Error(Errc::unreachable, "target " + app_url + " is not reachable");
  }
  if (!reachable(settings.webdriver_url + "/status", settings.timeout_s)) {
    throw Error(Errc::unreachable, "WebDriver endpoint " + settings.webdriver_url + " is not reachable");
  }
  try {
    return std::make_unique<WebDriverSession>(app_url, settings, std::move(process));
  } catch (const Error& e) {
    throw Error(Errc::unreachable, std::string("could not start a browser session: ") + e.what());
  }
}

}  // namespace appjudge::envdriver
