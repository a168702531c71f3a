#include <algorithm>
#include <cctype>
#include <set>

#include <fmt/format.h>

#include "appjudge/envdriver.hpp"
#include "appjudge/json_io.hpp"

namespace appjudge::envdriver {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// JSON mapping

ordered_json effect_to_json(const Effect& effect) {
  if (const auto* nav = std::get_if<NavigateEffect>(&effect)) return {{"navigate", nav->page}};
  if (const auto* set = std::get_if<SetMarkerEffect>(&effect)) {
    return {{"set", set->name}, {"value", set->value}};
  }
  const auto& toggle = std::get<ToggleMarkerEffect>(effect);
  return {{"toggle", toggle.name}, {"values", {toggle.first, toggle.second}}};
}

Effect effect_from_json(const json& j) {
  if (j.contains("navigate")) return NavigateEffect{j.at("navigate").get<std::string>()};
  if (j.contains("set")) return SetMarkerEffect{j.at("set").get<std::string>(), j.at("value").get<std::string>()};
  if (j.contains("toggle")) {
    const auto& values = j.at("values");
    if (!values.is_array() || values.size() != 2) {
      throw Error(Errc::schema_violation, "toggle effect needs exactly two values");
    }
    return ToggleMarkerEffect{j.at("toggle").get<std::string>(), values[0].get<std::string>(),
                              values[1].get<std::string>()};
  }
  throw Error(Errc::schema_violation, "unknown effect " + j.dump());
}

ordered_json behavior_to_json(const Behavior& b) {
  ordered_json j{{"on", b.trigger == Trigger::click ? "click" : "type"}};
  if (b.feature) j["feature"] = *b.feature;
  j["effects"] = ordered_json::array();
  for (const auto& e : b.effects) j["effects"].push_back(effect_to_json(e));
  if (!b.broken_effects.empty()) {
    j["broken_effects"] = ordered_json::array();
    for (const auto& e : b.broken_effects) j["broken_effects"].push_back(effect_to_json(e));
  }
  return j;
}

Behavior behavior_from_json(const json& j) {
  Behavior b;
  const auto on = j.value("on", std::string("click"));
  if (on == "click") b.trigger = Trigger::click;
  else if (on == "type") b.trigger = Trigger::type;
  else throw Error(Errc::schema_violation, "unknown behavior trigger '" + on + "'");
  if (j.contains("feature")) b.feature = j.at("feature").get<int>();
  for (const auto& e : j.value("effects", json::array())) b.effects.push_back(effect_from_json(e));
  for (const auto& e : j.value("broken_effects", json::array())) b.broken_effects.push_back(effect_from_json(e));
  return b;
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

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void check_effects(const std::vector<Effect>& effects, const SimAppSpec& spec, const std::string& where,
                   std::vector<std::string>& out) {
  for (const auto& e : effects) {
    if (const auto* nav = std::get_if<NavigateEffect>(&e); nav && !spec.pages.count(nav->page)) {
      out.push_back(fmt::format("{}: transition -> {} targets a page that does not exist", where, nav->page));
    }
    if (const auto* set = std::get_if<SetMarkerEffect>(&e); set && set->name.empty()) {
      out.push_back(where + ": marker name is empty");
    }
    if (const auto* tog = std::get_if<ToggleMarkerEffect>(&e); tog && tog->name.empty()) {
      out.push_back(where + ": marker name is empty");
    }
  }
}

void check_flag(const std::optional<int>& feature, const SimAppSpec& spec, const std::string& where,
                std::vector<std::string>& out) {
  if (feature && !spec.feature_flags.count(*feature)) {
    out.push_back(fmt::format("{}: gated on undeclared feature flag {}", where, *feature));
  }
}

void check_behaviors(const std::vector<Behavior>& behaviors, const SimAppSpec& spec,
                     const std::string& where, std::vector<std::string>& out) {
  for (std::size_t i = 0; i < behaviors.size(); ++i) {
    const auto here = fmt::format("{}.behaviors[{}]", where, i);
    check_flag(behaviors[i].feature, spec, here, out);
    check_effects(behaviors[i].effects, spec, here, out);
    check_effects(behaviors[i].broken_effects, spec, here, out);
  }
}

// ---------------------------------------------------------------------------
// Session

class SimSession final : public DriverSession {
 public:
  explicit SimSession(SimAppSpec spec) : spec_(std::move(spec)) { reset(); }

  Observation observe() override {
    require_open();
    return snapshot();
  }

  ActionOutcome apply(const ActionCommand& action) override {
    require_open();
    ActionOutcome outcome;
    outcome.ok = true;
    if (const auto* open = std::get_if<OpenAction>(&action)) {
      if (lower(open->app_name) == lower(spec_.app_name) || lower(open->app_name) == "app") {
        reset();
        ++clock_;
        outcome.detail = "launched " + spec_.app_name;
      } else {
        outcome.ok = false;
        outcome.detail = fmt::format("unknown application '{}'", open->app_name);
      }
    } else if (const auto* run = std::get_if<RunAction>(&action)) {
      outcome = run_script(run->script);
    } else if (const auto* tell = std::get_if<TellAction>(&action)) {
      transcript_.push_back(tell->payload);
      outcome.detail = "recorded";
    } else {
      open_ = false;
      outcome.detail = "session stopped";
    }
    outcome.observation_after = snapshot();
    return outcome;
  }

  bool is_open() const override { return open_; }

 private:
  void require_open() const {
    if (!open_) throw Error(Errc::session_closed, "simulated session is closed");
  }

  void reset() {
    page_ = spec_.start_page;
    scroll_step_ = 0;
    markers_ = spec_.initial_markers;
    values_.clear();
  }

  const SimPage& page() const { return spec_.pages.at(page_); }

  double scroll_position() const {
    const int steps = std::max(1, page().scroll_steps);
    return static_cast<double>(scroll_step_) / steps;
  }

  bool flag(int feature) const {
    auto it = spec_.feature_flags.find(feature);
    return it != spec_.feature_flags.end() && it->second;
  }

  bool visible(const SimElement& el) const {
    if (el.feature && !flag(*el.feature)) return false;
    if (el.shown_if) {
      auto it = markers_.find(el.shown_if->marker);
      const std::string value = it == markers_.end() ? "" : it->second;
      if (value != el.shown_if->equals) return false;
    }
    return scroll_position() + 1e-9 >= el.min_scroll;
  }

  const SimElement* find(std::string_view selector) const {
    if (!selector.empty() && selector.front() == '#') selector.remove_prefix(1);
    for (const auto& el : page().elements) {
      if (el.id == selector && visible(el)) return &el;
    }
    return nullptr;
  }

  void run_effects(const std::vector<Effect>& effects, const std::string& input) {
    for (const auto& e : effects) {
      if (const auto* nav = std::get_if<NavigateEffect>(&e)) {
        page_ = nav->page;
        scroll_step_ = 0;
      } else if (const auto* set = std::get_if<SetMarkerEffect>(&e)) {
        markers_[set->name] = set->value == "$input" ? input : set->value;
      } else if (const auto* tog = std::get_if<ToggleMarkerEffect>(&e)) {
        auto& m = markers_[tog->name];
        m = m == tog->first ? tog->second : tog->first;
      }
    }
  }

  void trigger(const std::vector<Behavior>& behaviors, Trigger kind, const std::string& input) {
    for (const auto& b : behaviors) {
      if (b.trigger != kind) continue;
      const bool working = !b.feature || flag(*b.feature);
      run_effects(working ? b.effects : b.broken_effects, input);
    }
  }

  void scroll(ScrollTarget target) {
    const int steps = std::max(1, page().scroll_steps);
    switch (target) {
      case ScrollTarget::up: scroll_step_ = std::max(0, scroll_step_ - 1); break;
      case ScrollTarget::down: scroll_step_ = std::min(steps, scroll_step_ + 1); break;
      case ScrollTarget::top: scroll_step_ = 0; break;
      case ScrollTarget::bottom: scroll_step_ = steps; break;
    }
  }

  std::optional<std::string> execute(const Statement& stmt) {
    if (const auto* click = std::get_if<ClickStmt>(&stmt)) {
      const auto* el = find(click->selector);
      if (!el) return "element not found: " + click->selector;
      trigger(el->behaviors, Trigger::click, "");
    } else if (const auto* type = std::get_if<TypeStmt>(&stmt)) {
      const auto* el = find(type->selector);
      if (!el) return "element not found: " + type->selector;
      values_[page_ + "/" + el->id] = type->text;
      trigger(el->behaviors, Trigger::type, type->text);
    } else if (const auto* press = std::get_if<PressStmt>(&stmt)) {
      const auto& bindings = page().key_bindings;
      if (auto it = bindings.find(press->key); it != bindings.end()) {
        std::vector<Behavior> clicks = it->second;
        for (auto& b : clicks) b.trigger = Trigger::click;
        trigger(clicks, Trigger::click, "");
      } else {
        const auto key = lower(press->key);
        if (key == "pagedown" || key == "page_down") scroll(ScrollTarget::down);
        else if (key == "pageup" || key == "page_up") scroll(ScrollTarget::up);
        else if (key == "home") scroll(ScrollTarget::top);
        else if (key == "end") scroll(ScrollTarget::bottom);
      }
    } else if (const auto* sc = std::get_if<ScrollStmt>(&stmt)) {
      scroll(sc->target);
    } else if (const auto* nav = std::get_if<NavigateStmt>(&stmt)) {
      if (!spec_.pages.count(nav->target)) return "page not found: " + nav->target;
      page_ = nav->target;
      scroll_step_ = 0;
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
    const auto saved = std::make_tuple(page_, scroll_step_, markers_, values_);
    std::size_t done = 0;
    for (const auto& stmt : statements) {
      if (auto failure = execute(stmt)) {
        outcome.detail = fmt::format("statement {} ({}): {}", done + 1, format_statement(stmt), *failure);
        if (std::make_tuple(page_, scroll_step_, markers_, values_) != saved) ++clock_;
        return outcome;
      }
      ++done;
    }
    ++clock_;
    outcome.ok = true;
    outcome.detail = fmt::format("executed {} statement{}", done, done == 1 ? "" : "s");
    return outcome;
  }

  Observation snapshot() const {
    Observation obs;
    obs.location = page_;
    obs.scroll_position = scroll_position();
    obs.timestamp = static_cast<double>(clock_);

    const auto& p = page();
    std::string tree = fmt::format("<page id=\"{}\" title=\"{}\" scroll=\"{:.2f}\">\n", xml_escape(page_),
                                   xml_escape(p.title), obs.scroll_position);
    std::string shot = fmt::format("== {} ({}) ==\n", p.title, page_);
    int row = 0;
    for (const auto& el : p.elements) {
      if (!visible(el)) continue;
      auto value = values_.find(page_ + "/" + el.id);
      const std::string value_attr =
          value == values_.end() ? "" : fmt::format(" value=\"{}\"", xml_escape(value->second));
      tree += fmt::format("  <{} id=\"{}\" label=\"{}\"{} x=\"0\" y=\"{}\" w=\"1280\" h=\"32\"/>\n", el.role,
                          xml_escape(el.id), xml_escape(el.label), value_attr, 40 * row);
      shot += fmt::format("[{}] {}{}\n", el.role, el.label,
                          value == values_.end() ? "" : ": " + value->second);
      ++row;
    }
    for (const auto& [name, val] : markers_) {
      tree += fmt::format("  <state name=\"{}\" value=\"{}\"/>\n", xml_escape(name), xml_escape(val));
      shot += fmt::format("-- {}: {}\n", name, val);
    }
    tree += "</page>";
    shot += fmt::format("scroll {:.0f}%", 100.0 * obs.scroll_position);
    obs.a11y_tree = std::move(tree);
    obs.screenshot = std::move(shot);
    return obs;
  }

  SimAppSpec spec_;
  std::string page_;
  int scroll_step_ = 0;
  std::map<std::string, std::string> markers_;
  std::map<std::string, std::string> values_;
  long clock_ = 0;
  bool open_ = true;
};

}  // namespace

std::vector<std::string> validate_sim_spec(const SimAppSpec& spec) {
  std::vector<std::string> out;
  if (spec.pages.empty()) out.emplace_back("pages: at least one page is required");
  if (!spec.pages.count(spec.start_page)) {
    out.push_back(fmt::format("start_page: '{}' does not exist", spec.start_page));
  }
  for (const auto& [index, on] : spec.feature_flags) {
    (void)on;
    if (index < 1) out.push_back(fmt::format("feature_flags.{}: feature indices start at 1", index));
  }
  for (const auto& [page_id, page] : spec.pages) {
    const auto where = "pages." + page_id;
    if (page.scroll_steps < 1) out.push_back(where + ".scroll_steps: must be >= 1");
    std::set<std::string> ids;
    for (const auto& el : page.elements) {
      const auto el_where = fmt::format("{}#{}", page_id, el.id);
      if (el.id.empty()) out.push_back(where + ".elements: element id is empty");
      if (!ids.insert(el.id).second) out.push_back(fmt::format("{}: duplicate element id '{}'", where, el.id));
      if (el.role.empty()) out.push_back(el_where + ": role is empty");
      if (el.min_scroll < 0.0 || el.min_scroll > 1.0) out.push_back(el_where + ": min_scroll outside [0,1]");
      check_flag(el.feature, spec, el_where, out);
      check_behaviors(el.behaviors, spec, el_where, out);
    }
    for (const auto& [key, behaviors] : page.key_bindings) {
      check_behaviors(behaviors, spec, fmt::format("{}[key {}]", page_id, key), out);
    }
  }
  return out;
}

SimAppSpec sim_spec_from_json(const json& doc) {
  require_schema_version(doc, "simulated app");
  SimAppSpec spec;
  try {
    spec.app_name = doc.value("app_name", std::string("app"));
    spec.start_page = doc.at("start_page").get<std::string>();
    const json flags = doc.value("feature_flags", json::object());
    for (const auto& [key, value] : flags.items()) {
      spec.feature_flags[std::stoi(key)] = value.get<bool>();
    }
    spec.initial_markers = doc.value("initial_markers", std::map<std::string, std::string>{});
    for (const auto& [page_id, pj] : doc.at("pages").items()) {
      SimPage page;
      page.title = pj.value("title", page_id);
      page.scroll_steps = pj.value("scroll_steps", 1);
      for (const auto& ej : pj.value("elements", json::array())) {
        SimElement el;
        el.id = ej.at("id").get<std::string>();
        el.role = ej.value("role", std::string("button"));
        el.label = ej.value("label", std::string{});
        if (ej.contains("feature")) el.feature = ej.at("feature").get<int>();
        if (ej.contains("shown_if")) {
          el.shown_if = MarkerCondition{ej["shown_if"].at("marker").get<std::string>(),
                                        ej["shown_if"].at("equals").get<std::string>()};
        }
        el.min_scroll = ej.value("min_scroll", 0.0);
        for (const auto& bj : ej.value("behaviors", json::array())) el.behaviors.push_back(behavior_from_json(bj));
        page.elements.push_back(std::move(el));
      }
      const json bindings = pj.value("key_bindings", json::object());
      for (const auto& [key, list] : bindings.items()) {
        auto& bound = page.key_bindings[key];
        for (const auto& bj : list) bound.push_back(behavior_from_json(bj));
      }
      spec.pages.emplace(page_id, std::move(page));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::schema_violation, std::string("simulated app: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(Errc::schema_violation, "simulated app: feature_flags keys must be integers");
  }
  return spec;
}

ordered_json sim_spec_to_json(const SimAppSpec& spec) {
  ordered_json doc;
  doc["schema_version"] = 1;
  doc["app_name"] = spec.app_name;
  doc["start_page"] = spec.start_page;
  doc["feature_flags"] = ordered_json::object();
  for (const auto& [index, on] : spec.feature_flags) doc["feature_flags"][std::to_string(index)] = on;
  doc["initial_markers"] = ordered_json(spec.initial_markers);
  doc["pages"] = ordered_json::object();
  for (const auto& [page_id, page] : spec.pages) {
    ordered_json pj;
    pj["title"] = page.title;
    pj["scroll_steps"] = page.scroll_steps;
    pj["elements"] = ordered_json::array();
    for (const auto& el : page.elements) {
      ordered_json ej{{"id", el.id}, {"role", el.role}, {"label", el.label}};
      if (el.feature) ej["feature"] = *el.feature;
      if (el.shown_if) ej["shown_if"] = {{"marker", el.shown_if->marker}, {"equals", el.shown_if->equals}};
      if (el.min_scroll != 0.0) ej["min_scroll"] = el.min_scroll;
      if (!el.behaviors.empty()) {
        ej["behaviors"] = ordered_json::array();
        for (const auto& b : el.behaviors) ej["behaviors"].push_back(behavior_to_json(b));
      }
      pj["elements"].push_back(std::move(ej));
    }
    if (!page.key_bindings.empty()) {
      pj["key_bindings"] = ordered_json::object();
      for (const auto& [key, list] : page.key_bindings) {
        auto& arr = pj["key_bindings"][key] = ordered_json::array();
        for (const auto& b : list) arr.push_back(behavior_to_json(b));
      }
    }
    doc["pages"][page_id] = std::move(pj);
  }
  return doc;
}

SimAppSpec load_sim_spec(const std::filesystem::path& path) { return sim_spec_from_json(read_json_file(path)); }

void save_sim_spec(const SimAppSpec& spec, const std::filesystem::path& path) {
  write_json_file(path, sim_spec_to_json(spec));
}

double ground_truth_quality(const SimAppSpec& spec, int n_features) {
  if (n_features < 1) throw Error(Errc::empty_input, "ground truth quality needs at least one feature");
  int enabled = 0;
  for (int i = 1; i <= n_features; ++i) {
    auto it = spec.feature_flags.find(i);
    if (it != spec.feature_flags.end() && it->second) ++enabled;
  }
  return static_cast<double>(enabled) / n_features;
}

taskmodel::HumanLabels ground_truth_labels(const SimAppSpec& spec, const taskmodel::TaskSpec& task) {
  taskmodel::HumanLabels labels;
  labels.task_id = task.id;
  for (const auto& f : task.features) {
    auto it = spec.feature_flags.find(f.index);
    const bool on = it != spec.feature_flags.end() && it->second;
    labels.feature_labels.push_back({f.index, on ? Outcome::Pass : Outcome::Fail});
  }
  return labels;
}

std::unique_ptr<DriverSession> open_session(const SimAppSpec& spec) {
  if (auto problems = validate_sim_spec(spec); !problems.empty()) {
    std::string msg = "invalid simulated app:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(Errc::invalid_spec, msg);
  }
  return std::make_unique<SimSession>(spec);
}

}  // namespace appjudge::envdriver
