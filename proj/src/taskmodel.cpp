#include "appjudge/taskmodel.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "appjudge/error.hpp"
#include "appjudge/json_io.hpp"

namespace appjudge::taskmodel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Violation {
  std::string field;
  std::string message;
  bool material_path = false;
};

std::vector<std::string> render(const std::vector<Violation>& violations) {
  std::vector<std::string> out;
  out.reserve(violations.size());
  for (const auto& v : violations) out.push_back(v.field + ": " + v.message);
  return out;
}

std::optional<std::string> material_path_problem(const std::string& path) {
  if (path.empty()) return "path is empty";
  const fs::path p(path);
  if (p.is_absolute() || p.has_root_name() || p.has_root_directory()) {
    return fmt::format("absolute path '{}' not allowed", path);
  }
  const fs::path normal = p.lexically_normal();
  if (!normal.empty() && *normal.begin() == "..") {
    return fmt::format("path '{}' escapes the materials directory", path);
  }
  return std::nullopt;
}

void check_typed(const TaskSpec& task, std::vector<Violation>& out) {
  if (task.id.empty()) out.push_back({"id", "must be non-empty"});
  if (task.features.empty()) out.push_back({"features", "must be non-empty"});
  for (std::size_t i = 0; i < task.features.size(); ++i) {
    const auto& f = task.features[i];
    if (f.index != static_cast<int>(i) + 1) {
      out.push_back({fmt::format("features[{}].index", i),
                     fmt::format("indices must be contiguous from 1; expected {}, found {}",
                                 i + 1, f.index)});
    }
    if (f.text.empty()) out.push_back({fmt::format("features[{}].text", i), "must be non-empty"});
  }
  for (std::size_t i = 0; i < task.materials.size(); ++i) {
    if (auto problem = material_path_problem(task.materials[i].path)) {
      out.push_back({fmt::format("materials[{}].path", i), *problem, true});
    }
  }
}

void check_document(const json& doc, std::vector<Violation>& out) {
  if (!doc.is_object()) {
    out.push_back({"$", "document must be an object"});
    return;
  }
  auto sv = doc.find("schema_version");
  if (sv == doc.end() || !sv->is_number_integer() || sv->get<int>() != kSchemaVersion) {
    out.push_back({"schema_version", "must be 1"});
  }
  auto id = doc.find("id");
  if (id == doc.end() || !id->is_string()) out.push_back({"id", "missing or not a string"});

  auto domain = doc.find("domain");
  if (domain == doc.end() || !domain->is_string()) {
    out.push_back({"domain", "missing or not a string"});
  } else if (!parse_domain(domain->get<std::string>())) {
    out.push_back({"domain", fmt::format("unknown domain '{}' (expected Display, Analysis, Data "
                                         "or Game)",
                                         domain->get<std::string>())});
  }

  auto desc = doc.find("description");
  if (desc != doc.end() && !desc->is_string()) {
    out.push_back({"description", "must be a string"});
  }

  auto features = doc.find("features");
  if (features == doc.end() || !features->is_array()) {
    out.push_back({"features", "missing or not an array"});
  } else {
    for (std::size_t i = 0; i < features->size(); ++i) {
      const auto& f = (*features)[i];
      if (!f.is_object() || !f.contains("index") || !f["index"].is_number_integer() ||
          !f.contains("text") || !f["text"].is_string()) {
        out.push_back({fmt::format("features[{}]", i), "expected {index: int, text: string}"});
      }
    }
  }

  auto materials = doc.find("materials");
  if (materials != doc.end()) {
    if (!materials->is_array()) {
      out.push_back({"materials", "must be an array"});
    } else {
      for (std::size_t i = 0; i < materials->size(); ++i) {
        const auto& m = (*materials)[i];
        if (!m.is_object() || !m.contains("path") || !m["path"].is_string()) {
          out.push_back({fmt::format("materials[{}]", i), "expected {kind, path, note?}"});
          continue;
        }
        if (m.contains("kind") &&
            (!m["kind"].is_string() || !parse_material_kind(m["kind"].get<std::string>()))) {
          out.push_back({fmt::format("materials[{}].kind", i), "unknown material kind"});
        }
        if (m.contains("note") && !m["note"].is_string() && !m["note"].is_null()) {
          out.push_back({fmt::format("materials[{}].note", i), "must be a string"});
        }
      }
    }
  }
}

TaskSpec convert(const json& doc) {
  TaskSpec task;
  task.id = doc.at("id").get<std::string>();
  task.domain = *parse_domain(doc.at("domain").get<std::string>());
  task.description = doc.value("description", std::string{});
  for (const auto& f : doc.at("features")) {
    task.features.push_back({f.at("index").get<int>(), f.at("text").get<std::string>()});
  }
  if (auto it = doc.find("materials"); it != doc.end()) {
    for (const auto& m : *it) {
      MaterialRef ref;
      ref.kind = m.contains("kind") ? *parse_material_kind(m["kind"].get<std::string>())
                                    : MaterialKind::other;
      ref.path = m.at("path").get<std::string>();
      if (m.contains("note") && m["note"].is_string()) ref.note = m["note"].get<std::string>();
      task.materials.push_back(std::move(ref));
    }
  }
  return task;
}

std::vector<Violation> document_violations(const json& doc) {
  std::vector<Violation> out;
  check_document(doc, out);
  if (out.empty()) check_typed(convert(doc), out);
  return out;
}

std::string join(const std::vector<Violation>& violations) {
  std::string msg;
  for (const auto& v : violations) {
    if (!msg.empty()) msg += "; ";
    msg += v.field + ": " + v.message;
  }
  return msg;
}

}  // namespace

std::string_view to_string(Domain domain) {
  switch (domain) {
    case Domain::Display: return "Display";
    case Domain::Analysis: return "Analysis";
    case Domain::Data: return "Data";
    case Domain::Game: return "Game";
  }
  return "Display";
}

std::optional<Domain> parse_domain(std::string_view text) {
  for (Domain d : {Domain::Display, Domain::Analysis, Domain::Data, Domain::Game}) {
    if (to_string(d) == text) return d;
  }
  return std::nullopt;
}

std::string_view to_string(MaterialKind kind) {
  switch (kind) {
    case MaterialKind::image: return "image";
    case MaterialKind::audio: return "audio";
    case MaterialKind::dataset: return "dataset";
    case MaterialKind::document: return "document";
    case MaterialKind::other: return "other";
  }
  return "other";
}

std::optional<MaterialKind> parse_material_kind(std::string_view text) {
  for (MaterialKind k : {MaterialKind::image, MaterialKind::audio, MaterialKind::dataset,
                         MaterialKind::document, MaterialKind::other}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

ProjectUnderTest make_project(std::string task_id, std::string_view target,
                              std::optional<std::string> deploy_hint) {
  ProjectUnderTest p;
  p.task_id = std::move(task_id);
  if (target.find("://") != std::string_view::npos) {
    p.target = UrlTarget{std::string(target)};
  } else {
    p.target = DirectoryTarget{fs::path(target)};
  }
  p.deploy_hint = std::move(deploy_hint);
  return p;
}

std::vector<std::string> validate_task(const TaskSpec& task) {
  std::vector<Violation> out;
  check_typed(task, out);
  return render(out);
}

std::vector<std::string> validate_task_document(const json& doc) {
  return render(document_violations(doc));
}

std::vector<std::string> validate_labels(const HumanLabels& labels, const TaskSpec& task) {
  std::vector<std::string> out;
  if (labels.task_id != task.id) {
    out.push_back(fmt::format("task_id: '{}' does not match task '{}'", labels.task_id, task.id));
  }
  std::set<int> seen;
  for (std::size_t i = 0; i < labels.feature_labels.size(); ++i) {
    const int idx = labels.feature_labels[i].feature_index;
    if (idx < 1 || idx > static_cast<int>(task.features.size())) {
      out.push_back(fmt::format("feature_labels[{}].feature_index: {} references no feature", i, idx));
    } else if (!seen.insert(idx).second) {
      out.push_back(fmt::format("feature_labels[{}].feature_index: duplicate {}", i, idx));
    }
  }
  if (labels.annotator_count < 1) out.push_back("annotator_count: must be at least 1");
  return out;
}

TaskSpec task_from_json(const json& doc) {
  auto violations = document_violations(doc);
  if (!violations.empty()) throw Error(Errc::schema_violation, join(violations));
  return convert(doc);
}

nlohmann::ordered_json task_to_json(const TaskSpec& task) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["id"] = task.id;
  doc["domain"] = std::string(to_string(task.domain));
  doc["description"] = task.description;
  doc["features"] = nlohmann::ordered_json::array();
  for (const auto& f : task.features) doc["features"].push_back({{"index", f.index}, {"text", f.text}});
  doc["materials"] = nlohmann::ordered_json::array();
  for (const auto& m : task.materials) {
    nlohmann::ordered_json mj{{"kind", std::string(to_string(m.kind))}, {"path", m.path}};
    if (m.note) mj["note"] = *m.note;
    doc["materials"].push_back(std::move(mj));
  }
  return doc;
}

fs::path materials_directory(const fs::path& task_path) {
  return task_path.parent_path() / "materials";
}

TaskSpec load_task(const fs::path& path) {
  if (!fs::exists(path)) throw Error(Errc::missing_file, "task document not found: " + path.string());
  const json doc = read_json_file(path);

  auto violations = document_violations(doc);
  std::vector<Violation> structural;
  std::vector<Violation> paths;
  for (auto& v : violations) (v.material_path ? paths : structural).push_back(std::move(v));
  if (!structural.empty()) {
    throw Error(Errc::schema_violation, path.string() + ": " + join(structural));
  }
  if (!paths.empty()) throw Error(Errc::dangling_material, path.string() + ": " + join(paths));

  TaskSpec task = convert(doc);
  const fs::path dir = materials_directory(path);
  for (std::size_t i = 0; i < task.materials.size(); ++i) {
    const fs::path file = dir / task.materials[i].path;
    if (!fs::is_regular_file(file)) {
      throw Error(Errc::dangling_material,
                  fmt::format("{}: materials[{}].path: '{}' not found under {}", path.string(), i,
                              task.materials[i].path, dir.string()));
    }
  }
  return task;
}

void save_task(const TaskSpec& task, const fs::path& path) {
  write_json_file(path, task_to_json(task));
}

std::vector<TaskSpec> load_task_suite(const fs::path& directory) {
  if (!fs::is_directory(directory)) {
    throw Error(Errc::missing_file, "task suite directory not found: " + directory.string());
  }
  std::vector<TaskSpec> tasks;
  for (const auto& entry : fs::recursive_directory_iterator(directory)) {
    if (entry.is_regular_file() && entry.path().filename() == "task.json") {
      tasks.push_back(load_task(entry.path()));
    }
  }
  std::sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < tasks.size(); ++i) {
    if (tasks[i].id == tasks[i - 1].id) {
      throw Error(Errc::schema_violation, "duplicate task id in suite: " + tasks[i].id);
    }
  }
  return tasks;
}

HumanLabels labels_from_json(const json& doc) {
  require_schema_version(doc, "labels");
  HumanLabels labels;
  try {
    labels.task_id = doc.at("task_id").get<std::string>();
    for (const auto& item : doc.at("feature_labels")) {
      const auto token = item.at("result").get<std::string>();
      auto result = parse_outcome(token);
      if (!result) throw Error(Errc::unknown_token, "feature_labels: unknown result '" + token + "'");
      labels.feature_labels.push_back({item.at("feature_index").get<int>(), *result});
    }
    if (auto it = doc.find("case_labels"); it != doc.end() && !it->is_null()) {
      std::vector<CaseLabel> cases;
      for (const auto& item : *it) {
        const auto token = item.at("result").get<std::string>();
        auto result = parse_outcome(token);
        if (!result) throw Error(Errc::unknown_token, "case_labels: unknown result '" + token + "'");
        cases.push_back({item.at("case_id").get<int>(), *result});
      }
      labels.case_labels = std::move(cases);
    }
    labels.annotator_count = doc.value("annotator_count", 1);
  } catch (const json::exception& e) {
    throw Error(Errc::schema_violation, std::string("labels: ") + e.what());
  }
  return labels;
}

nlohmann::ordered_json labels_to_json(const HumanLabels& labels) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["task_id"] = labels.task_id;
  doc["feature_labels"] = nlohmann::ordered_json::array();
  for (const auto& l : labels.feature_labels) {
    doc["feature_labels"].push_back(
        {{"feature_index", l.feature_index}, {"result", std::string(to_label_string(l.result))}});
  }
  if (labels.case_labels) {
    doc["case_labels"] = nlohmann::ordered_json::array();
    for (const auto& l : *labels.case_labels) {
      doc["case_labels"].push_back(
          {{"case_id", l.case_id}, {"result", std::string(to_label_string(l.result))}});
    }
  }
  doc["annotator_count"] = labels.annotator_count;
  return doc;
}

HumanLabels load_labels(const fs::path& path) { return labels_from_json(read_json_file(path)); }

void save_labels(const HumanLabels& labels, const fs::path& path) {
  write_json_file(path, labels_to_json(labels));
}

double human_quality(const HumanLabels& labels) {
  if (labels.feature_labels.empty()) {
    throw Error(Errc::empty_input, "human_quality: no feature labels for " + labels.task_id);
  }
  const auto passed = std::count_if(labels.feature_labels.begin(), labels.feature_labels.end(),
                                    [](const FeatureLabel& l) { return l.result == Outcome::Pass; });
  return static_cast<double>(passed) / static_cast<double>(labels.feature_labels.size());
}

std::optional<double> human_case_quality(const HumanLabels& labels) {
  if (!labels.case_labels || labels.case_labels->empty()) return std::nullopt;
  const auto& cases = *labels.case_labels;
  const auto passed = std::count_if(cases.begin(), cases.end(),
                                    [](const CaseLabel& l) { return l.result == Outcome::Pass; });
  return static_cast<double>(passed) / static_cast<double>(cases.size());
}

}  // namespace appjudge::taskmodel
