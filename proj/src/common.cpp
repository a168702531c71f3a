#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "appjudge/error.hpp"
#include "appjudge/json_io.hpp"
#include "appjudge/outcome.hpp"

namespace appjudge {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::missing_file: return "missing file";
    case Errc::schema_violation: return "schema violation";
    case Errc::dangling_material: return "dangling material";
    case Errc::precondition: return "precondition violated";
    case Errc::length_mismatch: return "length mismatch";
    case Errc::empty_input: return "empty input";
    case Errc::out_of_range: return "out of range";
    case Errc::unknown_token: return "unknown token";
    case Errc::transport: return "transport failure";
    case Errc::authentication: return "authentication failure";
    case Errc::over_limit: return "request over provider limits";
    case Errc::retries_exhausted: return "retries exhausted";
    case Errc::unparseable: return "unparseable reply";
    case Errc::count_violation: return "count violation";
    case Errc::unreachable: return "unreachable target";
    case Errc::invalid_spec: return "invalid simulated-app spec";
    case Errc::session_closed: return "session closed";
    case Errc::script_parse: return "script parse error";
    case Errc::io: return "i/o error";
    case Errc::unmatched_task: return "unmatched task id";
  }
  return "unknown error";
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Pass: return "Pass";
    case Outcome::Fail: return "Fail";
    case Outcome::Uncertain: return "Uncertain";
  }
  return "Uncertain";
}

std::string_view to_label_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Pass: return "true";
    case Outcome::Fail: return "false";
    case Outcome::Uncertain: return "uncertain";
  }
  return "uncertain";
}

std::string normalize_token(std::string_view token) {
  auto is_trim = [](unsigned char c) {
    return std::isspace(c) || c == '"' || c == '\'' || c == '`' || c == '*';
  };
  while (!token.empty() && is_trim(token.front())) token.remove_prefix(1);
  while (!token.empty() &&
         (is_trim(token.back()) || std::ispunct(static_cast<unsigned char>(token.back())))) {
    token.remove_suffix(1);
  }
  std::string out(token);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::optional<Outcome> parse_outcome(std::string_view token) {
  const std::string t = normalize_token(token);
  if (t == "pass" || t == "true") return Outcome::Pass;
  if (t == "fail" || t == "false") return Outcome::Fail;
  if (t == "uncertain") return Outcome::Uncertain;
  return std::nullopt;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::missing_file, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::schema_violation, path.string() + ": " + e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::missing_file, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::io, "write failed for " + path.string());
}

void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& doc) {
  write_text_file(path, doc.dump(4) + "\n");
}

void require_schema_version(const nlohmann::json& doc, const std::string& what) {
  if (!doc.is_object()) throw Error(Errc::schema_violation, what + ": document is not an object");
  auto it = doc.find("schema_version");
  if (it == doc.end() || !it->is_number_integer() || it->get<int>() != 1) {
    throw Error(Errc::schema_violation, what + ": schema_version must be 1");
  }
}

}  // namespace appjudge
