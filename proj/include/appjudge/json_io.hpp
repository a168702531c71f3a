#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace appjudge {

/// Parses a JSON file. Throws Error{missing_file} when absent and
/// Error{schema_violation} on malformed text.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Writes `doc` pretty-printed (4-space indent, trailing newline). Parent
/// directories are created. Throws Error{io} when the file cannot be written.
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& doc);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Rejects documents whose schema_version is missing or not 1.
void require_schema_version(const nlohmann::json& doc, const std::string& what);

}  // namespace appjudge
