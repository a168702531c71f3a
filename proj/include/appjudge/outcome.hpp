#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace appjudge {

/// Three-valued judgment shared by agent verdicts and human labels.
/// Human `true`/`false`/`uncertain` alias Pass/Fail/Uncertain.
enum class Outcome { Pass, Fail, Uncertain };

std::string_view to_string(Outcome outcome);

/// Human-label spelling: true / false / uncertain.
std::string_view to_label_string(Outcome outcome);

/// Accepts Pass/Fail/Uncertain and true/false/uncertain, case-insensitive,
/// after trimming whitespace and trailing punctuation. nullopt for anything
/// else.
std::optional<Outcome> parse_outcome(std::string_view token);

/// Lowercase, trim, drop trailing punctuation and surrounding quotes.
std::string normalize_token(std::string_view token);

}  // namespace appjudge
