#include "appjudge/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "appjudge/error.hpp"

namespace appjudge::scoring {

namespace {

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw Error(Errc::length_mismatch, fmt::format("{}: lengths {} and {} differ", what, a, b));
  if (a == 0) throw Error(Errc::empty_input, fmt::format("{}: no values", what));
}

double mean(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

}  // namespace

int binary_score(Outcome result) { return result == Outcome::Pass ? 1 : 0; }

int binary_score(std::string_view token) {
  const auto outcome = parse_outcome(token);
  if (!outcome) throw Error(Errc::unknown_token, fmt::format("unknown result token '{}'", token));
  return binary_score(*outcome);
}

std::string_view to_string(Level level) { return level == Level::case_level ? "case" : "feature"; }

QualityScore case_level_quality(std::span<const judge::CaseVerdict> verdicts) {
  if (verdicts.empty()) throw Error(Errc::empty_input, "case_level_quality: no verdicts");
  int passed = 0;
  for (const auto& v : verdicts) passed += binary_score(v.result);
  const int n = static_cast<int>(verdicts.size());
  return {static_cast<double>(passed) / n, Level::case_level, n};
}

std::string_view to_string(FeatureStrategy strategy) {
  return strategy == FeatureStrategy::all_pass ? "all" : "majority";
}

std::optional<FeatureStrategy> parse_feature_strategy(std::string_view text) {
  if (text == "all" || text == "all_pass") return FeatureStrategy::all_pass;
  if (text == "majority") return FeatureStrategy::majority;
  return std::nullopt;
}

FeatureQuality feature_level_quality(std::span<const judge::CaseVerdict> verdicts,
                                     std::span<const testgen::TestCase> cases, int n_features,
                                     FeatureStrategy strategy) {
  if (verdicts.empty()) throw Error(Errc::empty_input, "feature_level_quality: no verdicts");
  if (n_features < 1) throw Error(Errc::precondition, "feature_level_quality: n_features must be >= 1");

  std::map<int, Outcome> by_case;
  for (const auto& v : verdicts) by_case[v.case_id] = v.result;

  FeatureQuality out;
  out.features.resize(static_cast<std::size_t>(n_features));
  for (int f = 1; f <= n_features; ++f) out.features[static_cast<std::size_t>(f - 1)].feature_index = f;
  for (const auto& c : cases) {
    for (int f : c.linked_features) {
      if (f < 1 || f > n_features) {
        throw Error(Errc::out_of_range, fmt::format("case {} links to feature {} of {}", c.id, f, n_features));
      }
      auto& linked = out.features[static_cast<std::size_t>(f - 1)].linked_cases;
      if (std::find(linked.begin(), linked.end(), c.id) == linked.end()) linked.push_back(c.id);
    }
  }

  int passed_features = 0;
  for (auto& fr : out.features) {
    std::sort(fr.linked_cases.begin(), fr.linked_cases.end());
    int pass = 0;
    for (int id : fr.linked_cases) {
      auto it = by_case.find(id);
      if (it != by_case.end() && it->second == Outcome::Pass) ++pass;
    }
    const int total = static_cast<int>(fr.linked_cases.size());
    if (total == 0) {
      fr.passed = false;
    } else if (strategy == FeatureStrategy::all_pass) {
      fr.passed = pass == total;
    } else {
      fr.passed = pass > total - pass;
    }
    passed_features += fr.passed ? 1 : 0;
  }
  out.score = {static_cast<double>(passed_features) / n_features, Level::feature_level, n_features};
  return out;
}

double accuracy(std::span<const Outcome> agent, std::span<const Outcome> human) {
  require_aligned(agent.size(), human.size(), "accuracy");
  std::size_t match = 0;
  for (std::size_t i = 0; i < agent.size(); ++i) match += binary_score(agent[i]) == binary_score(human[i]) ? 1 : 0;
  return static_cast<double>(match) / static_cast<double>(agent.size());
}

double three_class_accuracy(std::span<const Outcome> agent, std::span<const Outcome> human) {
  require_aligned(agent.size(), human.size(), "three_class_accuracy");
  std::size_t match = 0;
  for (std::size_t i = 0; i < agent.size(); ++i) match += agent[i] == human[i] ? 1 : 0;
  return static_cast<double>(match) / static_cast<double>(agent.size());
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw Error(Errc::length_mismatch, fmt::format("pearson: lengths {} and {} differ", xs.size(), ys.size()));
  }
  if (xs.size() < 2) throw Error(Errc::empty_input, "pearson: at least two points are required");
  const auto constant = [](std::span<const double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo == *hi;
  };
  // a constant input can leave rounding residue in the sums below
  if (constant(xs) || constant(ys)) return std::nullopt;
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double distribution_overlap(std::span<const double> xs, std::span<const double> ys, int bins) {
  if (xs.empty() || ys.empty()) throw Error(Errc::empty_input, "distribution_overlap: empty sample");
  if (bins < 1) throw Error(Errc::precondition, "distribution_overlap: bins must be >= 1");
  const auto histogram = [bins](std::span<const double> values) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double v : values) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(Errc::out_of_range, fmt::format("distribution_overlap: value {} outside [0,1]", v));
      }
      const int b = std::min(static_cast<int>(std::floor(v * bins)), bins - 1);
      h[static_cast<std::size_t>(b)] += 1.0;
    }
    for (auto& x : h) x /= static_cast<double>(values.size());
    return h;
  };
  const auto p = histogram(xs);
  const auto q = histogram(ys);
  double overlap = 0.0;
  for (std::size_t b = 0; b < p.size(); ++b) overlap += std::min(p[b], q[b]);
  return std::clamp(overlap, 0.0, 1.0);
}

double mean_abs_deviation(std::span<const double> method_scores, std::span<const double> human_scores) {
  require_aligned(method_scores.size(), human_scores.size(), "mean_abs_deviation");
  double sum = 0.0;
  for (std::size_t i = 0; i < method_scores.size(); ++i) sum += std::abs(method_scores[i] - human_scores[i]);
  return sum / static_cast<double>(method_scores.size());
}

AlignmentReport align(std::span<const ProjectScores> projects) {
  if (projects.empty()) throw Error(Errc::empty_input, "align: no projects");
  AlignmentReport report;
  report.n_projects = static_cast<int>(projects.size());

  std::vector<Outcome> agent_cases;
  std::vector<Outcome> human_cases;
  std::vector<double> case_q;
  std::vector<double> feature_q;
  std::vector<double> human_q;
  for (const auto& p : projects) {
    if (p.agent_cases.size() != p.human_cases.size()) {
      throw Error(Errc::length_mismatch, fmt::format("align: {} has {} agent and {} human case results", p.task_id,
                                                     p.agent_cases.size(), p.human_cases.size()));
    }
    agent_cases.insert(agent_cases.end(), p.agent_cases.begin(), p.agent_cases.end());
    human_cases.insert(human_cases.end(), p.human_cases.begin(), p.human_cases.end());
    case_q.push_back(p.case_quality);
    feature_q.push_back(p.feature_quality);
    human_q.push_back(p.human_quality);
  }
  report.n_cases = static_cast<int>(agent_cases.size());
  if (!agent_cases.empty()) {
    report.accuracy = accuracy(agent_cases, human_cases);
    report.three_class_accuracy = three_class_accuracy(agent_cases, human_cases);
  } else {
    report.notes.emplace_back("accuracy not computed: no case-level human labels");
  }

  if (projects.size() < 2) {
    report.notes.emplace_back("correlations undefined: fewer than two projects");
  } else {
    report.pearson_case = pearson(case_q, human_q);
    report.pearson_feature = pearson(feature_q, human_q);
    if (!report.pearson_case || !report.pearson_feature) {
      report.notes.emplace_back("a correlation is undefined: zero variance across projects");
    }
  }
  report.overlap_rate = distribution_overlap(feature_q, human_q);
  report.mean_abs_deviation = mean_abs_deviation(feature_q, human_q);
  return report;
}

double round4(double value) { return std::round(value * 10000.0) / 10000.0; }

nlohmann::ordered_json alignment_to_json(const AlignmentReport& report) {
  using oj = nlohmann::ordered_json;
  const auto opt = [](const std::optional<double>& v) { return v ? oj(round4(*v)) : oj("undefined"); };
  oj j;
  j["accuracy"] = report.accuracy ? oj(round4(*report.accuracy)) : oj(nullptr);
  j["three_class_accuracy"] = report.three_class_accuracy ? oj(round4(*report.three_class_accuracy)) : oj(nullptr);
  j["pearson_case"] = opt(report.pearson_case);
  j["pearson_feature"] = opt(report.pearson_feature);
  j["overlap_rate"] = round4(report.overlap_rate);
  j["overlap_method"] = "10-bin histogram intersection (interpretation)";
  j["mean_abs_deviation"] = round4(report.mean_abs_deviation);
  j["n_projects"] = report.n_projects;
  j["n_cases"] = report.n_cases;
  j["notes"] = report.notes;
  return j;
}

}  // namespace appjudge::scoring
