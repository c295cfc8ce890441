#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace eva {

using json = nlohmann::json;

enum class Comparator { at_least, equals };

struct MetricOutcome {
  std::string metric;
  double score = 0.0;
  std::optional<double> pass_threshold;
  std::optional<bool> passed;
  json details = json::object();
  bool diagnostic = false;
};

inline bool meets(double score, double threshold, Comparator cmp) {
  return cmp == Comparator::equals ? score == threshold : score >= threshold;
}

inline MetricOutcome gated_outcome(std::string metric, double score, double threshold,
                                   Comparator cmp = Comparator::at_least, json details = json::object()) {
  MetricOutcome m;
  m.metric = std::move(metric);
  m.score = score;
  m.pass_threshold = threshold;
  m.passed = meets(score, threshold, cmp);
  m.details = std::move(details);
  return m;
}

inline MetricOutcome diagnostic_outcome(std::string metric, double score, json details = json::object()) {
  MetricOutcome m;
  m.metric = std::move(metric);
  m.score = score;
  m.details = std::move(details);
  m.diagnostic = true;
  return m;
}

inline json to_json(const MetricOutcome& m) {
  json j = {{"metric", m.metric}, {"score", m.score}, {"details", m.details}};
  if (m.pass_threshold) {
    j["pass_threshold"] = *m.pass_threshold;
    j["passed"] = *m.passed;
  }
  if (m.diagnostic) j["diagnostic"] = true;
  return j;
}

}  // namespace eva
