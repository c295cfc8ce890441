#pragma once

// Judge verdict aggregation and the simulation validation gate.
//
// Verdicts are JSON documents in the judges' response formats. A JudgePort
// turns (metric, pipeline, bundle) into a verdict; the engine only ever
// aggregates what comes back.

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "eva/error.hpp"
#include "eva/log_model.hpp"
#include "eva/metric_outcome.hpp"
#include "eva/reconcile.hpp"
#include "eva/rng.hpp"

namespace eva {

namespace metric {
inline constexpr std::string_view faithfulness = "faithfulness";
inline constexpr std::string_view conversation_progression = "conversation_progression";
inline constexpr std::string_view conciseness = "conciseness";
inline constexpr std::string_view speech_fidelity = "speech_fidelity";
inline constexpr std::string_view user_behavioral_fidelity = "user_behavioral_fidelity";
inline constexpr std::string_view user_speech_fidelity = "user_speech_fidelity";
}  // namespace metric

inline constexpr std::array<std::string_view, 5> kFaithfulnessDimensions = {
    "fabricating_tool_parameters", "misrepresenting_tool_result", "violating_policies", "failing_to_disambiguate",
    "hallucination"};

inline constexpr std::array<std::string_view, 4> kProgressionDimensions = {
    "unnecessary_tool_calls", "information_loss", "redundant_statements", "question_quality"};

inline constexpr std::array<std::string_view, 5> kCorruptionTypes = {
    "extra_modifications", "premature_ending", "missing_information", "duplicate_modifications",
    "decision_tree_violation"};

struct JudgeThresholds {
  double faithfulness = 0.5;
  double conversation_progression = 0.5;
  double conciseness = 0.5;
  double speech_fidelity = 0.95;
};

inline double normalize_rating(int r) {
  if (r < 1 || r > 3) throw Error(ErrorKind::out_of_range, "rating " + std::to_string(r) + " outside 1..3");
  return (r - 1) / 2.0;
}

namespace detail {

inline int int_rating(const json& v, const std::string& where) {
  if (!v.is_number_integer() && !(v.is_number_float() && v.get<double>() == static_cast<int>(v.get<double>())))
    throw Error(ErrorKind::schema, where + ": rating must be an integer");
  return static_cast<int>(v.get<double>());
}

struct Dimension {
  std::string name;
  int rating = 3;
  bool flagged = false;
};

template <std::size_t N>
std::vector<Dimension> read_dimensions(const json& verdict, const std::array<std::string_view, N>& names,
                                       std::string_view metric) {
  if (!verdict.is_object() || !verdict.contains("dimensions") || !verdict["dimensions"].is_object())
    throw Error(ErrorKind::schema, std::string(metric) + " verdict needs a \"dimensions\" object");
  const auto& dims = verdict["dimensions"];
  std::vector<Dimension> out;
  for (auto name : names) {
    auto it = dims.find(std::string(name));
    if (it == dims.end() || !it->is_object() || !it->contains("rating"))
      throw Error(ErrorKind::missing_dimension, std::string(metric) + ": missing dimension '" + std::string(name) + "'");
    Dimension d;
    d.name = name;
    d.rating = int_rating((*it)["rating"], std::string(name));
    normalize_rating(d.rating);
    d.flagged = it->value("flagged", false);
    out.push_back(d);
  }
  return out;
}

inline json dimensions_json(const std::vector<Dimension>& dims) {
  json j = json::object();
  for (const auto& d : dims) j[d.name] = {{"rating", d.rating}, {"flagged", d.flagged}};
  return j;
}

inline const json& turn_list(const json& verdict, std::string_view metric) {
  if (verdict.is_array()) return verdict;
  if (verdict.is_object() && verdict.contains("turns") && verdict["turns"].is_array()) return verdict["turns"];
  throw Error(ErrorKind::schema, std::string(metric) + " verdict needs a per-turn list");
}

}  // namespace detail

/// Overall rating is the minimum over the five dimensions.
inline MetricOutcome faithfulness_score(const json& verdict, double threshold = 0.5) {
  auto dims = detail::read_dimensions(verdict, kFaithfulnessDimensions, metric::faithfulness);
  int overall = 3;
  for (const auto& d : dims) overall = std::min(overall, d.rating);
  return gated_outcome(std::string(metric::faithfulness), normalize_rating(overall), threshold, Comparator::at_least,
                       {{"rating", overall}, {"dimensions", detail::dimensions_json(dims)}});
}

/// 3 when nothing is flagged; 2 when one or two dimensions are flagged at
/// rating 2 and none is rated 1; 1 otherwise.
inline MetricOutcome conversation_progression_score(const json& verdict, double threshold = 0.5) {
  auto dims = detail::read_dimensions(verdict, kProgressionDimensions, metric::conversation_progression);
  int flagged = 0;
  bool any_one = false;
  for (const auto& d : dims) {
    if (d.rating < 3 || d.flagged) ++flagged;
    if (d.rating == 1) any_one = true;
  }
  int overall = 1;
  if (flagged == 0)
    overall = 3;
  else if (flagged <= 2 && !any_one)
    overall = 2;
  return gated_outcome(std::string(metric::conversation_progression), normalize_rating(overall), threshold,
                       Comparator::at_least,
                       {{"rating", overall}, {"flagged_dimensions", flagged}, {"dimensions", detail::dimensions_json(dims)}});
}

/// Mean normalized rating over turns that carry a rating.
inline MetricOutcome conciseness_score(const json& verdict, double threshold = 0.5) {
  const auto& turns = detail::turn_list(verdict, metric::conciseness);
  double sum = 0.0;
  int rated = 0;
  std::map<std::string, int> modes;
  for (const auto& t : turns) {
    if (!t.contains("rating") || t["rating"].is_null()) continue;
    sum += normalize_rating(detail::int_rating(t["rating"], "conciseness turn"));
    ++rated;
    for (const auto& m : t.value("failure_modes", json::array()))
      if (m.is_string()) ++modes[m.get<std::string>()];
  }
  if (rated == 0) throw Error(ErrorKind::no_rated_turns, "conciseness verdict has no rated turns");
  json rates = json::object();
  for (const auto& [m, c] : modes) rates[m] = static_cast<double>(c) / rated;
  return gated_outcome(std::string(metric::conciseness), sum / rated, threshold, Comparator::at_least,
                       {{"rated_turns", rated}, {"failure_mode_rates", rates}});
}

/// Mean binary rating. For s2s, turns with has_entities = false drop out of
/// both numerator and denominator.
inline MetricOutcome speech_fidelity_score(const json& verdict, PipelineType pipeline, double threshold = 0.95) {
  const auto& turns = detail::turn_list(verdict, metric::speech_fidelity);
  int included = 0, good = 0, excluded = 0;
  for (const auto& t : turns) {
    if (pipeline == PipelineType::s2s) {
      if (!t.contains("has_entities") || !t["has_entities"].is_boolean())
        throw Error(ErrorKind::schema, "s2s speech fidelity turns need has_entities");
      if (!t["has_entities"].get<bool>()) {
        ++excluded;
        continue;
      }
    }
    if (!t.contains("rating")) throw Error(ErrorKind::schema, "speech fidelity turn without rating");
    int r = detail::int_rating(t["rating"], "speech fidelity turn");
    if (r != 0 && r != 1) throw Error(ErrorKind::out_of_range, "speech fidelity ratings are 0 or 1");
    ++included;
    good += r;
  }
  if (included == 0) throw Error(ErrorKind::undefined_score, "speech fidelity has no included turns");
  return gated_outcome(std::string(metric::speech_fidelity), static_cast<double>(good) / included, threshold,
                       Comparator::at_least, {{"included_turns", included}, {"excluded_turns", excluded}});
}

// ---------------------------------------------------------------------------
// Validation gate

struct ValidationDecision {
  bool accept = true;
  std::vector<std::string> reasons;
  bool judges_consulted = false;
};

inline json to_json(const ValidationDecision& d) {
  return {{"decision", d.accept ? "accept" : "rerun"}, {"reasons", d.reasons}, {"judges_consulted", d.judges_consulted}};
}

/// valid_end comes from the timeline. When it fails the decision is made
/// without the judge verdicts, which may then be null.
inline ValidationDecision validation_decision(bool valid_end, const json& behavioral, const json& user_speech) {
  ValidationDecision d;
  if (!valid_end) {
    d.accept = false;
    d.reasons.push_back("conversation_valid_end");
    return d;
  }
  d.judges_consulted = true;
  if (!behavioral.is_object() || !behavioral.contains("rating"))
    throw Error(ErrorKind::schema, "behavioral verdict needs a rating");
  const int rating = detail::int_rating(behavioral["rating"], "user_behavioral_fidelity");
  if (rating != 0 && rating != 1) throw Error(ErrorKind::out_of_range, "behavioral rating must be 0 or 1");
  if (rating == 0) {
    bool named = false;
    const auto analysis = behavioral.value("corruption_analysis", json::object());
    for (auto type : kCorruptionTypes) {
      auto it = analysis.find(std::string(type));
      if (it != analysis.end() && it->is_object() && it->value("detected", false)) {
        d.reasons.push_back("user_behavioral_fidelity: " + std::string(type));
        named = true;
      }
    }
    if (!named) d.reasons.push_back("user_behavioral_fidelity");
  }
  for (const auto& t : detail::turn_list(user_speech, metric::user_speech_fidelity)) {
    const int r = detail::int_rating(t.at("rating"), "user_speech_fidelity turn");
    normalize_rating(r);
    if (r == 1) d.reasons.push_back("user_speech_fidelity: turn " + t.value("turn_id", json(nullptr)).dump());
  }
  d.accept = d.reasons.empty();
  return d;
}

// ---------------------------------------------------------------------------
// Judge ports

class JudgePort {
 public:
  virtual ~JudgePort() = default;
  virtual json judge(std::string_view metric, PipelineType pipeline, const json& bundle) = 0;
};

/// Evaluation bundle handed to judges: the reconciled conversation, the
/// turn ids each per-turn metric rates, and any planted fixture ratings.
inline json make_bundle(const ReconciledConversation& conv, const json& planted = nullptr) {
  json user_turns = json::array(), assistant_turns = json::array();
  for (const auto& t : conv.turns) {
    if (t.index > 0 && !t.user_spans.empty()) user_turns.push_back(t.index);
    if (!t.assistant_spans.empty() || !t.intended_assistant.empty() || !t.transcribed_assistant.empty())
      assistant_turns.push_back(t.index);
  }
  json b = {{"conversation", to_json(conv)}, {"user_turn_ids", user_turns}, {"assistant_turn_ids", assistant_turns}};
  if (!planted.is_null()) b["planted"] = planted;
  return b;
}

/// Deterministic stand-in for model judges. Ratings planted in
/// bundle["planted"][metric] are echoed; everything else is clean.
class MockJudge : public JudgePort {
 public:
  explicit MockJudge(std::uint64_t seed = 0) : seed_(seed) {}

  json judge(std::string_view metric_name, PipelineType pipeline, const json& bundle) override {
    const json plan = bundle.contains("planted") && bundle["planted"].contains(std::string(metric_name))
                          ? bundle["planted"][std::string(metric_name)]
                          : json::object();
    const auto tag = token(metric_name, bundle);
    if (metric_name == metric::faithfulness) return dimensions(kFaithfulnessDimensions, plan, tag, true);
    if (metric_name == metric::conversation_progression) return dimensions(kProgressionDimensions, plan, tag, false);
    if (metric_name == metric::conciseness) {
      json out = json::array();
      const auto ratings = plan.value("ratings", json::object());
      const auto modes = plan.value("failure_modes", json::object());
      for (const auto& id : bundle.value("assistant_turn_ids", json::array())) {
        auto key = id.dump();
        json r = ratings.contains(key) ? ratings[key] : json(3);
        out.push_back({{"turn_id", id},
                       {"explanation", "mock " + tag},
                       {"failure_modes", modes.value(key, json::array())},
                       {"rating", r}});
      }
      return out;
    }
    if (metric_name == metric::speech_fidelity) {
      json turns = json::array();
      const auto ratings = plan.value("ratings", json::object());
      const auto entities = plan.value("has_entities", json::object());
      for (const auto& id : bundle.value("assistant_turn_ids", json::array())) {
        auto key = id.dump();
        json t = {{"turn_id", id}, {"transcript", ""}, {"explanation", "mock " + tag},
                  {"rating", ratings.value(key, 1)}};
        if (pipeline == PipelineType::s2s) t["has_entities"] = entities.value(key, true);
        turns.push_back(t);
      }
      return {{"turns", turns}};
    }
    if (metric_name == metric::user_behavioral_fidelity) {
      json analysis = json::object();
      const auto detected = plan.value("detected", json::array());
      for (auto type : kCorruptionTypes) {
        bool hit = std::find(detected.begin(), detected.end(), json(std::string(type))) != detected.end();
        analysis[std::string(type)] = {{"analysis", "mock " + tag}, {"detected", hit}};
      }
      return {{"corruption_analysis", analysis}, {"rating", plan.value("rating", detected.empty() ? 1 : 0)}};
    }
    if (metric_name == metric::user_speech_fidelity) {
      json turns = json::array();
      const auto ratings = plan.value("ratings", json::object());
      for (const auto& id : bundle.value("user_turn_ids", json::array()))
        turns.push_back({{"turn_id", id}, {"rating", ratings.value(id.dump(), 3)}});
      return {{"turns", turns}};
    }
    throw Error(ErrorKind::schema, "mock judge: unknown metric '" + std::string(metric_name) + "'");
  }

 private:
  template <std::size_t N>
  static json dimensions(const std::array<std::string_view, N>& names, const json& plan, const std::string& tag,
                         bool with_overall) {
    json dims = json::object();
    int overall = 3;
    for (auto name : names) {
      int r = plan.value(std::string(name), 3);
      overall = std::min(overall, r);
      dims[std::string(name)] = {{"evidence", "mock " + tag}, {"flagged", r < 3}, {"rating", r}};
    }
    json out = {{"dimensions", dims}};
    if (with_overall) out["rating"] = overall;
    return out;
  }

  std::string token(std::string_view metric_name, const json& bundle) const {
    std::uint64_t h = mix64(seed_);
    for (unsigned char c : std::string(metric_name) + bundle.dump()) h = mix64(h ^ c);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  std::uint64_t seed_;
};

/// Runs an external command per request: the request JSON arrives on
/// stdin and the verdict JSON is read from stdout.
class ExternalJudge : public JudgePort {
 public:
  explicit ExternalJudge(std::string command) : command_(std::move(command)) {}

  json judge(std::string_view metric_name, PipelineType pipeline, const json& bundle) override {
    json request = {{"metric", metric_name}, {"pipeline", std::string(to_string(pipeline))}, {"bundle", bundle}};
    auto dir = std::filesystem::temp_directory_path();
    std::string path = (dir / "eva_judge_XXXXXX").string();
    int fd = ::mkstemp(path.data());
    if (fd < 0) throw Error(ErrorKind::io, "cannot create judge request file");
    ::close(fd);
    {
      std::ofstream out(path, std::ios::binary);
      out << request.dump();
    }
    std::string cmd = command_ + " < '" + path + "'";
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(::popen(cmd.c_str(), "r"), ::pclose);
    if (!pipe) {
      std::filesystem::remove(path);
      throw Error(ErrorKind::io, "cannot run judge command '" + command_ + "'");
    }
    std::string output;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe.get())) > 0) output.append(buf, n);
    const int status = ::pclose(pipe.release());
    std::filesystem::remove(path);
    if (status != 0) throw Error(ErrorKind::io, "judge command exited with status " + std::to_string(status));
    try {
      return json::parse(output);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::malformed_document, std::string("judge output: ") + e.what());
    }
  }

 private:
  std::string command_;
};

}  // namespace eva
