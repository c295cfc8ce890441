#pragma once

// Task Completion and the deterministic diagnostics.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "eva/error.hpp"
#include "eva/metric_outcome.hpp"
#include "eva/reconcile.hpp"
#include "eva/scenario_store.hpp"
#include "eva/text.hpp"

namespace eva {

inline json to_json(const SessionCheck& c) {
  json mm = json::array();
  for (const auto& m : c.mismatches)
    mm.push_back({{"key", m.key}, {"expected", m.expected}, {"actual", m.actual ? *m.actual : json(nullptr)},
                  {"present", m.actual.has_value()}});
  return {{"passed", c.passed}, {"mismatches", mm}};
}

/// Session gate first, then exact database-hash equality.
inline MetricOutcome task_completion(const ScenarioState& expected, const ScenarioState& actual) {
  auto session = session_superset_check(expected.session, actual.session);
  json details = {{"session", to_json(session)}};
  if (!session.passed) {
    details["reason"] = "session_mismatch";
    return gated_outcome("task_completion", 0.0, 1.0, Comparator::equals, details);
  }
  auto he = to_hex(db_hash(expected));
  auto ha = to_hex(db_hash(actual));
  details["expected_hash"] = he;
  details["actual_hash"] = ha;
  if (he == ha) return gated_outcome("task_completion", 1.0, 1.0, Comparator::equals, details);
  details["reason"] = "state_mismatch";
  details["diff"] = to_json(diff_states(expected, actual));
  return gated_outcome("task_completion", 0.0, 1.0, Comparator::equals, details);
}

inline MetricOutcome authentication_success(const json& expected_session, const json& actual_session) {
  auto c = session_superset_check(expected_session, actual_session);
  return diagnostic_outcome("authentication_success", c.passed ? 1.0 : 0.0, to_json(c));
}

struct TurnLatency {
  int turn_index = 0;
  std::optional<double> latency_s;  ///< absent when the agent never responded
  bool tool_turn = false;
};

struct LatencyStats {
  std::vector<TurnLatency> turns;
  std::optional<double> overall_s;
  std::optional<double> with_tools_s;
  std::optional<double> without_tools_s;
};

/// First assistant start minus last user end, per user turn, in seconds.
inline LatencyStats response_latency_stats(const std::vector<Turn>& turns) {
  LatencyStats st;
  double sum = 0, sum_tool = 0, sum_plain = 0;
  int n = 0, n_tool = 0, n_plain = 0;
  for (std::size_t i = 1; i < turns.size(); ++i) {
    const auto& t = turns[i];
    TurnLatency tl{t.index, std::nullopt, t.has_tool_call};
    if (!t.user_spans.empty() && !t.assistant_spans.empty()) {
      double last_end = t.user_spans.front().end_ms;
      for (const auto& u : t.user_spans) last_end = std::max(last_end, u.end_ms);
      double first_start = t.assistant_spans.front().start_ms;
      for (const auto& a : t.assistant_spans) first_start = std::min(first_start, a.start_ms);
      const double s = (first_start - last_end) / 1000.0;
      tl.latency_s = s;
      sum += s;
      ++n;
      if (t.has_tool_call) {
        sum_tool += s;
        ++n_tool;
      } else {
        sum_plain += s;
        ++n_plain;
      }
    }
    st.turns.push_back(tl);
  }
  if (n) st.overall_s = sum / n;
  if (n_tool) st.with_tools_s = sum_tool / n_tool;
  if (n_plain) st.without_tools_s = sum_plain / n_plain;
  return st;
}

inline MetricOutcome response_latency_outcome(const std::vector<Turn>& turns) {
  auto st = response_latency_stats(turns);
  json per = json::array();
  for (const auto& t : st.turns)
    per.push_back({{"turn_index", t.turn_index},
                   {"latency_s", t.latency_s ? json(*t.latency_s) : json(nullptr)},
                   {"tool_turn", t.tool_turn}});
  json details = {{"turns", per}};
  if (st.with_tools_s) details["with_tools_s"] = *st.with_tools_s;
  if (st.without_tools_s) details["without_tools_s"] = *st.without_tools_s;
  return diagnostic_outcome("response_latency", st.overall_s.value_or(0.0), details);
}

struct BucketBounds {
  double early_ms = 200.0;
  double on_time_upper_ms = 4000.0;
  double on_time_upper_tool_ms = 6000.0;
};

struct BucketRates {
  double early = 0.0;
  double on_time = 0.0;
  double late = 0.0;
  int turns = 0;
};

enum class Bucket { early, on_time, late };

inline Bucket bucket_of(std::optional<double> latency_ms, bool tool, const BucketBounds& b) {
  if (!latency_ms) return Bucket::late;
  if (*latency_ms < b.early_ms) return Bucket::early;
  if (*latency_ms < (tool ? b.on_time_upper_tool_ms : b.on_time_upper_ms)) return Bucket::on_time;
  return Bucket::late;
}

/// Early / on-time / late shares over user turns; a missing response is late.
inline BucketRates bucket_turns(const std::vector<Turn>& turns, const BucketBounds& bounds = {}) {
  auto st = response_latency_stats(turns);
  if (st.turns.empty()) throw Error(ErrorKind::no_scorable_turns, "no user turns to bucket");
  int early = 0, on_time = 0, late = 0;
  for (const auto& t : st.turns) {
    std::optional<double> ms;
    if (t.latency_s) ms = *t.latency_s * 1000.0;
    switch (bucket_of(ms, t.tool_turn, bounds)) {
      case Bucket::early: ++early; break;
      case Bucket::on_time: ++on_time; break;
      case Bucket::late: ++late; break;
    }
  }
  BucketRates r;
  r.turns = static_cast<int>(st.turns.size());
  r.early = static_cast<double>(early) / r.turns;
  r.on_time = static_cast<double>(on_time) / r.turns;
  r.late = static_cast<double>(late) / r.turns;
  return r;
}

enum class EndCause { user_end_call, agent_timeout, abnormal };

constexpr std::string_view to_string(EndCause c) {
  switch (c) {
    case EndCause::user_end_call: return "user_end_call";
    case EndCause::agent_timeout: return "agent_timeout";
    case EndCause::abnormal: return "abnormal";
  }
  return "?";
}

/// user_end_call when the user hung up; agent_timeout when no assistant
/// audio begins within the timeout after the final user speech; otherwise
/// the log simply stops and the ending is abnormal.
inline EndCause end_cause(const ReconciledConversation& conv, double inactivity_timeout_ms = 30000.0) {
  if (conv.end_call_ms) return EndCause::user_end_call;
  if (conv.turns.size() < 2) return EndCause::abnormal;
  const auto& last = conv.turns.back();
  if (last.user_spans.empty()) return EndCause::abnormal;
  double last_user_end = last.user_spans.front().end_ms;
  for (const auto& u : last.user_spans) last_user_end = std::max(last_user_end, u.end_ms);
  for (const auto& a : last.assistant_spans)
    if (a.start_ms >= last_user_end && a.start_ms - last_user_end <= inactivity_timeout_ms) return EndCause::abnormal;
  bool responded_inside = std::any_of(last.assistant_spans.begin(), last.assistant_spans.end(),
                                      [&](const AudioSpan& a) { return a.start_ms < last_user_end; });
  return responded_inside ? EndCause::abnormal : EndCause::agent_timeout;
}

inline MetricOutcome conversation_completion(const ReconciledConversation& conv,
                                             double inactivity_timeout_ms = 30000.0) {
  auto cause = end_cause(conv, inactivity_timeout_ms);
  return diagnostic_outcome("conversation_completion", cause == EndCause::user_end_call ? 1.0 : 0.0,
                            {{"end_cause", std::string(to_string(cause))}});
}

inline std::vector<std::string> wer_tokens(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& tok : text::split_ws(text::to_lower(s))) {
    auto t = text::strip_punct(tok);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

/// Word-level (S + D + I) / N.
inline double word_error_rate(std::string_view reference, std::string_view hypothesis) {
  const auto ref = wer_tokens(reference);
  const auto hyp = wer_tokens(hypothesis);
  if (ref.empty()) throw Error(ErrorKind::empty_input, "WER reference is empty after tokenization");
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[hyp.size()]) / static_cast<double>(ref.size());
}

/// Mean per-turn WER of the transcribed user text against what the
/// simulator said. Turns without a reference are skipped.
inline MetricOutcome stt_wer(const std::vector<Turn>& turns) {
  double sum = 0.0;
  int n = 0;
  json per = json::array();
  for (std::size_t i = 1; i < turns.size(); ++i) {
    const auto ref = strip_tags(turns[i].intended_user);
    if (wer_tokens(ref).empty()) continue;
    const double w = word_error_rate(ref, strip_tags(turns[i].transcribed_user));
    sum += w;
    ++n;
    per.push_back({{"turn_index", turns[i].index}, {"wer", w}});
  }
  return diagnostic_outcome("stt_wer", n ? sum / n : 0.0, {{"turns", per}, {"rated_turns", n}});
}

inline double tool_call_validity(const std::vector<ToolCallRecord>& calls, const ToolCatalog& catalog) {
  if (calls.empty()) return 1.0;
  std::size_t ok = 0;
  for (const auto& c : calls) ok += tool_call_is_valid(c, catalog) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(calls.size());
}

inline MetricOutcome tool_call_validity_outcome(const std::vector<ToolCallRecord>& calls,
                                                const ToolCatalog& catalog) {
  json invalid = json::array();
  for (const auto& c : calls)
    if (!tool_call_is_valid(c, catalog)) invalid.push_back(c.call_id);
  return diagnostic_outcome("tool_call_validity", tool_call_validity(calls, catalog),
                            {{"calls", calls.size()}, {"invalid_call_ids", invalid}});
}

}  // namespace eva
