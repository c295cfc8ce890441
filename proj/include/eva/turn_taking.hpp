#pragma once

// Per-turn turn-taking scores. Each user turn is routed by its interruption
// flags: clean turns are scored on response latency, agent barge-ins on
// overlap, barge-in count and recovery latency (capped at M), user
// barge-ins on how quickly the agent yielded, and turns with both on the
// smaller of the two.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eva/error.hpp"
#include "eva/metric_outcome.hpp"
#include "eva/reconcile.hpp"

namespace eva {

struct LatencyBreakpoints {
  double hard_early_ms = -500.0;
  double sweet_low_ms = 500.0;
  double sweet_high_ms = 2000.0;
  double hard_late_ms = 3500.0;

  static LatencyBreakpoints standard() { return {}; }
  static LatencyBreakpoints tool() { return {-500.0, 500.0, 3000.0, 5000.0}; }

  void validate() const {
    if (!(hard_early_ms < sweet_low_ms && sweet_low_ms <= sweet_high_ms && sweet_high_ms < hard_late_ms))
      throw Error(ErrorKind::config, "latency breakpoints must satisfy hard_early < sweet_low <= sweet_high < hard_late");
  }
};

struct InterruptParams {
  double m_cap = 0.5;
  double o_max_ms = 2000.0;
  double n_max = 3.0;
  double yield_max_ms = 2000.0;

  void validate() const {
    if (!(m_cap > 0.0 && m_cap <= 1.0) || !(o_max_ms > 0.0) || !(yield_max_ms > 0.0) || !(n_max >= 2.0))
      throw Error(ErrorKind::config, "interrupt params need 0 < M <= 1, o_max > 0, yield_max > 0, N_max >= 2");
  }
};

struct TurnTakingConfig {
  LatencyBreakpoints standard = LatencyBreakpoints::standard();
  LatencyBreakpoints tool = LatencyBreakpoints::tool();
  InterruptParams interrupt;
  double pass_threshold = 0.8;

  void validate() const {
    standard.validate();
    tool.validate();
    interrupt.validate();
  }
};

/// Piecewise-linear: 0 up to hard_early, rising to 1 at sweet_low, flat
/// through sweet_high, falling to 0 at hard_late.
inline double latency_curve(double latency_ms, const LatencyBreakpoints& b) {
  if (latency_ms <= b.hard_early_ms) return 0.0;
  if (latency_ms <= b.sweet_low_ms) return (latency_ms - b.hard_early_ms) / (b.sweet_low_ms - b.hard_early_ms);
  if (latency_ms <= b.sweet_high_ms) return 1.0;
  if (latency_ms < b.hard_late_ms) return (b.hard_late_ms - latency_ms) / (b.hard_late_ms - b.sweet_high_ms);
  return 0.0;
}

inline double overlap_score(double overlap_ms, const InterruptParams& p) {
  return std::max(0.0, p.m_cap * (1.0 - overlap_ms / p.o_max_ms));
}

inline double count_score(int barge_ins, const InterruptParams& p) {
  return std::max(0.0, p.m_cap * (1.0 - (barge_ins - 1) / (p.n_max - 1.0)));
}

/// Negative yield latencies count as an immediate yield.
inline double yield_score(double yield_ms, const InterruptParams& p) {
  return std::max(0.0, 1.0 - std::max(0.0, yield_ms) / p.yield_max_ms);
}

struct AgentInterruptScore {
  double overlap = 0.0;
  double count = 0.0;
  std::optional<double> post;
  double score = 0.0;
};

inline AgentInterruptScore agent_interrupt_score(double overlap_ms, int barge_ins,
                                                 std::optional<double> recovery_latency_ms,
                                                 const LatencyBreakpoints& b, const InterruptParams& p) {
  AgentInterruptScore s;
  s.overlap = overlap_score(overlap_ms, p);
  s.count = count_score(barge_ins, p);
  s.score = std::min(s.overlap, s.count);
  if (recovery_latency_ms) {
    s.post = latency_curve(*recovery_latency_ms, b);
    s.score = std::min(s.score, *s.post);
  }
  return s;
}

enum class TurnClass { uninterrupted, agent_interrupt, user_interrupt, both };

constexpr std::string_view to_string(TurnClass c) {
  switch (c) {
    case TurnClass::uninterrupted: return "uninterrupted";
    case TurnClass::agent_interrupt: return "agent_interrupt";
    case TurnClass::user_interrupt: return "user_interrupt";
    case TurnClass::both: return "both";
  }
  return "?";
}

inline TurnClass classify(const Turn& t) {
  if (t.assistant_interrupted && t.user_interrupted) return TurnClass::both;
  if (t.assistant_interrupted) return TurnClass::agent_interrupt;
  if (t.user_interrupted) return TurnClass::user_interrupt;
  return TurnClass::uninterrupted;
}

struct TurnScore {
  int turn_index = 0;
  TurnClass classification = TurnClass::uninterrupted;
  double score = 0.0;
  bool responded = true;
  bool tool_turn = false;
  std::optional<double> latency_ms;
  std::optional<double> overlap_ms;
  std::optional<int> barge_ins;
  std::optional<double> overlap;
  std::optional<double> count;
  std::optional<double> post;
  std::optional<double> yield_ms;
  std::optional<double> yield;
};

namespace detail {

struct Interval {
  double lo, hi;
};

inline std::vector<Interval> merge_intervals(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> out;
  for (const auto& iv : v) {
    if (iv.hi <= iv.lo) continue;
    if (!out.empty() && iv.lo <= out.back().hi)
      out.back().hi = std::max(out.back().hi, iv.hi);
    else
      out.push_back(iv);
  }
  return out;
}

inline double measure(const std::vector<Interval>& merged) {
  double m = 0.0;
  for (const auto& iv : merged) m += iv.hi - iv.lo;
  return m;
}

inline double intersection(const AudioSpan& a, const AudioSpan& b) {
  return std::max(0.0, std::min(a.end_ms, b.end_ms) - std::max(a.start_ms, b.start_ms));
}

}  // namespace detail

/// Total time both speakers talk at once: the measure of the union of all
/// pairwise user/assistant span intersections.
inline double overlap_ms(const std::vector<AudioSpan>& user, const std::vector<AudioSpan>& assistant) {
  std::vector<detail::Interval> pieces;
  for (const auto& u : user)
    for (const auto& a : assistant) {
      double lo = std::max(u.start_ms, a.start_ms), hi = std::min(u.end_ms, a.end_ms);
      if (hi > lo) pieces.push_back({lo, hi});
    }
  return detail::measure(detail::merge_intervals(std::move(pieces)));
}

/// Assistant spans that overlap user speech by more than 1 ms (at least 1).
inline int barge_in_count(const std::vector<AudioSpan>& user, const std::vector<AudioSpan>& assistant) {
  std::vector<detail::Interval> u;
  for (const auto& s : user) u.push_back({s.start_ms, s.end_ms});
  auto merged = detail::merge_intervals(std::move(u));
  int n = 0;
  for (const auto& a : assistant) {
    double o = 0.0;
    for (const auto& iv : merged) o += std::max(0.0, std::min(a.end_ms, iv.hi) - std::max(a.start_ms, iv.lo));
    if (o > 1.0) ++n;
  }
  return std::max(1, n);
}

inline TurnScore score_turn(const Turn& turn, const Turn* previous, const TurnTakingConfig& cfg) {
  TurnScore ts;
  ts.turn_index = turn.index;
  ts.classification = classify(turn);
  ts.tool_turn = turn.has_tool_call;
  const auto& bp = turn.has_tool_call ? cfg.tool : cfg.standard;
  const auto& p = cfg.interrupt;

  if (turn.assistant_spans.empty() || turn.user_spans.empty()) {
    ts.responded = !turn.assistant_spans.empty();
    ts.score = 0.0;
    return ts;
  }
  double last_user_end = turn.user_spans.front().end_ms;
  double first_user_start = turn.user_spans.front().start_ms;
  for (const auto& u : turn.user_spans) {
    last_user_end = std::max(last_user_end, u.end_ms);
    first_user_start = std::min(first_user_start, u.start_ms);
  }
  double first_asst_start = turn.assistant_spans.front().start_ms;
  for (const auto& a : turn.assistant_spans) first_asst_start = std::min(first_asst_start, a.start_ms);

  if (ts.classification == TurnClass::uninterrupted) {
    ts.latency_ms = first_asst_start - last_user_end;
    ts.score = latency_curve(*ts.latency_ms, bp);
    return ts;
  }

  std::optional<double> agent, yield;
  if (turn.assistant_interrupted) {
    ts.overlap_ms = overlap_ms(turn.user_spans, turn.assistant_spans);
    ts.barge_ins = barge_in_count(turn.user_spans, turn.assistant_spans);
    bool running_at_end = false;
    std::optional<double> settled;
    for (const auto& a : turn.assistant_spans) {
      if (a.start_ms < last_user_end && a.end_ms > last_user_end) running_at_end = true;
      if (a.start_ms >= last_user_end && (!settled || a.start_ms < *settled)) settled = a.start_ms;
    }
    std::optional<double> recovery;
    if (settled && !running_at_end) {
      recovery = *settled - last_user_end;
      ts.latency_ms = recovery;
    }
    auto s = agent_interrupt_score(*ts.overlap_ms, *ts.barge_ins, recovery, bp, p);
    ts.overlap = s.overlap;
    ts.count = s.count;
    ts.post = s.post;
    agent = s.score;
  }
  if (turn.user_interrupted) {
    double prev_end = first_user_start;
    if (previous && !previous->assistant_spans.empty()) {
      prev_end = previous->assistant_spans.front().end_ms;
      for (const auto& a : previous->assistant_spans) prev_end = std::max(prev_end, a.end_ms);
    }
    ts.yield_ms = std::max(0.0, prev_end - first_user_start);
    ts.yield = yield_score(*ts.yield_ms, p);
    yield = ts.yield;
  }
  if (agent && yield)
    ts.score = std::min(*agent, *yield);
  else
    ts.score = agent ? *agent : *yield;
  return ts;
}

inline std::vector<TurnScore> score_turns(const std::vector<Turn>& turns, const TurnTakingConfig& cfg) {
  std::vector<TurnScore> out;
  for (std::size_t i = 1; i < turns.size(); ++i) out.push_back(score_turn(turns[i], &turns[i - 1], cfg));
  return out;
}

inline json to_json(const TurnScore& s) {
  json j = {{"turn_index", s.turn_index},
            {"classification", std::string(to_string(s.classification))},
            {"score", s.score},
            {"responded", s.responded},
            {"tool_turn", s.tool_turn}};
  auto put = [&](const char* k, const auto& v) {
    if (v) j[k] = *v;
  };
  put("latency_ms", s.latency_ms);
  put("overlap_ms", s.overlap_ms);
  put("barge_ins", s.barge_ins);
  put("s_overlap", s.overlap);
  put("s_count", s.count);
  put("s_post", s.post);
  put("yield_ms", s.yield_ms);
  put("s_yield", s.yield);
  return j;
}

/// Mean of per-turn scores over every user turn (the greeting is excluded).
inline MetricOutcome score_conversation(const std::vector<Turn>& turns, const TurnTakingConfig& cfg) {
  auto scores = score_turns(turns, cfg);
  if (scores.empty()) throw Error(ErrorKind::no_scorable_turns, "turn-taking needs at least one user turn");
  double sum = 0.0;
  json per_turn = json::array();
  for (const auto& s : scores) {
    sum += s.score;
    per_turn.push_back(to_json(s));
  }
  return gated_outcome("turn_taking", sum / static_cast<double>(scores.size()), cfg.pass_threshold,
                       Comparator::at_least, {{"turns", per_turn}});
}

}  // namespace eva
