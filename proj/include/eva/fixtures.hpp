#pragma once

// Synthetic conversations and scenario bundles with known ground truth.
//
// A script fixes every audio span explicitly; the generator turns it into
// the three log streams and a ground-truth record derived from the script
// alone, never from the reconciler.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eva/error.hpp"
#include "eva/log_model.hpp"
#include "eva/metrics.hpp"
#include "eva/reconcile.hpp"
#include "eva/rng.hpp"
#include "eva/scenario_store.hpp"
#include "eva/text.hpp"

namespace eva::fixtures {

struct Span {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
};

struct ScriptToolCall {
  std::string tool_name;
  json parameters = json::object();
  json response = json::object();
};

struct ScriptTurn {
  Span user;
  std::string user_text;
  std::string transcript;            ///< empty: identical to user_text
  std::vector<Span> bursts;          ///< agent speech strictly inside the user span
  std::vector<Span> response;        ///< empty: the agent never answers (final turn only)
  std::string response_text;
  std::string spoken_text;           ///< empty: identical to response_text
  std::vector<ScriptToolCall> tools;

  // Log pathologies.
  bool noise_session = false;        ///< empty user audio session before the turn
  bool early_transcript = false;     ///< first word reported just before audio starts
  bool late_chunk = false;           ///< last word reported after audio ends (barge-in turns)
  bool missing_transcript = false;   ///< no audit transcript
};

struct ConversationScript {
  std::string conversation_id = "conv";
  PipelineType pipeline = PipelineType::cascade;
  std::uint64_t seed = 0;
  Span greeting{50.0, 1500.0};
  std::string greeting_text = "hello how can i help";
  std::vector<ScriptTurn> turns;
  EndCause end = EndCause::user_end_call;
};

struct GeneratedConversation {
  RawLogs logs;
  json ground_truth;
};

namespace detail {

inline std::vector<std::string> words(const std::string& s) { return text::split_ws(s); }

inline std::string spoken(const ScriptTurn& t) { return t.spoken_text.empty() ? t.response_text : t.spoken_text; }

inline std::string burst_text(std::size_t turn, std::size_t k) {
  return "b" + std::to_string(turn) + "k" + std::to_string(k);
}

inline std::string continuation(std::size_t turn) {
  const auto n = std::to_string(turn);
  return "c" + n + "a c" + n + "b c" + n + "c c" + n + "d";
}

[[noreturn]] inline void bad(std::size_t turn, const std::string& what) {
  throw Error(ErrorKind::inconsistent_script, "turn " + std::to_string(turn) + ": " + what);
}

// Straight-line restatement of the scoring formulas, evaluated on planned
// quantities.
inline double planned_curve(double x, bool tool) {
  const double a = -500.0, b = 500.0, c = tool ? 3000.0 : 2000.0, d = tool ? 5000.0 : 3500.0;
  if (x <= a || x >= d) return 0.0;
  if (x < b) return (x - a) / (b - a);
  if (x <= c) return 1.0;
  return (d - x) / (d - c);
}

}  // namespace detail

/// Throws inconsistent_script when the script cannot be emitted as logs
/// whose reconciliation is unambiguous.
inline void validate_script(const ConversationScript& s) {
  if (s.turns.empty()) throw Error(ErrorKind::inconsistent_script, "script needs at least one user turn");
  if (!(s.greeting.start >= 0.0 && s.greeting.end > s.greeting.start))
    throw Error(ErrorKind::inconsistent_script, "greeting span must be nonempty and nonnegative");
  if (detail::words(s.greeting_text).empty()) throw Error(ErrorKind::inconsistent_script, "greeting needs text");
  if (s.end != EndCause::user_end_call && s.end != EndCause::agent_timeout)
    throw Error(ErrorKind::inconsistent_script, "end cause must be user_end_call or agent_timeout");

  double prev_end = s.greeting.end, prev_last_start = s.greeting.start, prev_user_end = -1e18;
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    const auto& t = s.turns[i];
    const std::size_t n = i + 1;
    const bool last = i + 1 == s.turns.size();
    if (!(t.user.end > t.user.start)) detail::bad(n, "user span must be nonempty");
    const auto uw = detail::words(t.user_text).size();
    if (uw < 1 + (t.early_transcript ? 1u : 0u) + (t.late_chunk ? 1u : 0u)) detail::bad(n, "user text too short");
    if (!(t.user.start > prev_last_start + 20.0)) detail::bad(n, "user starts before the agent's previous response");
    if (!(t.user.start >= prev_user_end + 50.0)) detail::bad(n, "user turns too close together");
    const bool barge = t.user.start < prev_end;
    if (barge) {
      if (!(prev_end < t.user.end - 20.0)) detail::bad(n, "agent must yield before the user finishes");
      if (t.noise_session || t.early_transcript) detail::bad(n, "noise and early transcripts need a quiet gap");
    } else {
      if (!(t.user.start >= prev_end + 20.0)) detail::bad(n, "user start too close to the previous response");
      if (t.noise_session && !(t.user.start - 200.0 >= prev_end + 20.0)) detail::bad(n, "no room for noise session");
      if (t.early_transcript && !(t.user.start - 30.0 >= prev_end + 5.0)) detail::bad(n, "no room for early chunk");
    }
    double floor = barge ? prev_end : t.user.start;
    for (const auto& b : t.bursts) {
      if (!(b.length() >= 20.0)) detail::bad(n, "bursts must last at least 20 ms");
      if (!(b.start >= floor + 20.0)) detail::bad(n, "bursts must start inside the user span after any yield");
      if (!(b.end <= t.user.end - 20.0)) detail::bad(n, "bursts must end inside the user span");
      floor = b.end;
    }
    if (t.tools.size() > 6) detail::bad(n, "at most six tool calls per turn");
    if (t.response.empty()) {
      if (!last) detail::bad(n, "only the final turn may go unanswered");
      if (!t.bursts.empty()) detail::bad(n, "an unanswered turn cannot contain agent speech");
      if (t.late_chunk) detail::bad(n, "late chunks need a response after them");
      if (s.end != EndCause::agent_timeout) detail::bad(n, "an unanswered final turn ends by timeout");
      break;
    }
    if (last && s.end != EndCause::user_end_call) detail::bad(n, "an answered final turn ends by user hang-up");
    if (detail::words(t.response_text).empty()) detail::bad(n, "response needs text");
    if (detail::words(detail::spoken(t)).size() < t.response.size()) detail::bad(n, "not enough spoken words");
    const double first = t.response.front().start;
    if (!(first >= floor + 20.0)) detail::bad(n, "response must start after bursts and any yield");
    if (first == t.user.end) detail::bad(n, "response may not start exactly at the user end");
    if (first < t.user.end && t.response.size() != 1) detail::bad(n, "an overlapping response must be one span");
    for (std::size_t k = 0; k < t.response.size(); ++k) {
      if (!(t.response[k].length() >= 20.0)) detail::bad(n, "response spans must last at least 20 ms");
      if (k > 0 && !(t.response[k].start >= t.response[k - 1].end + 20.0)) detail::bad(n, "response gap too short");
    }
    if (!(t.response.back().end >= t.user.end + 20.0)) detail::bad(n, "response must outlast the user");
    if (t.late_chunk) {
      if (!barge) detail::bad(n, "late chunks need a barge-in turn");
      if (!(first > t.user.end + 40.0)) detail::bad(n, "late chunk needs the response to start after it");
    }
    prev_end = t.response.back().end;
    prev_last_start = t.response.back().start;
    prev_user_end = t.user.end;
  }
}

/// Emits the three log streams and the ground truth for a valid script.
inline GeneratedConversation generate_conversation(const ConversationScript& s) {
  validate_script(s);
  std::vector<json> audio, framework, audit;
  auto rec = [](double t, const char* kind) { return json{{"t", t}, {"kind", kind}}; };
  auto audio_mark = [&](double t, const char* kind, const char* who) {
    auto r = rec(t, kind);
    r["speaker"] = who;
    audio.push_back(r);
  };
  auto with_text = [&](std::vector<json>& out, double t, const char* kind, const std::string& txt) {
    auto r = rec(t, kind);
    r["text"] = txt;
    out.push_back(r);
  };

  const bool s2s = s.pipeline == PipelineType::s2s;
  json gt_turns = json::array();
  json assistant_interrupted = json::array(), user_interrupted = json::array();
  int noise = 0, early = 0, late = 0, missing = 0, tool_calls = 0;
  double score_sum = 0.0;

  // Greeting.
  audio_mark(s.greeting.start, "audio_start", "assistant");
  with_text(audio, s.greeting.start + 0.5, "assistant_speech", s.greeting_text);
  audio_mark(s.greeting.end, "audio_end", "assistant");
  with_text(framework, s.greeting.start + 0.5, "tts_text", s.greeting_text);
  with_text(audit, s.greeting.start + 1.0, "assistant_text", s.greeting_text + " " + detail::continuation(0));
  gt_turns.push_back({{"index", 0},
                      {"user_span", nullptr},
                      {"assistant_spans", json::array({json::array({s.greeting.start, s.greeting.end})})},
                      {"tool_turn", false},
                      {"intended_user", ""},
                      {"transcribed_user", ""},
                      {"intended_assistant", s2s ? "" : s.greeting_text},
                      {"transcribed_assistant", s.greeting_text}});

  double prev_end = s.greeting.end;
  double last_event = s.greeting.end;
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    const auto& t = s.turns[i];
    const std::size_t n = i + 1;
    const bool barge = t.user.start < prev_end;
    const bool tool = !t.tools.empty();

    if (t.noise_session) {
      audio_mark(t.user.start - 200.0, "audio_start", "user");
      audio_mark(t.user.start - 120.0, "audio_end", "user");
      ++noise;
    }
    auto uw = detail::words(t.user_text);
    std::size_t lo = 0, hi = uw.size();
    if (t.early_transcript) {
      with_text(audio, t.user.start - 30.0, "user_speech", uw.front());
      lo = 1;
      ++early;
    }
    if (t.late_chunk) {
      hi = uw.size() - 1;
      ++late;
    }
    audio_mark(t.user.start, "audio_start", "user");
    with_text(audio, t.user.start + 1.0,
              "user_speech", text::join(std::vector<std::string>(uw.begin() + static_cast<long>(lo),
                                                                 uw.begin() + static_cast<long>(hi))));
    audio_mark(t.user.end, "audio_end", "user");
    if (t.late_chunk) with_text(audio, t.user.end + 20.0, "user_speech", uw.back());
    const std::string transcript = t.transcript.empty() ? t.user_text : t.transcript;
    if (t.missing_transcript)
      ++missing;
    else
      with_text(audit, t.user.end + 5.0, "user_transcript", transcript);

    for (std::size_t k = 0; k < t.tools.size(); ++k) {
      const auto id = "call_" + std::to_string(n) + "_" + std::to_string(k);
      const double at = t.user.end + 2.0 + 0.5 * static_cast<double>(k);
      audit.push_back({{"t", at}, {"kind", "tool_call"}, {"call_id", id},
                       {"tool_name", t.tools[k].tool_name}, {"parameters", t.tools[k].parameters}});
      audit.push_back({{"t", at + 0.25}, {"kind", "tool_response"}, {"call_id", id},
                       {"response", t.tools[k].response}});
      ++tool_calls;
    }

    std::vector<std::string> asst_audio;
    json spans = json::array();
    for (std::size_t k = 0; k < t.bursts.size(); ++k) {
      audio_mark(t.bursts[k].start, "audio_start", "assistant");
      with_text(audio, t.bursts[k].start + 0.5, "assistant_speech", detail::burst_text(n, k));
      audio_mark(t.bursts[k].end, "audio_end", "assistant");
      asst_audio.push_back(detail::burst_text(n, k));
      spans.push_back(json::array({t.bursts[k].start, t.bursts[k].end}));
    }
    if (!t.response.empty()) {
      const auto sw = detail::words(detail::spoken(t));
      const std::size_t parts = t.response.size();
      for (std::size_t k = 0; k < parts; ++k) {
        const auto& r = t.response[k];
        const std::size_t a = sw.size() * k / parts, b = sw.size() * (k + 1) / parts;
        const auto chunk = text::join(std::vector<std::string>(sw.begin() + static_cast<long>(a),
                                                               sw.begin() + static_cast<long>(b)));
        audio_mark(r.start, "audio_start", "assistant");
        with_text(audio, r.start + 0.5, "assistant_speech", chunk);
        audio_mark(r.end, "audio_end", "assistant");
        asst_audio.push_back(chunk);
        spans.push_back(json::array({r.start, r.end}));
      }
      const double first = t.response.front().start;
      with_text(framework, first + 0.5, "tts_text", t.response_text);
      with_text(audit, first + 1.0, "assistant_text", t.response_text + " " + detail::continuation(n));
      last_event = std::max(last_event, t.response.back().end);
    }
    last_event = std::max({last_event, t.user.end + 20.0, t.user.end + 5.0 + 0.5 * t.tools.size()});

    // Planned turn-taking quantities.
    const bool agent_int = !t.bursts.empty() || (!t.response.empty() && t.response.front().start < t.user.end);
    json gt = {{"index", n},
               {"user_span", json::array({t.user.start, t.user.end})},
               {"assistant_spans", spans},
               {"tool_turn", tool},
               {"assistant_interrupted", agent_int},
               {"user_interrupted", barge},
               {"barge_in", barge},
               {"responded", !t.response.empty()}};
    std::string klass = agent_int && barge ? "both" : agent_int ? "agent_interrupt" : barge ? "user_interrupt"
                                                                                  : "uninterrupted";
    gt["class"] = klass;
    double score = 0.0;
    json latency = nullptr;
    if (!t.response.empty()) {
      const double lat = t.response.front().start - t.user.end;
      if (lat > 0) latency = lat;
      if (!agent_int && !barge) {
        latency = lat;
        score = detail::planned_curve(lat, tool);
      } else {
        std::optional<double> agent, yield;
        if (agent_int) {
          double overlap = 0.0;
          int count = 0;
          for (const auto& b : t.bursts) {
            overlap += b.length();
            count += b.length() > 1.0 ? 1 : 0;
          }
          if (lat < 0) {
            overlap += -lat;
            count += -lat > 1.0 ? 1 : 0;
          }
          count = std::max(count, 1);
          double a = std::min(std::max(0.0, 0.5 * (1.0 - overlap / 2000.0)),
                              std::max(0.0, 0.5 * (1.0 - (count - 1) / 2.0)));
          if (lat > 0) a = std::min(a, detail::planned_curve(lat, tool));
          gt["overlap_ms"] = overlap;
          gt["barge_ins"] = count;
          agent = a;
        }
        if (barge) {
          const double y = prev_end - t.user.start;
          gt["yield_ms"] = y;
          yield = std::max(0.0, 1.0 - y / 2000.0);
        }
        score = agent && yield ? std::min(*agent, *yield) : agent ? *agent : *yield;
      }
    }
    gt["latency_ms"] = latency;
    gt["expected_score"] = score;
    score_sum += score;
    if (agent_int) assistant_interrupted.push_back(n);
    if (barge) user_interrupted.push_back(n);

    const std::string asst_audio_text = text::join_nonempty(asst_audio);
    gt["intended_user"] = text::normalize_ws(t.user_text);
    gt["transcribed_user"] = text::normalize_ws(t.missing_transcript ? t.user_text : transcript);
    gt["intended_assistant"] = s2s ? "" : !t.response.empty() ? text::normalize_ws(t.response_text) : asst_audio_text;
    gt["transcribed_assistant"] = asst_audio_text;
    gt_turns.push_back(gt);
    if (!t.response.empty()) prev_end = t.response.back().end;
  }

  std::optional<double> end_call;
  if (s.end == EndCause::user_end_call) {
    end_call = last_event + 100.0;
    audio.push_back(rec(*end_call, "end_call"));
  }

  auto sort_by_t = [](std::vector<json>& v) {
    std::stable_sort(v.begin(), v.end(),
                     [](const json& a, const json& b) { return a["t"].get<double>() < b["t"].get<double>(); });
  };
  sort_by_t(audio);
  sort_by_t(framework);
  sort_by_t(audit);

  GeneratedConversation g;
  for (const auto& r : audio) g.logs.audio_bus += r.dump() + "\n";
  for (const auto& r : framework) g.logs.framework += r.dump() + "\n";
  g.logs.audit = json{{"events", audit}}.dump();

  g.ground_truth = {{"conversation_id", s.conversation_id},
                    {"pipeline", std::string(to_string(s.pipeline))},
                    {"seed", s.seed},
                    {"turn_count", s.turns.size() + 1},
                    {"turns", gt_turns},
                    {"assistant_interrupted_turns", assistant_interrupted},
                    {"user_interrupted_turns", user_interrupted},
                    {"end_cause", std::string(to_string(s.end))},
                    {"end_call_ms", end_call ? json(*end_call) : json(nullptr)},
                    {"tool_calls", tool_calls},
                    {"turn_taking", score_sum / static_cast<double>(s.turns.size())},
                    {"pathologies", {{"noise_sessions", noise}, {"early_transcripts", early},
                                     {"late_chunks", late}, {"missing_transcripts", missing}}}};
  return g;
}

struct RandomScriptOptions {
  int min_turns = 1;
  int max_turns = 6;
  double tool_probability = 0.3;
  bool pathologies = true;
  bool interruptions = true;
  double interruption_rate = 1.0;  ///< share of turns drawn from the interrupted classes
  double latency_lo_ms = 0.25;     ///< response latency range for uninterrupted, tool-free turns
  double latency_hi_ms = 4500.0;
  bool allow_timeout = true;
  std::optional<PipelineType> pipeline;
};

namespace detail {

inline double quarter(double x) { return std::round(x * 4.0) / 4.0; }

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed, 0x5c121f7) {}
  double ms(double lo, double hi) { return quarter(lo + (hi - lo) * rng_.uniform()); }
  int integer(int lo, int hi) { return lo + static_cast<int>(rng_.below(static_cast<std::uint64_t>(hi - lo + 1))); }
  bool chance(double p) { return rng_.uniform() < p; }

 private:
  CounterRng rng_;
};

inline std::string token_words(const std::string& prefix, int count) {
  std::vector<std::string> w;
  for (int j = 0; j < count; ++j) w.push_back(prefix + "w" + std::to_string(j));
  return text::join(w);
}

}  // namespace detail

/// Seeded random script covering all four routing classes, both breakpoint
/// sets and (optionally) the log pathologies. Every span boundary is a
/// multiple of 0.25 ms.
inline ConversationScript random_script(std::uint64_t seed, const RandomScriptOptions& opt = {}) {
  detail::Draw d(seed);
  ConversationScript s;
  s.seed = seed;
  s.conversation_id = "conv_" + std::to_string(seed);
  static constexpr PipelineType kPipelines[] = {PipelineType::cascade, PipelineType::hybrid, PipelineType::s2s};
  s.pipeline = opt.pipeline ? *opt.pipeline : kPipelines[d.integer(0, 2)];
  const int n = d.integer(opt.min_turns, opt.max_turns);

  enum Class { plain = 0, agent = 1, user = 2, both = 3 };
  std::vector<int> cls(static_cast<std::size_t>(n));
  std::vector<double> yield(static_cast<std::size_t>(n), 0.0);
  const bool final_responds = !opt.allow_timeout || d.chance(0.85);
  for (int i = 0; i < n; ++i) {
    cls[static_cast<std::size_t>(i)] = opt.interruptions ? d.integer(0, 3) : plain;
    if (opt.interruption_rate < 1.0 && !d.chance(opt.interruption_rate)) cls[static_cast<std::size_t>(i)] = plain;
    if (i + 1 == n && !final_responds) cls[static_cast<std::size_t>(i)] &= user;
    if (cls[static_cast<std::size_t>(i)] & user) yield[static_cast<std::size_t>(i)] = d.ms(0.25, 2600.0);
  }
  s.end = final_responds ? EndCause::user_end_call : EndCause::agent_timeout;

  const double greet_dur = std::max(d.ms(800.0, 3000.0), yield[0] + 60.0);
  s.greeting = {50.0, 50.0 + greet_dur};
  s.greeting_text = detail::token_words("g", d.integer(3, 6));

  double prev_end = s.greeting.end;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const bool last = i + 1 == n;
    const bool barge = (cls[ui] & user) != 0;
    const bool agent_int = (cls[ui] & agent) != 0;
    ScriptTurn t;
    const std::string tag = std::to_string(i + 1);

    t.user.start = barge ? prev_end - yield[ui] : prev_end + d.ms(300.0, 2500.0);
    double cursor = barge ? prev_end : t.user.start;
    // 0: bursts only, 1: overlapping response only, 2: both
    const int mode = agent_int ? d.integer(0, 2) : -1;
    if (mode == 0 || mode == 2) {
      const int nb = d.integer(1, 4);
      for (int k = 0; k < nb; ++k) {
        const double start = cursor + 20.25 + d.ms(0.0, 400.0);
        const double len = d.ms(20.0, 1200.0);
        t.bursts.push_back({start, start + len});
        cursor = start + len;
      }
    }
    t.user.end = std::max(cursor, t.user.start) + 20.25 + d.ms(400.0, 3500.0);
    if (barge) t.user.end = std::max(t.user.end, prev_end + 40.0 + d.ms(0.0, 800.0));
    double lower = std::max(cursor, t.user.start) + 20.0;

    const bool tool = d.chance(opt.tool_probability);
    if (tool) {
      const int nc = d.integer(1, 3);
      for (int k = 0; k < nc; ++k)
        t.tools.push_back({"lookup_" + std::to_string(k), {{"q", i * 10 + k}}, {{"success", true}}});
    }

    t.user_text = detail::token_words("u" + tag, d.integer(3, 8));
    if (d.chance(0.3)) {
      auto w = text::split_ws(t.user_text);
      w[static_cast<std::size_t>(d.integer(0, static_cast<int>(w.size()) - 1))] = "x" + tag;
      t.transcript = text::join(w);
    }
    if (opt.pathologies) {
      t.noise_session = !barge && d.chance(0.25);
      t.early_transcript = !barge && d.chance(0.25);
      t.missing_transcript = d.chance(0.15);
    }

    const bool responds = !last || final_responds;
    if (responds) {
      t.response_text = detail::token_words("a" + tag, d.integer(4, 10));
      if (d.chance(0.2)) {
        auto w = text::split_ws(t.response_text);
        w.back() = "y" + tag;
        t.spoken_text = text::join(w);
      }
      const double next_yield = last ? 0.0 : yield[ui + 1];
      if (mode == 1 || mode == 2) {
        // Response starts while the user is still talking.
        const double neg = d.ms(20.25, 1500.0);
        t.user.end = std::max(t.user.end, lower + neg + 20.25);
        const double start = t.user.end - neg;
        double end = start + d.ms(300.0, 4000.0);
        end = std::max({end, t.user.end + 20.25 + d.ms(0.0, 500.0), start + next_yield + 60.0,
                        t.user.end + 70.25 + next_yield});
        t.response.push_back({start, end});
      } else {
        double lat = tool ? d.ms(0.25, 6500.0) : d.ms(opt.latency_lo_ms, opt.latency_hi_ms);
        if (opt.pathologies && barge && d.chance(0.5)) {
          t.late_chunk = true;
          lat = std::max(lat, 40.25 + d.ms(0.0, 300.0));
        }
        const double start = t.user.end + lat;
        if (d.chance(0.2)) {
          const double first_end = start + d.ms(200.0, 2000.0);
          const double second = first_end + d.ms(20.25, 800.0);
          double end = second + d.ms(300.0, 3000.0);
          end = std::max({end, second + next_yield + 60.0, t.user.end + 70.25 + next_yield});
          t.response.push_back({start, first_end});
          t.response.push_back({second, end});
        } else {
          double end = start + d.ms(300.0, 5000.0);
          end = std::max({end, start + next_yield + 60.0, t.user.end + 70.25 + next_yield});
          t.response.push_back({start, end});
        }
      }
      prev_end = t.response.back().end;
    }
    s.turns.push_back(std::move(t));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scenario bundles

struct ScenarioBundle {
  std::string scenario_id;
  std::string domain;
  json initial_db;                       ///< tables only
  json expected_db;                      ///< tables plus "session"
  json tools;                            ///< {"tools": [...]}
  json goal;
  json judge_plan = json::object();      ///< planted verdicts for the mock judge
  std::vector<ToolCallRecord> tool_sequence;
};

namespace detail {

inline json param(const char* name) { return {{"param", name}}; }

inline json reservation_lookup(json path) {
  return {{"lookup", {{"table", "reservations"}, {"key", param("confirmation_number")}, {"path", std::move(path)}}}};
}

inline json airline_tools() {
  auto p = [](const char* name, const char* type) { return json{{"name", name}, {"type", type}}; };
  json tools = json::array();
  tools.push_back({{"name", "get_reservation"},
                   {"effect", "read_only"},
                   {"required_params", {p("confirmation_number", "string"), p("last_name", "string")}},
                   {"read", {{"table", "reservations"}, {"key", param("confirmation_number")}}},
                   {"checks", json::array({{{"left", reservation_lookup({"passenger", "last_name"})},
                                            {"right", param("last_name")},
                                            {"error", "authentication_failed"},
                                            {"message", "last name does not match"}}})},
                   {"ops", json::array({{{"op", "session_set"}, {"field", "confirmation_number"},
                                         {"value", param("confirmation_number")}},
                                        {{"op", "session_set"}, {"field", "last_name"},
                                         {"value", param("last_name")}}})}});
  tools.push_back({{"name", "get_flight_status"},
                   {"effect", "read_only"},
                   {"required_params", {p("flight_number", "string"), p("flight_date", "string")}},
                   {"read", {{"table", "flight_status"}, {"key", param("flight_number")}}}});
  tools.push_back({{"name", "search_rebooking_options"},
                   {"effect", "read_only"},
                   {"required_params", {p("origin", "string"), p("destination", "string"), p("date", "string")}},
                   {"optional_params", {p("passenger_count", "integer"), p("fare_class", "string")}},
                   {"read", {{"table", "journeys"}}}});
  auto journey = [](const char* field) {
    return json{{"lookup", {{"table", "journeys"}, {"key", {{"param", "new_journey_id"}}}, {"path", {field}}}}};
  };
  tools.push_back(
      {{"name", "rebook_flight"},
       {"effect", "write"},
       {"required_params", {p("confirmation_number", "string"), p("journey_id", "string"),
                            p("new_journey_id", "string")}},
       {"optional_params", {p("rebooking_type", "string"), p("waive_change_fee", "boolean"),
                            p("new_fare_class", "string")}},
       {"checks", json::array({{{"left", reservation_lookup({"booking", "journey_id"})},
                                {"right", param("journey_id")},
                                {"error", "invalid_parameter"},
                                {"message", "journey is not on this reservation"}}})},
       {"ops", json::array({
                   {{"op", "set"}, {"table", "reservations"}, {"key", param("confirmation_number")},
                    {"path", {"booking", "journey_id"}}, {"value", param("new_journey_id")}},
                   {{"op", "set"}, {"table", "reservations"}, {"key", param("confirmation_number")},
                    {"path", {"booking", "flight_number"}}, {"value", journey("flight_number")}},
                   {{"op", "set"}, {"table", "reservations"}, {"key", param("confirmation_number")},
                    {"path", {"booking", "departure_time"}}, {"value", journey("departure_time")}},
                   {{"op", "set"}, {"table", "reservations"}, {"key", param("confirmation_number")},
                    {"path", {"status"}}, {"value", {{"literal", "changed"}}}},
                   {{"op", "set"}, {"table", "reservations"}, {"key", param("confirmation_number")},
                    {"path", {"same_day_change_fee"}},
                    {"value", {{"lookup", {{"table", "fees"},
                                           {"key", {{"param", "rebooking_type"}, {"default", "voluntary"}}},
                                           {"path", {"same_day_change"}}}}}}},
               })}});
  tools.push_back(
      {{"name", "assign_seat"},
       {"effect", "write"},
       {"required_params", {p("confirmation_number", "string"), p("passenger_id", "string"),
                            p("journey_id", "string"), p("seat_preference", "string")}},
       {"checks", json::array({{{"left", reservation_lookup({"passenger", "passenger_id"})},
                                {"right", param("passenger_id")},
                                {"error", "record_not_found"},
                                {"message", "passenger is not on this reservation"}}})},
       {"ops", json::array({{{"op", "set"}, {"table", "reservations"}, {"key", param("confirmation_number")},
                             {"path", {"booking", "seat"}},
                             {"value", {{"lookup", {{"table", "seat_maps"}, {"key", param("journey_id")},
                                                    {"path", json::array({param("seat_preference")})}}}}}}})}});
  return {{"tools", tools}};
}

inline json airline_db() {
  json reservation = {
      {"confirmation_number", "6VORJU"},
      {"status", "confirmed"},
      {"same_day_change_fee", nullptr},
      {"passenger", {{"passenger_id", "PAX001"},
                     {"first_name", "Kenji"},
                     {"last_name", "Thompson"},
                     {"ticket_number", "1801234567890"},
                     {"email", "kenji.thompson@example.com"},
                     {"phone", "+1-310-555-0147"},
                     {"elite_status", "none"},
                     {"meal_preference", "none"},
                     {"seat_preference", "no_preference"}}},
      {"booking", {{"journey_id", "FL_SK530_20260618"},
                   {"flight_number", "SK530"},
                   {"date", "2026-06-18"},
                   {"departure_time", "17:30"},
                   {"fare_class", "main_cabin"},
                   {"fare_paid", 289.0},
                   {"booking_status", "confirmed"},
                   {"seat", nullptr},
                   {"bags_checked", 0},
                   {"meal_request", nullptr}}},
      {"ancillaries", {{"seat_selection_fee", 0}, {"bags_fee", 0}}},
      {"metadata", {{"booking_date", "2026-05-20T13:22:00-07:00"}, {"fare_type", "non_refundable"}}}};
  auto journey = [](const char* id, const char* flight, const char* dep, const char* arr, int stops, bool bookable,
                    int mc_seats, json mc_fare) {
    return json{{"journey_id", id}, {"flight_number", flight}, {"origin", "LAX"}, {"destination", "SFO"},
                {"date", "2026-06-18"}, {"departure_time", dep}, {"arrival_time", arr}, {"stops", stops},
                {"bookable", bookable}, {"main_cabin_seats", mc_seats}, {"main_cabin_fare", std::move(mc_fare)}};
  };
  json journeys = {
      {"FL_SK530_20260618", journey("FL_SK530_20260618", "SK530", "17:30", "18:55", 0, true, 23, 289)},
      {"FL_SK110_20260618", journey("FL_SK110_20260618", "SK110", "11:00", "12:25", 0, false, 0, nullptr)},
      {"FL_SK130_20260618", journey("FL_SK130_20260618", "SK130", "13:00", "14:25", 0, true, 8, 289)},
      {"FL_SK215_20260618", journey("FL_SK215_20260618", "SK215", "14:40", "16:05", 0, true, 18, 259)},
      {"FL_SK090_SK410_20260618", journey("FL_SK090_SK410_20260618", "SK090+SK410", "09:20", "12:10", 1, true, 12,
                                          358)}};
  json status = {{"SK530", {{"flight_number", "SK530"}, {"date", "2026-06-18"}, {"status", "scheduled"},
                            {"gate", "54B"}}},
                 {"SK130", {{"flight_number", "SK130"}, {"date", "2026-06-18"}, {"status", "on_time"},
                            {"gate", "45C"}}}};
  json seat_maps = {{"FL_SK130_20260618", {{"window", "21A"}, {"aisle", "21C"}, {"middle", "21B"}}},
                    {"FL_SK530_20260618", {{"window", "30A"}, {"aisle", "30C"}, {"middle", "30B"}}}};
  json fees = {{"voluntary", {{"same_day_change", 75}}}, {"involuntary", {{"same_day_change", 0}}}};
  return {{"reservations", {{"6VORJU", reservation}}},
          {"journeys", journeys},
          {"flight_status", status},
          {"seat_maps", seat_maps},
          {"fees", fees}};
}

inline ToolCallRecord call(const std::string& id, const std::string& name, json params) {
  ToolCallRecord c;
  c.call_id = id;
  c.tool_name = name;
  c.parameters = std::move(params);
  return c;
}

inline json expected_from_replay(const json& initial, const json& tools_doc, const std::vector<ToolCallRecord>& seq,
                                 const json& session) {
  auto catalog = parse_tools(tools_doc);
  auto final_state = replay_tool_calls(state_from_json(initial), seq, catalog).state;
  final_state.session = session;
  return state_to_json(final_state);
}

}  // namespace detail

/// Same-day change to an earlier direct flight with a window seat.
inline ScenarioBundle scenario_121_bundle() {
  ScenarioBundle b;
  b.scenario_id = "1.2.1";
  b.domain = "airline";
  b.initial_db = detail::airline_db();
  b.tools = detail::airline_tools();
  b.goal = {{"task", "move to an earlier direct flight on the same day"},
            {"must_have", {{"date", "2026-06-18"}, {"origin", "LAX"}, {"destination", "SFO"},
                           {"depart_before", "14:00"}, {"max_change_fee", 80}}},
            {"seat_preference", json::array({"window", "aisle", "middle"})},
            {"confirmation_number", "6VORJU"},
            {"last_name", "Thompson"}};
  using detail::call;
  b.tool_sequence = {
      call("c1", "get_reservation", {{"confirmation_number", "6VORJU"}, {"last_name", "Thompson"}}),
      call("c2", "get_flight_status", {{"flight_number", "SK530"}, {"flight_date", "2026-06-18"}}),
      call("c3", "search_rebooking_options", {{"origin", "LAX"}, {"destination", "SFO"}, {"date", "2026-06-18"},
                                              {"passenger_count", 1}, {"fare_class", "any"}}),
      call("c4", "search_rebooking_options", {{"origin", "LAX"}, {"destination", "SFO"}, {"date", "2026-06-18"},
                                              {"passenger_count", 1}, {"fare_class", "any"}}),
      call("c5", "rebook_flight", {{"confirmation_number", "6VORJU"}, {"journey_id", "FL_SK530_20260618"},
                                   {"new_journey_id", "FL_SK130_20260618"}, {"rebooking_type", "voluntary"},
                                   {"waive_change_fee", false}, {"new_fare_class", nullptr}}),
      call("c6", "assign_seat", {{"confirmation_number", "6VORJU"}, {"passenger_id", "PAX001"},
                                 {"journey_id", "FL_SK130_20260618"}, {"seat_preference", "window"}})};
  b.expected_db = detail::expected_from_replay(b.initial_db, b.tools, b.tool_sequence,
                                               {{"confirmation_number", "6VORJU"}, {"last_name", "thompson"}});
  return b;
}

namespace detail {

inline json generic_tools() {
  auto p = [](const char* name, const char* type) { return json{{"name", name}, {"type", type}}; };
  auto acct = json{{"param", "account_id"}};
  json tools = json::array();
  tools.push_back({{"name", "get_account"},
                   {"effect", "read_only"},
                   {"required_params", {p("account_id", "string")}},
                   {"read", {{"table", "accounts"}, {"key", acct}}},
                   {"ops", json::array({{{"op", "session_set"}, {"field", "account_id"}, {"value", acct}}})}});
  tools.push_back({{"name", "update_tier"},
                   {"effect", "write"},
                   {"required_params", {p("account_id", "string"), p("tier", "string")}},
                   {"ops", json::array({{{"op", "set"}, {"table", "accounts"}, {"key", acct}, {"path", {"tier"}},
                                         {"value", {{"param", "tier"}}}}})}});
  tools.push_back({{"name", "update_email"},
                   {"effect", "write"},
                   {"required_params", {p("account_id", "string"), p("email", "string")}},
                   {"ops", json::array({{{"op", "set"}, {"table", "accounts"}, {"key", acct},
                                         {"path", {"contact", "email"}}, {"value", {{"param", "email"}}}}})}});
  tools.push_back({{"name", "add_credit"},
                   {"effect", "write"},
                   {"required_params", {p("account_id", "string"), p("credit_id", "string"), p("amount", "integer")}},
                   {"ops", json::array({{{"op", "insert"}, {"table", "credits"}, {"key", {{"param", "credit_id"}}},
                                         {"value", {{"literal", {{"status", "issued"}}}}}},
                                        {{"op", "set"}, {"table", "credits"}, {"key", {{"param", "credit_id"}}},
                                         {"path", {"amount"}}, {"value", {{"param", "amount"}}}},
                                        {{"op", "set"}, {"table", "credits"}, {"key", {{"param", "credit_id"}}},
                                         {"path", {"account_id"}}, {"value", acct}}})}});
  return {{"tools", tools}};
}

}  // namespace detail

/// A small seeded account-service scenario: one lookup and zero to three
/// writes. `writes = 0` gives a no-op scenario whose expected state equals
/// the initial one.
inline ScenarioBundle generic_bundle(const std::string& id, std::uint64_t seed, int writes) {
  detail::Draw d(seed);
  ScenarioBundle b;
  b.scenario_id = id;
  b.domain = "accounts";
  json accounts = json::object();
  static constexpr const char* kTiers[] = {"basic", "plus", "premium"};
  const int n_accounts = d.integer(2, 4);
  for (int i = 0; i < n_accounts; ++i) {
    const auto aid = "A" + std::to_string(100 + i);
    accounts[aid] = {{"owner", "owner" + std::to_string(i)},
                     {"tier", kTiers[d.integer(0, 2)]},
                     {"balance", d.integer(0, 500)},
                     {"contact", {{"email", "owner" + std::to_string(i) + "@example.com"}, {"phone", nullptr}}}};
  }
  b.initial_db = {{"accounts", accounts}, {"credits", json::object()}};
  b.tools = detail::generic_tools();
  const auto target = "A" + std::to_string(100 + d.integer(0, n_accounts - 1));
  b.goal = {{"task", "account maintenance"}, {"account_id", target}};
  b.tool_sequence.push_back(detail::call("g0", "get_account", {{"account_id", target}}));
  for (int w = 0; w < writes; ++w) {
    const auto cid = "g" + std::to_string(w + 1);
    switch (d.integer(0, 2)) {
      case 0:
        b.tool_sequence.push_back(detail::call(cid, "update_tier", {{"account_id", target},
                                                                    {"tier", kTiers[d.integer(0, 2)]}}));
        break;
      case 1:
        b.tool_sequence.push_back(detail::call(
            cid, "update_email", {{"account_id", target}, {"email", "new" + std::to_string(w) + "@example.com"}}));
        break;
      default:
        b.tool_sequence.push_back(detail::call(
            cid, "add_credit", {{"account_id", target}, {"credit_id", "CR" + std::to_string(w)},
                                {"amount", d.integer(5, 100)}}));
        break;
    }
  }
  b.expected_db = detail::expected_from_replay(b.initial_db, b.tools, b.tool_sequence, {{"account_id", target}});
  return b;
}

/// Changes one parameter value of one write call so the replay diverges.
inline std::vector<ToolCallRecord> mutate_one_parameter(std::vector<ToolCallRecord> seq) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i].tool_name == "update_tier" || seq[i].tool_name == "update_email" || seq[i].tool_name == "add_credit" ||
        seq[i].tool_name == "assign_seat")
      candidates.push_back(i);
  if (candidates.empty()) return seq;
  // The last write cannot be masked by a later one.
  auto& c = seq[candidates.back()];
  if (c.tool_name == "update_tier") c.parameters["tier"] = c.parameters["tier"] == "basic" ? "premium" : "basic";
  if (c.tool_name == "update_email") c.parameters["email"] = "mutated@example.com";
  if (c.tool_name == "add_credit") c.parameters["amount"] = c.parameters["amount"].get<int>() + 1;
  if (c.tool_name == "assign_seat") c.parameters["seat_preference"] = "aisle";
  return seq;
}

/// Conversation whose audit log carries the given tool calls, with tool
/// responses produced by the executor against the bundle's initial state.
inline ConversationScript bundle_conversation(const ScenarioBundle& b, const std::vector<ToolCallRecord>& calls,
                                              std::uint64_t seed, RandomScriptOptions opt) {
  opt.min_turns = 3;
  opt.max_turns = 6;
  opt.tool_probability = 0.0;
  opt.allow_timeout = false;
  auto s = random_script(seed, opt);
  s.conversation_id = b.scenario_id + "_" + std::to_string(seed);
  std::vector<json> responses;
  replay_tool_calls(state_from_json(b.initial_db), calls, parse_tools(b.tools), &responses);
  // Spread the calls over the first turns; at most six per turn.
  std::size_t turn = 0;
  for (std::size_t i = 0; i < calls.size(); ++i) {
    if (s.turns[turn].tools.size() >= 3 && turn + 1 < s.turns.size()) ++turn;
    s.turns[turn].tools.push_back({calls[i].tool_name, calls[i].parameters, responses[i]});
  }
  // Tool turns use the longer latency window; the script stays valid since
  // only the ground truth depends on it.
  return s;
}

inline json judge_plan_clean() { return json::object(); }

inline void write_text(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
  out << bytes;
}

/// Writes scenario_db.json, expected_scenario_db.json, tools.json,
/// goal.json and judge_plan.json.
inline void write_bundle(const ScenarioBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "scenario_db.json", b.initial_db.dump(2) + "\n");
  write_text(dir / "expected_scenario_db.json", b.expected_db.dump(2) + "\n");
  write_text(dir / "tools.json", b.tools.dump(2) + "\n");
  json goal = b.goal;
  goal["scenario_id"] = b.scenario_id;
  goal["domain"] = b.domain;
  write_text(dir / "goal.json", goal.dump(2) + "\n");
  write_text(dir / "judge_plan.json", b.judge_plan.dump(2) + "\n");
}

/// Writes the three log files, ground_truth.json and trial.json.
inline void write_conversation(const GeneratedConversation& g, const json& trial_meta,
                               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "audit_log.json", g.logs.audit + "\n");
  write_text(dir / "framework_logs.jsonl", g.logs.framework);
  write_text(dir / "elevenlabs_events.jsonl", g.logs.audio_bus);
  write_text(dir / "ground_truth.json", g.ground_truth.dump(2) + "\n");
  if (!trial_meta.is_null()) write_text(dir / "trial.json", trial_meta.dump(2) + "\n");
}

/// Timing behaviour of a simulated system under test.
struct SystemProfile {
  std::string name;
  PipelineType pipeline = PipelineType::cascade;
  double interruption_rate = 0.2;
  double latency_lo_ms = 300.0;
  double latency_hi_ms = 2600.0;
};

struct SuiteOptions {
  int generic_scenarios = 3;
  int trials = 3;
  double mutation_rate = 0.3;
  std::vector<SystemProfile> systems = {{"cascade_sys", PipelineType::cascade, 0.1, 500.0, 2200.0},
                                        {"s2s_sys", PipelineType::s2s, 0.3, 150.0, 3200.0}};
};

struct SuiteTrial {
  std::string system;
  PipelineType pipeline = PipelineType::cascade;
  std::string scenario_id;
  int trial_index = 0;
  bool mutated = false;
  GeneratedConversation conversation;
};

struct Suite {
  std::vector<ScenarioBundle> bundles;
  std::vector<SuiteTrial> trials;
};

/// Bundles (1.2.1 plus seeded generic scenarios, one of them a no-op) and
/// per-system trial conversations. Expected states always come from the
/// executor; a mutated trial replays one altered parameter.
inline Suite generate_scenario_suite(std::uint64_t seed, const SuiteOptions& opt = {}) {
  Suite suite;
  suite.bundles.push_back(scenario_121_bundle());
  for (int i = 0; i < opt.generic_scenarios; ++i)
    suite.bundles.push_back(generic_bundle("acct." + std::to_string(i + 1), mix64(seed + 101 + i), i == 0 ? 0 : 1 + i % 3));
  std::uint64_t stream = 0;
  for (const auto& profile : opt.systems) {
    const auto& system = profile.name;
    const auto pipeline = profile.pipeline;
    RandomScriptOptions ro;
    ro.pipeline = pipeline;
    ro.interruption_rate = profile.interruption_rate;
    ro.latency_lo_ms = profile.latency_lo_ms;
    ro.latency_hi_ms = profile.latency_hi_ms;
    for (const auto& b : suite.bundles) {
      for (int k = 0; k < opt.trials; ++k) {
        const auto trial_seed = mix64(seed ^ mix64(++stream));
        detail::Draw d(trial_seed);
        SuiteTrial t;
        t.system = system;
        t.pipeline = pipeline;
        t.scenario_id = b.scenario_id;
        t.trial_index = k;
        auto calls = b.tool_sequence;
        if (d.chance(opt.mutation_rate)) {
          auto m = mutate_one_parameter(calls);
          t.mutated = m.size() == calls.size() &&
                      !std::equal(m.begin(), m.end(), calls.begin(), [](const auto& x, const auto& y) {
                        return x.parameters == y.parameters;
                      });
          calls = std::move(m);
        }
        auto script = bundle_conversation(b, calls, trial_seed, ro);
        script.conversation_id = system + "__" + b.scenario_id + "__t" + std::to_string(k);
        t.conversation = generate_conversation(script);
        t.conversation.ground_truth["expected_task_completion"] = t.mutated ? 0.0 : 1.0;
        suite.trials.push_back(std::move(t));
      }
    }
  }
  return suite;
}

}  // namespace eva::fixtures
