#pragma once

// Turns a merged event timeline into a turn-aligned conversation.
//
// Turn boundaries come only from user audio sessions. Turn 0 holds the
// greeting; each later user session advances the counter if the assistant
// started audio since the previous advance. A session that closes without
// any user_speech is background noise and is rolled back. user_speech seen
// outside a session is either attached to the current turn (when the hold
// flag is set by a recent barge-in) or buffered for the next session.

#include <algorithm>
#include <array>
#include <cstddef>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "eva/error.hpp"
#include "eva/log_model.hpp"
#include "eva/text.hpp"

namespace eva {

namespace tags {
inline constexpr std::string_view assistant_interrupts = "[assistant interrupts]";
inline constexpr std::string_view user_interrupts = "[user interrupts]";
inline constexpr std::string_view cut_off_by_user = "[likely cut off by user]";
inline constexpr std::string_view cut_off_by_assistant = "[likely cut off by assistant]";
inline constexpr std::string_view cut_itself_off = "[speaker likely cut itself off]";
inline constexpr std::string_view likely_interruption = "[likely interruption]";
inline constexpr std::array<std::string_view, 6> all = {assistant_interrupts, user_interrupts,  cut_off_by_user,
                                                        cut_off_by_assistant, cut_itself_off, likely_interruption};
}  // namespace tags

/// Removes every interruption tag and re-normalizes whitespace.
inline std::string strip_tags(std::string_view s) {
  std::string out(s);
  for (auto tag : tags::all) {
    for (auto pos = out.find(tag); pos != std::string::npos; pos = out.find(tag, pos)) out.erase(pos, tag.size());
  }
  return text::normalize_ws(out);
}

inline constexpr int kReconciledSchemaVersion = 1;
inline constexpr std::size_t kNoEvent = std::numeric_limits<std::size_t>::max();

struct AudioSpan {
  Speaker speaker = Speaker::user;
  double start_ms = 0.0;
  double end_ms = 0.0;

  double duration() const { return end_ms - start_ms; }
  friend bool operator==(const AudioSpan&, const AudioSpan&) = default;
};

struct SpanMatch {
  std::vector<AudioSpan> user;
  std::vector<AudioSpan> assistant;
  std::size_t orphans = 0;
  std::size_t unmatched_ends = 0;
};

/// A matched start/end pair with its timeline positions. end_index is
/// kNoEvent for an orphan start, which is closed at the last timestamp.
struct SpanRecord {
  Speaker speaker = Speaker::user;
  std::size_t start_index = 0;
  std::size_t end_index = kNoEvent;
  double start_ms = 0.0;
  double end_ms = 0.0;
  int turn = 0;
  bool noise = false;
  bool post_end = false;

  AudioSpan span() const { return {speaker, start_ms, end_ms}; }
  /// Strict containment of a timeline position, in event order.
  bool open_at(std::size_t index) const { return start_index < index && index < end_index; }
};

namespace detail {

struct Pairing {
  std::vector<SpanRecord> spans;
  std::vector<std::size_t> span_of_event;  // span id for audio events, kNoEvent otherwise
  std::size_t orphans = 0;
  std::size_t unmatched_ends = 0;
};

inline Pairing pair_audio(const std::vector<EventRecord>& timeline) {
  Pairing p;
  p.span_of_event.assign(timeline.size(), kNoEvent);
  std::array<std::deque<std::size_t>, 2> open;
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    const auto& e = timeline[i];
    if (e.kind != EventKind::audio_start && e.kind != EventKind::audio_end) continue;
    auto who = e.speaker();
    if (!who) continue;
    auto& q = open[static_cast<int>(*who)];
    if (e.kind == EventKind::audio_start) {
      SpanRecord s;
      s.speaker = *who;
      s.start_index = i;
      s.start_ms = e.timestamp_ms;
      p.span_of_event[i] = p.spans.size();
      q.push_back(p.spans.size());
      p.spans.push_back(s);
    } else if (q.empty()) {
      ++p.unmatched_ends;
    } else {
      auto id = q.front();
      q.pop_front();
      p.spans[id].end_index = i;
      p.spans[id].end_ms = e.timestamp_ms;
      p.span_of_event[i] = id;
    }
  }
  const double last = timeline.empty() ? 0.0 : timeline.back().timestamp_ms;
  for (auto& s : p.spans) {
    if (s.end_index == kNoEvent) {
      s.end_ms = last;
      ++p.orphans;
    }
  }
  return p;
}

}  // namespace detail

/// Greedy per-speaker pairing: each audio_end closes the oldest open start
/// of the same speaker.
inline SpanMatch match_audio_spans(const std::vector<EventRecord>& timeline) {
  auto p = detail::pair_audio(timeline);
  SpanMatch m;
  for (const auto& s : p.spans) (s.speaker == Speaker::user ? m.user : m.assistant).push_back(s.span());
  m.orphans = p.orphans;
  m.unmatched_ends = p.unmatched_ends;
  return m;
}

struct Turn {
  int index = 0;
  std::string intended_user;
  std::string transcribed_user;
  std::string intended_assistant;
  std::string transcribed_assistant;
  std::vector<AudioSpan> user_spans;
  std::vector<AudioSpan> assistant_spans;
  bool assistant_interrupted = false;
  bool user_interrupted = false;
  bool has_tool_call = false;
  std::vector<std::string> tags;

  // Which decorations apply; tags is derived from these.
  bool user_cut_by_assistant = false;
  bool assistant_cut_by_user = false;
  bool assistant_cut_itself = false;
  bool assistant_unexplained_break = false;
};

struct Diagnostics {
  std::size_t rolled_back_sessions = 0;
  std::size_t buffered_replays = 0;
  std::size_t orphan_spans = 0;
  std::size_t unmatched_audio_ends = 0;
  std::size_t backfilled_slots = 0;
  std::size_t post_end_events = 0;
  std::size_t framework_after_audio = 0;  ///< framework text stamped after its turn's assistant audio ended
  std::size_t truncated_trace_entries = 0;
  std::size_t dropped_trace_entries = 0;
  std::size_t skipped_records = 0;
  std::size_t schema_errors = 0;
};

struct Segmentation {
  std::vector<SpanRecord> spans;
  std::vector<int> event_turn;
  std::vector<bool> post_end;
  std::vector<Turn> turns;
  std::optional<double> end_call_ms;
  Diagnostics diagnostics;
};

/// Assigns every timeline event to a turn and builds turn skeletons with
/// their (non-noise) audio spans.
inline Segmentation segment_turns(const std::vector<EventRecord>& timeline) {
  auto pairing = detail::pair_audio(timeline);
  Segmentation seg;
  seg.spans = std::move(pairing.spans);
  seg.event_turn.assign(timeline.size(), 0);
  seg.post_end.assign(timeline.size(), false);
  seg.diagnostics.orphan_spans = pairing.orphans;
  seg.diagnostics.unmatched_audio_ends = pairing.unmatched_ends;

  int turn = 0;
  bool spoken = true;
  bool hold = false;
  int depth = 0;
  std::size_t open_assistant = 0;
  bool ended = false;
  std::vector<std::size_t> buffer;

  struct Session {
    int turn = 0;
    bool spoken = false;
    bool hold = false;
    bool payload = false;
    bool assistant_started = false;
    std::vector<std::size_t> events;
    std::vector<std::size_t> spans;
  } session;

  auto close_session = [&] {
    if (session.payload) return;
    turn = session.turn;
    spoken = session.spoken || session.assistant_started;
    hold = session.hold;
    for (auto i : session.events) seg.event_turn[i] = turn;
    for (auto s : session.spans) {
      seg.spans[s].turn = turn;
      if (seg.spans[s].speaker == Speaker::user) seg.spans[s].noise = true;
    }
    ++seg.diagnostics.rolled_back_sessions;
  };

  for (std::size_t i = 0; i < timeline.size(); ++i) {
    const auto& e = timeline[i];
    const auto span_id = pairing.span_of_event[i];
    seg.event_turn[i] = turn;
    if (ended) {
      seg.post_end[i] = true;
      ++seg.diagnostics.post_end_events;
      if (e.kind == EventKind::audio_start && span_id != kNoEvent) {
        seg.spans[span_id].post_end = true;
        seg.spans[span_id].turn = turn;
      }
      continue;
    }
    if (depth > 0) session.events.push_back(i);

    switch (e.kind) {
      case EventKind::audio_start: {
        if (span_id == kNoEvent) break;
        auto& span = seg.spans[span_id];
        if (span.speaker == Speaker::user) {
          if (depth == 0) {
            session = Session{turn, spoken, hold, false, false, {}, {}};
            if (spoken) {
              ++turn;
              spoken = false;
              hold = false;
            }
            if (!buffer.empty()) {
              for (auto b : buffer) {
                seg.event_turn[b] = turn;
                session.events.push_back(b);
              }
              seg.diagnostics.buffered_replays += buffer.size();
              session.payload = true;
              buffer.clear();
            }
            session.events.push_back(i);
            seg.event_turn[i] = turn;
          }
          if (open_assistant > 0) hold = true;
          ++depth;
          span.turn = turn;
          session.spans.push_back(span_id);
        } else {
          spoken = true;
          ++open_assistant;
          span.turn = turn;
          if (depth > 0) {
            hold = true;
            session.assistant_started = true;
            session.spans.push_back(span_id);
          } else {
            hold = false;
          }
        }
        break;
      }
      case EventKind::audio_end: {
        if (span_id == kNoEvent) break;
        if (seg.spans[span_id].speaker == Speaker::user) {
          if (--depth == 0) close_session();
        } else {
          if (open_assistant > 0) --open_assistant;
          if (depth == 0) hold = false;
        }
        break;
      }
      case EventKind::user_speech:
        if (depth > 0) {
          session.payload = true;
        } else if (hold) {
          hold = false;
        } else {
          buffer.push_back(i);
        }
        break;
      case EventKind::end_call:
        ended = true;
        seg.end_call_ms = e.timestamp_ms;
        break;
      default:
        break;
    }
  }
  if (depth > 0) close_session();
  for (auto b : buffer) seg.event_turn[b] = turn;

  const int turn_count = turn + 1;
  seg.turns.resize(static_cast<std::size_t>(turn_count));
  for (int t = 0; t < turn_count; ++t) seg.turns[static_cast<std::size_t>(t)].index = t;
  for (const auto& s : seg.spans) {
    if (s.noise || s.post_end) continue;
    auto& t = seg.turns[static_cast<std::size_t>(s.turn)];
    (s.speaker == Speaker::user ? t.user_spans : t.assistant_spans).push_back(s.span());
  }
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    if (timeline[i].kind == EventKind::tool_call && !seg.post_end[i])
      seg.turns[static_cast<std::size_t>(seg.event_turn[i])].has_tool_call = true;
  }
  return seg;
}

namespace detail {

inline void refresh_tags(Turn& t) {
  t.tags.clear();
  if (t.user_interrupted) t.tags.emplace_back(tags::user_interrupts);
  if (t.user_cut_by_assistant) t.tags.emplace_back(tags::cut_off_by_assistant);
  if (t.assistant_interrupted) t.tags.emplace_back(tags::assistant_interrupts);
  if (t.assistant_cut_by_user) t.tags.emplace_back(tags::cut_off_by_user);
  if (t.assistant_cut_itself) t.tags.emplace_back(tags::cut_itself_off);
  if (t.assistant_unexplained_break) t.tags.emplace_back(tags::likely_interruption);
}

}  // namespace detail

/// Flags barge-ins by event-order containment (a start strictly inside
/// the other speaker's open span) and records which decorations apply.
inline void detect_interruptions(Segmentation& seg) {
  std::vector<const SpanRecord*> users, assistants;
  for (const auto& s : seg.spans) {
    if (s.post_end) continue;
    if (s.speaker == Speaker::user && !s.noise) users.push_back(&s);
    if (s.speaker == Speaker::assistant) assistants.push_back(&s);
  }
  auto turn_at = [&](int t) -> Turn& { return seg.turns[static_cast<std::size_t>(t)]; };

  for (const auto* u : users) {
    for (const auto* a : assistants) {
      if (a->open_at(u->start_index)) {
        turn_at(u->turn).user_interrupted = true;
        turn_at(a->turn).assistant_cut_by_user = true;
      }
    }
  }
  for (const auto* a : assistants) {
    for (const auto* u : users) {
      if (u->open_at(a->start_index)) {
        turn_at(a->turn).assistant_interrupted = true;
        turn_at(u->turn).user_cut_by_assistant = true;
      }
    }
  }
  std::map<int, std::vector<const SpanRecord*>> by_turn;
  for (const auto* a : assistants) by_turn[a->turn].push_back(a);
  for (auto& [t, list] : by_turn) {
    std::sort(list.begin(), list.end(),
              [](const SpanRecord* x, const SpanRecord* y) { return x->start_index < y->start_index; });
    for (std::size_t k = 0; k + 1 < list.size(); ++k) {
      const auto end_index = list[k]->end_index;
      bool user_open = std::any_of(users.begin(), users.end(), [&](const SpanRecord* u) {
        return end_index != kNoEvent && u->open_at(end_index);
      });
      if (user_open)
        turn_at(t).assistant_cut_itself = true;
      else
        turn_at(t).assistant_unexplained_break = true;
    }
  }
  for (auto& t : seg.turns) detail::refresh_tags(t);
}

enum class TraceRole { user, assistant, tool_call, tool_response };

constexpr std::string_view to_string(TraceRole r) {
  switch (r) {
    case TraceRole::user: return "user";
    case TraceRole::assistant: return "assistant";
    case TraceRole::tool_call: return "tool_call";
    case TraceRole::tool_response: return "tool_response";
  }
  return "?";
}

struct TraceEntry {
  TraceRole role = TraceRole::user;
  int turn_index = 0;
  std::string text;                 ///< user / assistant entries
  json tool = nullptr;              ///< tool_call / tool_response entries
  bool post_end = false;
};

struct ReconciledConversation {
  PipelineType pipeline = PipelineType::cascade;
  std::vector<Turn> turns;
  std::vector<TraceEntry> trace;
  std::vector<ToolCallRecord> tool_calls;
  std::optional<double> end_call_ms;
  double first_event_ms = 0.0;
  double last_event_ms = 0.0;
  Diagnostics diagnostics;

  // Working state shared by extraction and trace building.
  std::vector<EventRecord> timeline;
  std::vector<int> event_turn;
  std::vector<bool> post_end;

  std::vector<int> assistant_interrupted_turns() const {
    std::vector<int> out;
    for (const auto& t : turns)
      if (t.assistant_interrupted) out.push_back(t.index);
    return out;
  }
  std::vector<int> user_interrupted_turns() const {
    std::vector<int> out;
    for (const auto& t : turns)
      if (t.user_interrupted) out.push_back(t.index);
    return out;
  }
};

namespace detail {

inline std::string with_prefix(std::string_view tag, const std::string& text) {
  return std::string(tag) + " " + text;
}

inline std::string decorate_user(const Turn& t, const std::string& text) {
  if (text.empty()) return text;
  std::string out = t.user_interrupted ? with_prefix(tags::user_interrupts, text) : text;
  if (t.user_cut_by_assistant) out += " " + std::string(tags::cut_off_by_assistant);
  return out;
}

inline std::string assistant_suffixes(const Turn& t) {
  std::string out;
  if (t.assistant_cut_by_user) out += " " + std::string(tags::cut_off_by_user);
  if (t.assistant_cut_itself) out += " " + std::string(tags::cut_itself_off);
  if (t.assistant_unexplained_break) out += " " + std::string(tags::likely_interruption);
  return out;
}

inline std::string decorate_assistant(const Turn& t, const std::string& text) {
  if (text.empty()) return text;
  std::string out = t.assistant_interrupted ? with_prefix(tags::assistant_interrupts, text) : text;
  return out + assistant_suffixes(t);
}

struct TurnTexts {
  std::vector<std::string> user_speech, user_transcript, tts, llm, assistant_speech, assistant_audit;
};

inline std::vector<std::string> framework_tokens(const TurnTexts& tx, PipelineType p) {
  if (p == PipelineType::s2s) return {};
  return text::split_ws(text::join_nonempty(tx.tts.empty() ? tx.llm : tx.tts));
}

}  // namespace detail

/// Fills per-turn text fields from their pipeline-specific sources, back-fills
/// empty slots (audio_bus, then framework, then audit; intended assistant text
/// is never back-filled for s2s) and applies interruption decorations.
inline ReconciledConversation extract_variables(const Segmentation& seg, const std::vector<EventRecord>& timeline,
                                                PipelineType pipeline) {
  ReconciledConversation conv;
  conv.pipeline = pipeline;
  conv.turns = seg.turns;
  conv.end_call_ms = seg.end_call_ms;
  conv.diagnostics = seg.diagnostics;
  conv.timeline = timeline;
  conv.event_turn = seg.event_turn;
  conv.post_end = seg.post_end;
  if (!timeline.empty()) {
    conv.first_event_ms = timeline.front().timestamp_ms;
    conv.last_event_ms = timeline.back().timestamp_ms;
  }

  std::vector<detail::TurnTexts> texts(conv.turns.size());
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    const auto& e = timeline[i];
    if (pipeline == PipelineType::s2s && e.stream == Stream::framework) continue;
    if (seg.post_end[i]) continue;
    auto& tx = texts[static_cast<std::size_t>(seg.event_turn[i])];
    switch (e.kind) {
      case EventKind::user_speech: tx.user_speech.push_back(e.text()); break;
      case EventKind::user_transcript: tx.user_transcript.push_back(e.text()); break;
      case EventKind::tts_text: tx.tts.push_back(e.text()); break;
      case EventKind::llm_response: tx.llm.push_back(e.text()); break;
      case EventKind::assistant_speech: tx.assistant_speech.push_back(e.text()); break;
      case EventKind::assistant_text: tx.assistant_audit.push_back(e.text()); break;
      case EventKind::tool_call: conv.tool_calls.push_back(tool_call_of(e)); break;
      default: break;
    }
  }

  for (std::size_t i = 0; i < timeline.size(); ++i) {
    const auto& e = timeline[i];
    if (e.stream != Stream::framework || pipeline == PipelineType::s2s || seg.post_end[i]) continue;
    const auto& t = conv.turns[static_cast<std::size_t>(seg.event_turn[i])];
    if (t.assistant_spans.empty()) continue;
    double last_end = 0.0;
    for (const auto& s : t.assistant_spans) last_end = std::max(last_end, s.end_ms);
    if (e.timestamp_ms > last_end) ++conv.diagnostics.framework_after_audio;
  }

  for (std::size_t ti = 0; ti < conv.turns.size(); ++ti) {
    auto& t = conv.turns[ti];
    const auto& tx = texts[ti];
    const auto user_audio = text::join_nonempty(tx.user_speech);
    const auto user_audit = text::join_nonempty(tx.user_transcript);
    const auto asst_audio = text::join_nonempty(tx.assistant_speech);
    const auto asst_framework = pipeline == PipelineType::s2s ? std::string{}
                                : text::join_nonempty(tx.tts.empty() ? tx.llm : tx.tts);
    const auto asst_audit = text::join_nonempty(tx.assistant_audit);

    t.intended_user = user_audio;
    t.transcribed_user = user_audit;
    t.intended_assistant = asst_framework;
    t.transcribed_assistant = asst_audio;

    auto backfill = [&](std::string& slot, std::initializer_list<const std::string*> candidates) {
      if (!slot.empty()) return;
      for (const auto* c : candidates) {
        if (!c->empty()) {
          slot = *c;
          ++conv.diagnostics.backfilled_slots;
          return;
        }
      }
    };
    backfill(t.intended_user, {&user_audit});
    backfill(t.transcribed_user, {&user_audio});
    if (pipeline != PipelineType::s2s) backfill(t.intended_assistant, {&asst_audio, &asst_audit});
    backfill(t.transcribed_assistant, {&asst_framework, &asst_audit});

    if (!t.user_spans.empty() && t.intended_user.empty() && t.transcribed_user.empty())
      throw Error(ErrorKind::missing_source, "turn " + std::to_string(t.index) + " has user audio but no user text");
    if (!t.assistant_spans.empty() && t.intended_assistant.empty() && t.transcribed_assistant.empty())
      throw Error(ErrorKind::missing_source,
                  "turn " + std::to_string(t.index) + " has assistant audio but no assistant text");

    t.intended_user = detail::decorate_user(t, t.intended_user);
    t.transcribed_user = detail::decorate_user(t, t.transcribed_user);
    t.intended_assistant = detail::decorate_assistant(t, t.intended_assistant);
    t.transcribed_assistant = detail::decorate_assistant(t, t.transcribed_assistant);
  }
  return conv;
}

/// Linear trace: greeting, then per turn the user entry followed by the
/// assistant and tool entries in timeline order.
inline std::vector<TraceEntry> build_trace(ReconciledConversation& conv) {
  const auto pipeline = conv.pipeline;
  const auto& timeline = conv.timeline;
  std::vector<std::vector<std::size_t>> per_turn(conv.turns.size());
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    if (pipeline == PipelineType::s2s && timeline[i].stream == Stream::framework) continue;
    per_turn[static_cast<std::size_t>(conv.event_turn[i])].push_back(i);
  }

  std::vector<TraceEntry> trace;
  for (std::size_t ti = 0; ti < conv.turns.size(); ++ti) {
    const auto& turn = conv.turns[ti];
    if (ti > 0) {
      const auto& user_text = pipeline == PipelineType::cascade ? turn.transcribed_user : turn.intended_user;
      if (!user_text.empty()) trace.push_back({TraceRole::user, turn.index, user_text, nullptr, false});
    }

    detail::TurnTexts tx;
    for (auto i : per_turn[ti]) {
      if (conv.post_end[i]) continue;
      if (timeline[i].kind == EventKind::tts_text) tx.tts.push_back(timeline[i].text());
      if (timeline[i].kind == EventKind::llm_response) tx.llm.push_back(timeline[i].text());
    }
    const auto spoken = detail::framework_tokens(tx, pipeline);
    std::size_t cursor = 0;
    const auto first_entry = trace.size();

    auto push_assistant = [&](std::string text, bool post_end) {
      if (!trace.empty() && trace.size() > first_entry && trace.back().role == TraceRole::assistant &&
          trace.back().post_end == post_end) {
        trace.back().text += " " + text;
      } else {
        trace.push_back({TraceRole::assistant, turn.index, std::move(text), nullptr, post_end});
      }
    };

    for (auto i : per_turn[ti]) {
      const auto& e = timeline[i];
      const bool post = conv.post_end[i];
      switch (e.kind) {
        case EventKind::assistant_text: {
          if (pipeline == PipelineType::s2s) break;
          auto tokens = text::split_ws(e.text());
          if (!spoken.empty()) {
            std::size_t k = 0;
            while (k < tokens.size() && cursor + k < spoken.size() && tokens[k] == spoken[cursor + k]) ++k;
            if (k == 0) {
              ++conv.diagnostics.dropped_trace_entries;
              break;
            }
            if (k < tokens.size()) ++conv.diagnostics.truncated_trace_entries;
            tokens.resize(k);
            cursor += k;
          }
          if (!tokens.empty()) push_assistant(text::join(tokens), post);
          break;
        }
        case EventKind::assistant_speech: {
          if (pipeline != PipelineType::s2s) break;
          auto t = text::normalize_ws(e.text());
          if (!t.empty()) push_assistant(std::move(t), post);
          break;
        }
        case EventKind::tool_call: {
          auto rec = tool_call_of(e);
          json content = {{"call_id", rec.call_id}, {"tool_name", rec.tool_name}, {"parameters", rec.parameters}};
          trace.push_back({TraceRole::tool_call, turn.index, {}, std::move(content), post});
          break;
        }
        case EventKind::tool_response: {
          json content = {{"call_id", e.payload.value("call_id", std::string{})},
                          {"response", e.payload.value("response", json(nullptr))}};
          trace.push_back({TraceRole::tool_response, turn.index, {}, std::move(content), post});
          break;
        }
        default:
          break;
      }
    }

    std::size_t first_asst = kNoEvent, last_asst = kNoEvent;
    for (std::size_t k = first_entry; k < trace.size(); ++k) {
      if (trace[k].role != TraceRole::assistant || trace[k].post_end) continue;
      if (first_asst == kNoEvent) first_asst = k;
      last_asst = k;
    }
    if (first_asst != kNoEvent) {
      if (turn.assistant_interrupted)
        trace[first_asst].text = detail::with_prefix(tags::assistant_interrupts, trace[first_asst].text);
      trace[last_asst].text += detail::assistant_suffixes(turn);
    }
  }
  conv.trace = trace;
  return trace;
}

inline ReconciledConversation reconcile(std::vector<EventRecord> timeline, PipelineType pipeline) {
  if (pipeline == PipelineType::s2s) {
    std::erase_if(timeline, [](const EventRecord& e) { return e.stream == Stream::framework; });
  }
  auto seg = segment_turns(timeline);
  detect_interruptions(seg);
  auto conv = extract_variables(seg, timeline, pipeline);
  build_trace(conv);
  return conv;
}

struct RawLogs {
  std::string audit;
  std::string framework;
  std::string audio_bus;
};

/// Parses the three streams, merges them and reconciles the result.
inline ReconciledConversation reconcile_logs(const RawLogs& logs, PipelineType pipeline) {
  auto audit = parse_stream(logs.audit, Stream::audit);
  auto framework = parse_stream(logs.framework, Stream::framework);
  auto audio = parse_stream(logs.audio_bus, Stream::audio_bus);
  auto conv = reconcile(merge_timeline({audio.events, framework.events, audit.events}), pipeline);
  conv.diagnostics.skipped_records = audit.skipped + framework.skipped + audio.skipped;
  conv.diagnostics.schema_errors = audit.errors.size() + framework.errors.size() + audio.errors.size();
  return conv;
}

inline json to_json(const AudioSpan& s) { return json::array({s.start_ms, s.end_ms}); }

inline json to_json(const Turn& t) {
  auto text_or_null = [](const std::string& s) { return s.empty() ? json(nullptr) : json(s); };
  json spans_u = json::array(), spans_a = json::array();
  for (const auto& s : t.user_spans) spans_u.push_back(to_json(s));
  for (const auto& s : t.assistant_spans) spans_a.push_back(to_json(s));
  return {{"index", t.index},
          {"intended_user", text_or_null(t.intended_user)},
          {"transcribed_user", text_or_null(t.transcribed_user)},
          {"intended_assistant", text_or_null(t.intended_assistant)},
          {"transcribed_assistant", text_or_null(t.transcribed_assistant)},
          {"user_spans", spans_u},
          {"assistant_spans", spans_a},
          {"assistant_interrupted", t.assistant_interrupted},
          {"user_interrupted", t.user_interrupted},
          {"has_tool_call", t.has_tool_call},
          {"tags", t.tags}};
}

inline json to_json(const TraceEntry& e) {
  json j = {{"role", std::string(to_string(e.role))}, {"turn_index", e.turn_index}};
  if (e.role == TraceRole::user || e.role == TraceRole::assistant)
    j["content"] = e.text;
  else
    j["content"] = e.tool;
  if (e.post_end) j["post_end"] = true;
  return j;
}

inline json to_json(const Diagnostics& d) {
  return {{"rolled_back_sessions", d.rolled_back_sessions},
          {"buffered_replays", d.buffered_replays},
          {"orphan_spans", d.orphan_spans},
          {"unmatched_audio_ends", d.unmatched_audio_ends},
          {"backfilled_slots", d.backfilled_slots},
          {"post_end_events", d.post_end_events},
          {"framework_after_audio", d.framework_after_audio},
          {"truncated_trace_entries", d.truncated_trace_entries},
          {"dropped_trace_entries", d.dropped_trace_entries},
          {"skipped_records", d.skipped_records},
          {"schema_errors", d.schema_errors}};
}

inline json to_json(const ReconciledConversation& c) {
  json turns = json::array(), trace = json::array();
  for (const auto& t : c.turns) turns.push_back(to_json(t));
  for (const auto& e : c.trace) trace.push_back(to_json(e));
  return {{"schema_version", kReconciledSchemaVersion},
          {"pipeline", std::string(to_string(c.pipeline))},
          {"turns", turns},
          {"trace", trace},
          {"assistant_interrupted_turns", c.assistant_interrupted_turns()},
          {"user_interrupted_turns", c.user_interrupted_turns()},
          {"end", {{"user_end_call", c.end_call_ms.has_value()},
                   {"end_call_ms", c.end_call_ms ? json(*c.end_call_ms) : json(nullptr)},
                   {"last_event_ms", c.last_event_ms}}},
          {"diagnostics", to_json(c.diagnostics)}};
}

}  // namespace eva
