#pragma once

// Event-stream schemas for one simulated conversation and their parsers.
//
// Three independent streams are recorded per conversation:
//   audit      audit_log.json           {"events": [ {...}, ... ]}
//   framework  framework_logs.jsonl     one JSON object per line
//   audio_bus  elevenlabs_events.jsonl  one JSON object per line
// Every record carries "t" (real-valued ms since the Unix epoch) and "kind";
// the remaining members form the kind-specific payload.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "eva/error.hpp"

namespace eva {

using json = nlohmann::json;

/// Declaration order is the tie-break priority used when merging timelines.
enum class Stream { audio_bus = 0, framework = 1, audit = 2 };

enum class EventKind {
  user_transcript,
  assistant_text,
  tool_call,
  tool_response,
  tts_text,
  llm_response,
  audio_start,
  audio_end,
  user_speech,
  assistant_speech,
  end_call,
};

enum class Speaker { user, assistant };

enum class PipelineType { cascade, hybrid, s2s };

constexpr std::string_view to_string(Stream s) {
  switch (s) {
    case Stream::audio_bus: return "audio_bus";
    case Stream::framework: return "framework";
    case Stream::audit: return "audit";
  }
  return "?";
}

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::user_transcript: return "user_transcript";
    case EventKind::assistant_text: return "assistant_text";
    case EventKind::tool_call: return "tool_call";
    case EventKind::tool_response: return "tool_response";
    case EventKind::tts_text: return "tts_text";
    case EventKind::llm_response: return "llm_response";
    case EventKind::audio_start: return "audio_start";
    case EventKind::audio_end: return "audio_end";
    case EventKind::user_speech: return "user_speech";
    case EventKind::assistant_speech: return "assistant_speech";
    case EventKind::end_call: return "end_call";
  }
  return "?";
}

constexpr std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "assistant"; }

constexpr std::string_view to_string(PipelineType p) {
  switch (p) {
    case PipelineType::cascade: return "cascade";
    case PipelineType::hybrid: return "hybrid";
    case PipelineType::s2s: return "s2s";
  }
  return "?";
}

inline std::optional<PipelineType> parse_pipeline(std::string_view s) {
  if (s == "cascade") return PipelineType::cascade;
  if (s == "hybrid") return PipelineType::hybrid;
  if (s == "s2s") return PipelineType::s2s;
  return std::nullopt;
}

inline std::optional<Stream> parse_stream_tag(std::string_view s) {
  if (s == "audio_bus") return Stream::audio_bus;
  if (s == "framework") return Stream::framework;
  if (s == "audit") return Stream::audit;
  return std::nullopt;
}

/// Kinds legal on a given stream; anything else is skipped and counted.
inline std::optional<EventKind> kind_for_stream(Stream stream, std::string_view name) {
  switch (stream) {
    case Stream::audit:
      if (name == "user_transcript") return EventKind::user_transcript;
      if (name == "assistant_text") return EventKind::assistant_text;
      if (name == "tool_call") return EventKind::tool_call;
      if (name == "tool_response") return EventKind::tool_response;
      break;
    case Stream::framework:
      if (name == "tts_text") return EventKind::tts_text;
      if (name == "llm_response") return EventKind::llm_response;
      break;
    case Stream::audio_bus:
      if (name == "audio_start") return EventKind::audio_start;
      if (name == "audio_end") return EventKind::audio_end;
      if (name == "user_speech") return EventKind::user_speech;
      if (name == "assistant_speech") return EventKind::assistant_speech;
      if (name == "end_call") return EventKind::end_call;
      break;
  }
  return std::nullopt;
}

struct EventRecord {
  Stream stream = Stream::audio_bus;
  double timestamp_ms = 0.0;
  EventKind kind = EventKind::end_call;
  json payload = json::object();

  std::optional<Speaker> speaker() const {
    auto it = payload.find("speaker");
    if (it == payload.end() || !it->is_string()) return std::nullopt;
    if (*it == "user") return Speaker::user;
    if (*it == "assistant") return Speaker::assistant;
    return std::nullopt;
  }

  std::string text() const {
    auto it = payload.find("text");
    return (it != payload.end() && it->is_string()) ? it->get<std::string>() : std::string{};
  }

  bool is_audio(EventKind k, Speaker s) const { return kind == k && speaker() == s; }

  friend bool operator==(const EventRecord& a, const EventRecord& b) {
    return a.stream == b.stream && a.timestamp_ms == b.timestamp_ms && a.kind == b.kind && a.payload == b.payload;
  }
};

struct ToolCallRecord {
  std::string tool_name;
  json parameters = json::object();
  std::string call_id;
  double timestamp_ms = 0.0;
};

inline ToolCallRecord tool_call_of(const EventRecord& e) {
  ToolCallRecord r;
  r.tool_name = e.payload.value("tool_name", std::string{});
  r.parameters = e.payload.value("parameters", json::object());
  r.call_id = e.payload.value("call_id", std::string{});
  r.timestamp_ms = e.timestamp_ms;
  return r;
}

struct RecordError {
  std::size_t index = 0;  ///< record position in the source (line number - 1 for JSONL)
  std::string message;
};

struct ParseResult {
  std::vector<EventRecord> events;
  std::size_t skipped = 0;
  std::vector<RecordError> errors;
};

namespace detail {

inline std::optional<std::string> check_required(EventKind kind, const json& rec) {
  auto need_string = [&](const char* key) -> std::optional<std::string> {
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_string()) return std::string("missing string field '") + key + "'";
    return std::nullopt;
  };
  switch (kind) {
    case EventKind::user_transcript:
    case EventKind::assistant_text:
    case EventKind::tts_text:
    case EventKind::llm_response:
    case EventKind::user_speech:
    case EventKind::assistant_speech:
      return need_string("text");
    case EventKind::tool_call: {
      if (auto e = need_string("call_id")) return e;
      if (auto e = need_string("tool_name")) return e;
      auto it = rec.find("parameters");
      if (it != rec.end() && !it->is_object()) return std::string("'parameters' must be an object");
      return std::nullopt;
    }
    case EventKind::tool_response:
      return need_string("call_id");
    case EventKind::audio_start:
    case EventKind::audio_end: {
      if (auto e = need_string("speaker")) return e;
      const auto& s = rec["speaker"];
      if (s != "user" && s != "assistant") return std::string("speaker must be 'user' or 'assistant'");
      return std::nullopt;
    }
    case EventKind::end_call:
      return std::nullopt;
  }
  return std::nullopt;
}

inline void parse_record(const json& rec, Stream stream, std::size_t index, ParseResult& out) {
  if (!rec.is_object()) {
    out.errors.push_back({index, "record is not an object"});
    return;
  }
  auto kind_it = rec.find("kind");
  if (kind_it == rec.end() || !kind_it->is_string()) {
    out.errors.push_back({index, "missing string field 'kind'"});
    return;
  }
  auto kind = kind_for_stream(stream, kind_it->get<std::string>());
  if (!kind) {
    ++out.skipped;
    return;
  }
  auto t_it = rec.find("t");
  if (t_it == rec.end() || !t_it->is_number()) {
    out.errors.push_back({index, "missing numeric field 't'"});
    return;
  }
  const double t = t_it->get<double>();
  if (!std::isfinite(t) || t < 0.0) {
    out.errors.push_back({index, "timestamp must be finite and non-negative"});
    return;
  }
  if (auto err = check_required(*kind, rec)) {
    out.errors.push_back({index, *err});
    return;
  }
  EventRecord ev;
  ev.stream = stream;
  ev.timestamp_ms = t;
  ev.kind = *kind;
  ev.payload = rec;
  ev.payload.erase("t");
  ev.payload.erase("kind");
  out.events.push_back(std::move(ev));
}

// Tool-call identity rules are checked after time ordering so that a
// response is only valid when its call precedes it.
inline void check_tool_identity(ParseResult& out) {
  std::set<std::string> seen;
  std::vector<EventRecord> kept;
  kept.reserve(out.events.size());
  for (std::size_t i = 0; i < out.events.size(); ++i) {
    auto& ev = out.events[i];
    if (ev.kind == EventKind::tool_call) {
      auto id = ev.payload["call_id"].get<std::string>();
      if (!seen.insert(id).second) {
        out.errors.push_back({i, "duplicate call_id '" + id + "'"});
        continue;
      }
    } else if (ev.kind == EventKind::tool_response) {
      auto id = ev.payload["call_id"].get<std::string>();
      if (!seen.count(id)) {
        out.errors.push_back({i, "tool_response references unknown call_id '" + id + "'"});
        continue;
      }
    }
    kept.push_back(std::move(ev));
  }
  out.events = std::move(kept);
}

}  // namespace detail

/// Parses one stream. Unknown kinds are skipped and counted; per-record
/// schema problems are collected. Throws malformed_document for
/// unparseable bytes and schema when no record survives validation.
inline ParseResult parse_stream(std::string_view raw_bytes, Stream stream) {
  ParseResult out;
  if (stream == Stream::audit) {
    if (raw_bytes.find_first_not_of(" \t\r\n") == std::string_view::npos) return out;
    json doc;
    try {
      doc = json::parse(raw_bytes);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::malformed_document, std::string("audit log: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("events") || !doc["events"].is_array())
      throw Error(ErrorKind::malformed_document, "audit log: expected an object with an \"events\" array");
    const auto& events = doc["events"];
    for (std::size_t i = 0; i < events.size(); ++i) detail::parse_record(events[i], stream, i, out);
  } else {
    std::size_t line_no = 0, pos = 0;
    while (pos <= raw_bytes.size()) {
      auto nl = raw_bytes.find('\n', pos);
      auto line = raw_bytes.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
        json rec;
        try {
          rec = json::parse(line);
        } catch (const json::parse_error& e) {
          throw Error(ErrorKind::malformed_document,
                      std::string(to_string(stream)) + " line " + std::to_string(line_no) + ": " + e.what());
        }
        detail::parse_record(rec, stream, line_no - 1, out);
      }
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.timestamp_ms < b.timestamp_ms; });
  if (stream == Stream::audit) detail::check_tool_identity(out);
  if (out.events.empty() && !out.errors.empty()) {
    throw Error(ErrorKind::schema, std::string(to_string(stream)) + ": every record failed validation (first: " +
                                       out.errors.front().message + ")");
  }
  return out;
}

inline json to_json(const EventRecord& e) {
  json j = e.payload;
  j["t"] = e.timestamp_ms;
  j["kind"] = std::string(to_string(e.kind));
  return j;
}

/// Inverse of parse_stream for well-formed events of one stream.
inline std::string serialize_stream(const std::vector<EventRecord>& events, Stream stream) {
  if (stream == Stream::audit) {
    json doc = {{"events", json::array()}};
    for (const auto& e : events) doc["events"].push_back(to_json(e));
    return doc.dump();
  }
  std::string out;
  for (const auto& e : events) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

/// Global time-ordered merge. Equal timestamps are ordered by stream
/// priority (audio_bus, framework, audit) and then by input position.
inline std::vector<EventRecord> merge_timeline(const std::vector<std::vector<EventRecord>>& streams) {
  std::vector<EventRecord> all;
  std::size_t total = 0;
  for (const auto& s : streams) total += s.size();
  all.reserve(total);
  for (const auto& s : streams) all.insert(all.end(), s.begin(), s.end());
  std::stable_sort(all.begin(), all.end(), [](const EventRecord& a, const EventRecord& b) {
    if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
    return static_cast<int>(a.stream) < static_cast<int>(b.stream);
  });
  return all;
}

}  // namespace eva
