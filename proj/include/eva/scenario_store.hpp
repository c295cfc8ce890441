#pragma once

// Scenario databases, canonical hashing and the declarative mock executor.
//
// A database document maps table name -> record id -> field map. The
// optional top-level "session" member holds authentication state and never
// takes part in hashing or diffing.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "eva/error.hpp"
#include "eva/log_model.hpp"
#include "eva/text.hpp"

namespace eva {

struct ScenarioState {
  json tables = json::object();
  json session = json::object();

  friend bool operator==(const ScenarioState&, const ScenarioState&) = default;
};

inline ScenarioState state_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::schema, "scenario database must be a JSON object");
  ScenarioState s;
  for (const auto& [name, table] : doc.items()) {
    if (name == "session") {
      if (!table.is_object()) throw Error(ErrorKind::schema, "session must be an object");
      s.session = table;
      continue;
    }
    if (name.empty()) throw Error(ErrorKind::schema, "empty table name");
    if (!table.is_object()) throw Error(ErrorKind::schema, "table '" + name + "' must be an object");
    for (const auto& [id, record] : table.items()) {
      if (id.empty()) throw Error(ErrorKind::schema, "empty record id in table '" + name + "'");
      if (!record.is_object())
        throw Error(ErrorKind::schema, "record '" + name + "/" + id + "' must be an object");
    }
    s.tables[name] = table;
  }
  return s;
}

inline json state_to_json(const ScenarioState& s) {
  json doc = s.tables;
  if (!s.session.empty()) doc["session"] = s.session;
  return doc;
}

namespace detail {

inline void canonical_write(const json& v, std::string& out) {
  switch (v.type()) {
    case json::value_t::object: {
      // nlohmann's default object type is a std::map, so iteration is
      // already in bytewise key order.
      out += '{';
      bool first = true;
      for (const auto& [k, child] : v.items()) {
        if (!first) out += ',';
        first = false;
        out += json(k).dump();
        out += ':';
        canonical_write(child, out);
      }
      out += '}';
      break;
    }
    case json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        canonical_write(v[i], out);
      }
      out += ']';
      break;
    }
    case json::value_t::number_float: {
      const double d = v.get<double>();
      if (!std::isfinite(d)) throw Error(ErrorKind::unsupported_value, "non-finite decimal");
      char buf[64];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, d);
      if (ec != std::errc{}) throw Error(ErrorKind::unsupported_value, "decimal not representable");
      out.append(buf, ptr);
      break;
    }
    case json::value_t::binary:
    case json::value_t::discarded:
      throw Error(ErrorKind::unsupported_value, "binary or discarded value");
    default:
      out += v.dump();
      break;
  }
}

}  // namespace detail

/// Sorted keys, no whitespace, shortest round-trip decimals.
inline std::string canonical_serialize(const json& value) {
  std::string out;
  detail::canonical_write(value, out);
  return out;
}

inline std::string canonical_serialize(const ScenarioState& state) { return canonical_serialize(state.tables); }

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::string_view bytes) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size())
    throw Error(ErrorKind::io, "SHA-256 computation failed");
  return d;
}

inline std::string to_hex(const Digest& d) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : d) {
    out += digits[b >> 4];
    out += digits[b & 0xf];
  }
  return out;
}

inline Digest db_hash(const ScenarioState& state) { return sha256(canonical_serialize(state)); }

struct SessionMismatch {
  std::string key;
  json expected;
  std::optional<json> actual;  ///< absent when the key is missing
};

struct SessionCheck {
  bool passed = true;
  std::vector<SessionMismatch> mismatches;
};

inline bool session_values_equal(const json& expected, const json& actual) {
  if (expected.is_string() && actual.is_string())
    return text::iequals(expected.get_ref<const std::string&>(), actual.get_ref<const std::string&>());
  return canonical_serialize(expected) == canonical_serialize(actual);
}

/// Every expected key must be present in actual with an equal value;
/// string values compare case-insensitively, extra actual keys are fine.
inline SessionCheck session_superset_check(const json& expected, const json& actual) {
  SessionCheck out;
  if (!expected.is_object()) return out;
  for (const auto& [key, want] : expected.items()) {
    auto it = actual.is_object() ? actual.find(key) : actual.end();
    if (!actual.is_object() || it == actual.end()) {
      out.mismatches.push_back({key, want, std::nullopt});
    } else if (!session_values_equal(want, *it)) {
      out.mismatches.push_back({key, want, std::make_optional<json>(*it)});
    }
  }
  out.passed = out.mismatches.empty();
  return out;
}

struct FieldChange {
  std::vector<std::string> path;
  std::optional<json> expected;  ///< absent when the field exists only in actual
  std::optional<json> actual;    ///< absent when the field exists only in expected

  std::string field() const { return text::join(path, "."); }
};

struct RecordDiff {
  std::string record_id;
  std::vector<FieldChange> field_changes;
};

struct TableDiff {
  std::string table;
  std::vector<std::string> records_added;
  std::vector<std::string> records_removed;
  std::vector<RecordDiff> records_modified;
};

struct StateDiff {
  std::vector<std::string> tables_added;
  std::vector<std::string> tables_removed;
  std::vector<TableDiff> tables_modified;

  bool empty() const { return tables_added.empty() && tables_removed.empty() && tables_modified.empty(); }

  std::size_t field_change_count() const {
    std::size_t n = 0;
    for (const auto& t : tables_modified)
      for (const auto& r : t.records_modified) n += r.field_changes.size();
    return n;
  }
};

namespace detail {

inline void diff_values(const json& expected, const json& actual, std::vector<std::string>& path,
                        std::vector<FieldChange>& out) {
  if (expected.is_object() && actual.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, _] : expected.items()) keys.insert(k);
    for (const auto& [k, _] : actual.items()) keys.insert(k);
    for (const auto& k : keys) {
      path.push_back(k);
      auto e = expected.find(k);
      auto a = actual.find(k);
      if (e == expected.end())
        out.push_back({path, std::nullopt, std::make_optional<json>(*a)});
      else if (a == actual.end())
        out.push_back({path, std::make_optional<json>(*e), std::nullopt});
      else
        diff_values(*e, *a, path, out);
      path.pop_back();
    }
    return;
  }
  if (canonical_serialize(expected) != canonical_serialize(actual)) out.push_back({path, std::make_optional<json>(expected), std::make_optional<json>(actual)});
}

}  // namespace detail

/// Field-level difference. Nested objects are walked key by key; lists and
/// scalars are compared whole, lists being order-sensitive.
inline StateDiff diff_states(const ScenarioState& expected, const ScenarioState& actual) {
  StateDiff d;
  const auto& e = expected.tables;
  const auto& a = actual.tables;
  for (const auto& [name, _] : a.items())
    if (!e.contains(name)) d.tables_added.push_back(name);
  for (const auto& [name, etable] : e.items()) {
    auto it = a.find(name);
    if (it == a.end()) {
      d.tables_removed.push_back(name);
      continue;
    }
    const auto& atable = *it;
    TableDiff td;
    td.table = name;
    for (const auto& [id, _] : atable.items())
      if (!etable.contains(id)) td.records_added.push_back(id);
    for (const auto& [id, erec] : etable.items()) {
      auto rit = atable.find(id);
      if (rit == atable.end()) {
        td.records_removed.push_back(id);
        continue;
      }
      RecordDiff rd;
      rd.record_id = id;
      std::vector<std::string> path;
      detail::diff_values(erec, *rit, path, rd.field_changes);
      if (!rd.field_changes.empty()) td.records_modified.push_back(std::move(rd));
    }
    if (!td.records_added.empty() || !td.records_removed.empty() || !td.records_modified.empty())
      d.tables_modified.push_back(std::move(td));
  }
  return d;
}

inline json to_json(const StateDiff& d) {
  json mods = json::array();
  for (const auto& t : d.tables_modified) {
    json recs = json::array();
    for (const auto& r : t.records_modified) {
      json changes = json::array();
      for (const auto& c : r.field_changes) {
        changes.push_back({{"field", c.field()},
                           {"expected", c.expected ? *c.expected : json(nullptr)},
                           {"actual", c.actual ? *c.actual : json(nullptr)},
                           {"expected_present", c.expected.has_value()},
                           {"actual_present", c.actual.has_value()}});
      }
      recs.push_back({{"record_id", r.record_id}, {"field_changes", changes}});
    }
    mods.push_back({{"table", t.table},
                    {"records_added", t.records_added},
                    {"records_removed", t.records_removed},
                    {"records_modified", recs}});
  }
  return {{"tables_added", d.tables_added}, {"tables_removed", d.tables_removed}, {"tables_modified", mods}};
}

// ---------------------------------------------------------------------------
// Tool schemas and execution

enum class ToolEffect { read_only, write };

struct ParamSpec {
  std::string name;
  std::string type = "any";  ///< string | integer | number | boolean | object | array | any
};

struct ToolSchema {
  std::string name;
  ToolEffect effect = ToolEffect::read_only;
  std::vector<ParamSpec> required_params;
  std::vector<ParamSpec> optional_params;
  json read = nullptr;          ///< {"table", "key"?}: the record (or table) returned as data
  json checks = json::array();  ///< [{"left", "right", "error"?}] preconditions
  json ops = json::array();     ///< write template: set / insert / delete / session_set
};

using ToolCatalog = std::map<std::string, ToolSchema>;

inline bool is_known_param_type(std::string_view t) {
  return t == "string" || t == "integer" || t == "number" || t == "boolean" || t == "object" || t == "array" ||
         t == "any";
}

inline ToolCatalog parse_tools(const json& doc) {
  const json& list = doc.is_object() && doc.contains("tools") ? doc["tools"] : doc;
  if (!list.is_array()) throw Error(ErrorKind::schema, "tools document must be an array or {\"tools\": [...]}");
  ToolCatalog catalog;
  for (const auto& t : list) {
    ToolSchema s;
    s.name = t.value("name", std::string{});
    if (s.name.empty()) throw Error(ErrorKind::schema, "tool without a name");
    auto effect = t.value("effect", std::string("read_only"));
    if (effect == "write")
      s.effect = ToolEffect::write;
    else if (effect != "read_only")
      throw Error(ErrorKind::schema, "tool '" + s.name + "': unknown effect '" + effect + "'");
    std::set<std::string> names;
    auto load_params = [&](const char* key, std::vector<ParamSpec>& out) {
      if (!t.contains(key)) return;
      for (const auto& p : t[key]) {
        ParamSpec ps;
        if (p.is_string()) {
          ps.name = p.get<std::string>();
        } else {
          ps.name = p.value("name", std::string{});
          ps.type = p.value("type", std::string("any"));
        }
        if (ps.name.empty() || !names.insert(ps.name).second)
          throw Error(ErrorKind::schema, "tool '" + s.name + "': parameter names must be unique and non-empty");
        if (!is_known_param_type(ps.type))
          throw Error(ErrorKind::schema, "tool '" + s.name + "': unknown parameter type '" + ps.type + "'");
        out.push_back(ps);
      }
    };
    load_params("required_params", s.required_params);
    load_params("optional_params", s.optional_params);
    s.read = t.value("read", json(nullptr));
    s.checks = t.value("checks", json::array());
    s.ops = t.value("ops", json::array());
    for (const auto& op : s.ops) {
      auto kind = op.value("op", std::string{});
      if (kind != "set" && kind != "insert" && kind != "delete" && kind != "session_set")
        throw Error(ErrorKind::schema, "tool '" + s.name + "': unknown op '" + kind + "'");
      if (s.effect == ToolEffect::read_only && kind != "session_set")
        throw Error(ErrorKind::schema, "tool '" + s.name + "': read_only tools may only use session_set");
    }
    if (!catalog.emplace(s.name, std::move(s)).second)
      throw Error(ErrorKind::schema, "duplicate tool '" + t.value("name", std::string{}) + "'");
  }
  return catalog;
}

/// Lenient scalar parsing shared by the executor and tool-call validity:
/// returns the value converted to the declared type, or nullopt.
inline std::optional<json> coerce_param(const json& v, std::string_view type) {
  if (type == "any") return std::make_optional<json>(v);
  if (type == "string") return v.is_string() ? std::make_optional<json>(v) : std::nullopt;
  if (type == "object") return v.is_object() ? std::make_optional<json>(v) : std::nullopt;
  if (type == "array") return v.is_array() ? std::make_optional<json>(v) : std::nullopt;
  if (type == "boolean") {
    if (v.is_boolean()) return std::make_optional<json>(v);
    if (v.is_string()) {
      const auto& s = v.get_ref<const std::string&>();
      if (text::iequals(s, "true")) return json(true);
      if (text::iequals(s, "false")) return json(false);
    }
    return std::nullopt;
  }
  if (type == "integer") {
    if (v.is_number_integer()) return std::make_optional<json>(v);
    if (v.is_number_float()) {
      double d = v.get<double>();
      if (std::isfinite(d) && d == std::floor(d) && std::fabs(d) < 9.0e15) return json(static_cast<std::int64_t>(d));
      return std::nullopt;
    }
    if (v.is_string()) {
      auto s = text::normalize_ws(v.get_ref<const std::string&>());
      std::int64_t x = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
      if (ec == std::errc{} && p == s.data() + s.size() && !s.empty()) return json(x);
    }
    return std::nullopt;
  }
  if (type == "number") {
    if (v.is_number()) return std::make_optional<json>(v);
    if (v.is_string()) {
      auto s = text::normalize_ws(v.get_ref<const std::string&>());
      double x = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
      if (ec == std::errc{} && p == s.data() + s.size() && !s.empty() && std::isfinite(x)) return json(x);
    }
    return std::nullopt;
  }
  return std::nullopt;
}

/// Per-call validity: known tool, required parameters present and every
/// supplied declared parameter parses as its type.
inline bool tool_call_is_valid(const ToolCallRecord& call, const ToolCatalog& catalog) {
  auto it = catalog.find(call.tool_name);
  if (it == catalog.end() || !call.parameters.is_object()) return false;
  for (const auto& p : it->second.required_params) {
    auto v = call.parameters.find(p.name);
    if (v == call.parameters.end() || v->is_null() || !coerce_param(*v, p.type)) return false;
  }
  for (const auto& p : it->second.optional_params) {
    auto v = call.parameters.find(p.name);
    if (v != call.parameters.end() && !v->is_null() && !coerce_param(*v, p.type)) return false;
  }
  return true;
}

struct ToolExecution {
  ScenarioState state;
  json response;
};

namespace detail {

struct ToolFailure {
  std::string type;
  std::string message;
};

class Executor {
 public:
  Executor(ScenarioState& state, const json& params) : state_(state), params_(params) {}

  json eval(const json& expr) const {
    if (!expr.is_object()) return expr;
    if (expr.contains("param")) {
      auto name = expr["param"].get<std::string>();
      auto it = params_.find(name);
      if (it == params_.end() || it->is_null()) return expr.value("default", json(nullptr));
      return *it;
    }
    if (expr.contains("literal")) return expr["literal"];
    if (expr.contains("lookup")) {
      const auto& lk = expr["lookup"];
      const json* node = &record(lk.at("table").get<std::string>(), key(lk.at("key")));
      for (const auto& step : lk.value("path", json::array())) {
        auto k = path_key(step);
        if (!node->is_object() || !node->contains(k))
          throw ToolFailure{"record_not_found", "lookup path element '" + k + "' not found"};
        node = &(*node)[k];
      }
      return *node;
    }
    return expr;
  }

  std::string key(const json& expr) const {
    auto v = eval(expr);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    throw ToolFailure{"invalid_parameter", "record key must be a string"};
  }

  std::string path_key(const json& step) const {
    if (step.is_string()) return step.get<std::string>();
    return key(step);
  }

  json& table(const std::string& name) const {
    if (!state_.tables.contains(name)) throw ToolFailure{"record_not_found", "no table '" + name + "'"};
    return state_.tables[name];
  }

  json& record(const std::string& tbl, const std::string& id) const {
    auto& t = table(tbl);
    if (!t.contains(id)) throw ToolFailure{"record_not_found", "no record '" + id + "' in table '" + tbl + "'"};
    return t[id];
  }

  void apply(const json& op, json& affected) {
    const auto kind = op.at("op").get<std::string>();
    if (kind == "session_set") {
      state_.session[op.at("field").get<std::string>()] = eval(op.at("value"));
      return;
    }
    const auto tbl = op.at("table").get<std::string>();
    const auto id = key(op.at("key"));
    if (kind == "set") {
      auto value = eval(op.at("value"));
      json* node = &record(tbl, id);
      const auto path = op.value("path", json::array());
      if (path.empty()) throw ToolFailure{"invalid_parameter", "set op requires a path"};
      for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        auto k = path_key(path[i]);
        if (!node->contains(k) || (*node)[k].is_null()) (*node)[k] = json::object();
        node = &(*node)[k];
        if (!node->is_object()) throw ToolFailure{"invalid_parameter", "path element '" + k + "' is not an object"};
      }
      (*node)[path_key(path.back())] = std::move(value);
    } else if (kind == "insert") {
      auto value = eval(op.at("value"));
      if (!value.is_object()) throw ToolFailure{"invalid_parameter", "inserted record must be an object"};
      if (!state_.tables.contains(tbl)) state_.tables[tbl] = json::object();
      state_.tables[tbl][id] = std::move(value);
    } else if (kind == "delete") {
      record(tbl, id);
      state_.tables[tbl].erase(id);
    }
    affected.push_back({{"table", tbl}, {"record_id", id}});
  }

 private:
  ScenarioState& state_;
  const json& params_;
};

inline json failure(const std::string& tool, const std::string& type, const std::string& message) {
  return {{"success", false}, {"tool", tool}, {"error", {{"type", type}, {"message", message}}}};
}

}  // namespace detail

/// Runs one call against a copy of the state. Failures come back as an
/// error payload together with the unchanged state.
inline ToolExecution execute_tool_call(const ScenarioState& state, const ToolCallRecord& call,
                                       const ToolCatalog& catalog) {
  auto it = catalog.find(call.tool_name);
  if (it == catalog.end())
    return {state, detail::failure(call.tool_name, "unknown_tool", "no tool named '" + call.tool_name + "'")};
  const auto& schema = it->second;

  json params = json::object();
  for (const auto& p : schema.required_params) {
    auto v = call.parameters.find(p.name);
    if (v == call.parameters.end() || v->is_null())
      return {state, detail::failure(schema.name, "missing_required_parameter", "missing '" + p.name + "'")};
    auto c = coerce_param(*v, p.type);
    if (!c)
      return {state, detail::failure(schema.name, "invalid_parameter", "'" + p.name + "' is not a valid " + p.type)};
    params[p.name] = *c;
  }
  for (const auto& p : schema.optional_params) {
    auto v = call.parameters.find(p.name);
    if (v == call.parameters.end() || v->is_null()) continue;
    auto c = coerce_param(*v, p.type);
    if (!c)
      return {state, detail::failure(schema.name, "invalid_parameter", "'" + p.name + "' is not a valid " + p.type)};
    params[p.name] = *c;
  }

  ScenarioState next = state;
  detail::Executor ex(next, params);
  json response = {{"success", true}, {"tool", schema.name}, {"affected", json::array()}};
  try {
    for (const auto& check : schema.checks) {
      auto left = ex.eval(check.at("left"));
      auto right = ex.eval(check.at("right"));
      if (!session_values_equal(left, right))
        throw detail::ToolFailure{check.value("error", std::string("check_failed")),
                                  check.value("message", std::string("precondition not met"))};
    }
    if (schema.read.is_object()) {
      const auto tbl = schema.read.at("table").get<std::string>();
      response["data"] = schema.read.contains("key") ? ex.record(tbl, ex.key(schema.read["key"])) : ex.table(tbl);
    }
    for (const auto& op : schema.ops) ex.apply(op, response["affected"]);
  } catch (const detail::ToolFailure& f) {
    return {state, detail::failure(schema.name, f.type, f.message)};
  } catch (const json::exception& e) {
    return {state, detail::failure(schema.name, "invalid_parameter", e.what())};
  }
  if (schema.effect == ToolEffect::read_only) response.erase("affected");
  return {std::move(next), std::move(response)};
}

/// Replays calls in order, returning the final state and each response.
inline ToolExecution replay_tool_calls(const ScenarioState& initial, const std::vector<ToolCallRecord>& calls,
                                       const ToolCatalog& catalog, std::vector<json>* responses = nullptr) {
  ToolExecution cur{initial, nullptr};
  for (const auto& c : calls) {
    cur = execute_tool_call(cur.state, c, catalog);
    if (responses) responses->push_back(cur.response);
  }
  return cur;
}

}  // namespace eva
