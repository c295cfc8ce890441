#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "eva/fixtures.hpp"
#include "eva/scenario_store.hpp"

using namespace eva;

namespace {

ScenarioState airline_initial() { return state_from_json(fixtures::scenario_121_bundle().initial_db); }

ToolCatalog airline_catalog() { return parse_tools(fixtures::scenario_121_bundle().tools); }

ToolCallRecord make_call(const std::string& name, json params) {
  ToolCallRecord c;
  c.call_id = "x";
  c.tool_name = name;
  c.parameters = std::move(params);
  return c;
}

// Random nested field maps for the diff and hash properties.
json random_value(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> kind(0, depth > 0 ? 6 : 4);
  switch (kind(rng)) {
    case 0: return nullptr;
    case 1: return static_cast<int>(rng() % 100);
    case 2: return std::string(1, static_cast<char>('a' + rng() % 5));
    case 3: return static_cast<double>(rng() % 1000) / 8.0 + 0.1;
    case 4: return (rng() & 1) == 1;
    case 5: {
      json a = json::array();
      for (int i = 0, n = static_cast<int>(rng() % 3); i < n; ++i) a.push_back(random_value(rng, depth - 1));
      return a;
    }
    default: {
      json o = json::object();
      for (int i = 0, n = 1 + static_cast<int>(rng() % 3); i < n; ++i)
        o["k" + std::to_string(rng() % 4)] = random_value(rng, depth - 1);
      return o;
    }
  }
}

ScenarioState random_state(std::mt19937_64& rng) {
  ScenarioState s;
  for (int t = 0, nt = 1 + static_cast<int>(rng() % 3); t < nt; ++t) {
    json table = json::object();
    for (int r = 0, nr = static_cast<int>(rng() % 4); r < nr; ++r) {
      json rec = json::object();
      for (int f = 0, nf = 1 + static_cast<int>(rng() % 4); f < nf; ++f)
        rec["f" + std::to_string(rng() % 5)] = random_value(rng, 2);
      table["r" + std::to_string(rng() % 6)] = rec;
    }
    s.tables["t" + std::to_string(t)] = table;
  }
  return s;
}

void mutate(ScenarioState& s, std::mt19937_64& rng) {
  switch (rng() % 4) {
    case 0: s.tables["t_new"] = json::object(); break;
    case 1: {
      auto& t = s.tables["t0"];
      t["r_new"] = {{"f0", 1}};
      break;
    }
    case 2: {
      auto& t = s.tables["t0"];
      if (!t.empty()) t.erase(t.begin().key());
      else t["r_other"] = json::object();
      break;
    }
    default: {
      auto& t = s.tables["t0"];
      if (t.empty()) t["r0"] = json::object();
      auto& rec = t.begin().value();
      rec["f" + std::to_string(rng() % 6)] = random_value(rng, 2);
      break;
    }
  }
}

void set_path(json& node, const std::vector<std::string>& path, std::size_t i, const std::optional<json>& value) {
  const auto& k = path[i];
  if (i + 1 == path.size()) {
    if (value) node[k] = *value;
    else node.erase(k);
    return;
  }
  set_path(node[k], path, i + 1, value);
}

// Applies a diff to `expected`; the result should equal `actual`.
ScenarioState apply_diff(ScenarioState s, const StateDiff& d, const ScenarioState& actual) {
  for (const auto& t : d.tables_removed) s.tables.erase(t);
  for (const auto& t : d.tables_added) s.tables[t] = actual.tables[t];
  for (const auto& td : d.tables_modified) {
    auto& table = s.tables[td.table];
    for (const auto& r : td.records_removed) table.erase(r);
    for (const auto& r : td.records_added) table[r] = actual.tables[td.table][r];
    for (const auto& rd : td.records_modified)
      for (const auto& fc : rd.field_changes) set_path(table[rd.record_id], fc.path, 0, fc.actual);
  }
  return s;
}

}  // namespace

TEST(CanonicalSerialize, EmptyObject) { EXPECT_EQ(canonical_serialize(json::object()), "{}"); }

TEST(CanonicalSerialize, KeyOrderIndependent) {
  auto a = json::parse(R"({"b":1,"a":2})");
  auto b = json::parse(R"({"a":2,"b":1})");
  EXPECT_EQ(canonical_serialize(a), canonical_serialize(b));
  EXPECT_EQ(canonical_serialize(a), R"({"a":2,"b":1})");
}

TEST(CanonicalSerialize, NestedSortedNoWhitespace) {
  auto v = json::parse(R"({"z":{"y":[1, 2.5, "x"],"b":null},"a":true})");
  EXPECT_EQ(canonical_serialize(v), R"({"a":true,"z":{"b":null,"y":[1,2.5,"x"]}})");
}

TEST(CanonicalSerialize, ShortestRoundTripDecimals) {
  EXPECT_EQ(canonical_serialize(json(0.1)), "0.1");
  EXPECT_EQ(canonical_serialize(json(289.0)), "289");
  EXPECT_EQ(canonical_serialize(json(1e21)), "1e+21");
  EXPECT_EQ(canonical_serialize(json(-7)), "-7");
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(canonical_serialize(json(x))), x);
}

TEST(CanonicalSerialize, NonFiniteRejected) {
  try {
    canonical_serialize(json(std::numeric_limits<double>::infinity()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unsupported_value);
  }
  EXPECT_THROW(canonical_serialize(json{{"a", std::nan("")}}), Error);
}

TEST(CanonicalSerialize, ReservationRecordStable) {
  auto bundle = fixtures::scenario_121_bundle();
  const auto rec = bundle.expected_db["reservations"]["6VORJU"];
  const auto first = canonical_serialize(rec);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(canonical_serialize(json::parse(rec.dump())), first);
}

TEST(DbHash, EmptyMatchesExternalDigest) {
  EXPECT_EQ(to_hex(db_hash(ScenarioState{})), "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a");
  EXPECT_EQ(to_hex(sha256("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(DbHash, SessionIgnored) {
  auto a = airline_initial();
  auto b = a;
  b.session = {{"confirmation_number", "6VORJU"}};
  EXPECT_EQ(db_hash(a), db_hash(b));
}

TEST(DbHash, OneFieldChangesDigest) {
  auto a = airline_initial();
  auto b = a;
  b.tables["reservations"]["6VORJU"]["status"] = "changed";
  EXPECT_NE(db_hash(a), db_hash(b));
}

TEST(StateFromJson, SplitsSessionAndValidates) {
  auto s = state_from_json(json::parse(R"({"t":{"r":{"f":1}},"session":{"k":"v"}})"));
  EXPECT_EQ(s.session["k"], "v");
  EXPECT_FALSE(s.tables.contains("session"));
  EXPECT_EQ(state_to_json(s), json::parse(R"({"t":{"r":{"f":1}},"session":{"k":"v"}})"));
  EXPECT_THROW(state_from_json(json::parse(R"({"t":{"r":3}})")), Error);
  EXPECT_THROW(state_from_json(json::parse(R"({"t":{"":{}}})")), Error);
  EXPECT_THROW(state_from_json(json::parse("[]")), Error);
}

TEST(SessionCheck, EmptyExpectedAlwaysPasses) {
  EXPECT_TRUE(session_superset_check(json::object(), json::object()).passed);
  EXPECT_TRUE(session_superset_check(json::object(), json{{"x", 1}}).passed);
}

TEST(SessionCheck, CaseInsensitiveSuperset) {
  json expected = {{"confirmation_number", "6VORJU"}, {"last_name", "thompson"}};
  json actual = {{"confirmation_number", "6vorju"}, {"last_name", "Thompson"}, {"extra", true}};
  EXPECT_TRUE(session_superset_check(expected, actual).passed);
}

TEST(SessionCheck, ValueMismatchAndMissingKey) {
  auto c = session_superset_check(json{{"last_name", "thompson"}}, json{{"last_name", "thomson"}});
  EXPECT_FALSE(c.passed);
  ASSERT_EQ(c.mismatches.size(), 1u);
  EXPECT_EQ(c.mismatches[0].key, "last_name");
  ASSERT_TRUE(c.mismatches[0].actual);
  EXPECT_EQ(*c.mismatches[0].actual, "thomson");

  auto m = session_superset_check(json{{"a", 1}}, json::object());
  ASSERT_EQ(m.mismatches.size(), 1u);
  EXPECT_FALSE(m.mismatches[0].actual);
}

TEST(SessionCheck, KeysAreCaseSensitive) {
  EXPECT_FALSE(session_superset_check(json{{"Last_Name", "x"}}, json{{"last_name", "x"}}).passed);
}

TEST(ParseTools, RejectsBadSchemas) {
  EXPECT_THROW(parse_tools(json::parse(R"([{"name":"a","required_params":["x","x"]}])")), Error);
  EXPECT_THROW(parse_tools(json::parse(R"([{"name":"a","effect":"maybe"}])")), Error);
  EXPECT_THROW(parse_tools(json::parse(R"([{"name":"a"},{"name":"a"}])")), Error);
  EXPECT_THROW(parse_tools(json::parse(R"([{"name":"a","ops":[{"op":"set"}]}])")), Error);
  EXPECT_THROW(parse_tools(json::parse(R"([{"required_params":[]}])")), Error);
  EXPECT_NO_THROW(parse_tools(json::parse(R"({"tools":[{"name":"a","required_params":[{"name":"x","type":"integer"}]}]})")));
}

TEST(ExecuteToolCall, ReadLeavesStateUnchanged) {
  auto s = airline_initial();
  auto r = execute_tool_call(s, make_call("get_flight_status", {{"flight_number", "SK530"}, {"flight_date", "2026-06-18"}}),
                             airline_catalog());
  EXPECT_EQ(db_hash(r.state), db_hash(s));
  EXPECT_TRUE(r.response["success"].get<bool>());
  EXPECT_EQ(r.response["data"]["gate"], "54B");
}

TEST(ExecuteToolCall, MissingRequiredParam) {
  auto s = airline_initial();
  auto r = execute_tool_call(s, make_call("rebook_flight", {{"confirmation_number", "6VORJU"}}), airline_catalog());
  EXPECT_FALSE(r.response["success"].get<bool>());
  EXPECT_EQ(r.response["error"]["type"], "missing_required_parameter");
  EXPECT_EQ(db_hash(r.state), db_hash(s));
}

TEST(ExecuteToolCall, UnknownToolAndRecord) {
  auto s = airline_initial();
  auto cat = airline_catalog();
  EXPECT_EQ(execute_tool_call(s, make_call("cancel_everything", json::object()), cat).response["error"]["type"],
            "unknown_tool");
  auto r = execute_tool_call(s, make_call("get_reservation", {{"confirmation_number", "NOPE"}, {"last_name", "x"}}), cat);
  EXPECT_EQ(r.response["error"]["type"], "record_not_found");
  EXPECT_EQ(r.state, s);
}

TEST(ExecuteToolCall, AuthenticationCheckIsCaseInsensitive) {
  auto cat = airline_catalog();
  auto ok = execute_tool_call(airline_initial(),
                              make_call("get_reservation", {{"confirmation_number", "6VORJU"}, {"last_name", "thompson"}}), cat);
  EXPECT_TRUE(ok.response["success"].get<bool>());
  EXPECT_EQ(ok.state.session["last_name"], "thompson");
  auto bad = execute_tool_call(airline_initial(),
                               make_call("get_reservation", {{"confirmation_number", "6VORJU"}, {"last_name", "smith"}}), cat);
  EXPECT_EQ(bad.response["error"]["type"], "authentication_failed");
  EXPECT_TRUE(bad.state.session.empty());
}

TEST(ExecuteToolCall, WriteReportsAffectedRecords) {
  auto r = execute_tool_call(airline_initial(),
                             make_call("assign_seat", {{"confirmation_number", "6VORJU"},
                                                       {"passenger_id", "PAX001"},
                                                       {"journey_id", "FL_SK530_20260618"},
                                                       {"seat_preference", "aisle"}}),
                             airline_catalog());
  ASSERT_TRUE(r.response["success"].get<bool>());
  EXPECT_EQ(r.response["affected"][0]["record_id"], "6VORJU");
  EXPECT_EQ(r.state.tables["reservations"]["6VORJU"]["booking"]["seat"], "30C");
}

TEST(ExecuteToolCall, LenientParameterTypes) {
  auto cat = airline_catalog();
  auto c = make_call("search_rebooking_options",
                     {{"origin", "LAX"}, {"destination", "SFO"}, {"date", "2026-06-18"}, {"passenger_count", "1"}});
  EXPECT_TRUE(tool_call_is_valid(c, cat));
  EXPECT_TRUE(execute_tool_call(airline_initial(), c, cat).response["success"].get<bool>());
  c.parameters["passenger_count"] = "one";
  EXPECT_FALSE(tool_call_is_valid(c, cat));
  EXPECT_EQ(execute_tool_call(airline_initial(), c, cat).response["error"]["type"], "invalid_parameter");
  c.parameters["passenger_count"] = 2.0;
  EXPECT_TRUE(tool_call_is_valid(c, cat));
  c.parameters["passenger_count"] = 2.5;
  EXPECT_FALSE(tool_call_is_valid(c, cat));
}

TEST(CoerceParam, Types) {
  EXPECT_EQ(*coerce_param(json("true"), "boolean"), json(true));
  EXPECT_EQ(*coerce_param(json(" 42 "), "integer"), json(42));
  EXPECT_EQ(*coerce_param(json("1.5"), "number"), json(1.5));
  EXPECT_FALSE(coerce_param(json(3), "string"));
  EXPECT_FALSE(coerce_param(json("x"), "array"));
  EXPECT_TRUE(coerce_param(json::array(), "array"));
  EXPECT_TRUE(coerce_param(json(nullptr), "any"));
}

TEST(Scenario121, ReplayMatchesPostChangeColumn) {
  auto b = fixtures::scenario_121_bundle();
  auto final_state = replay_tool_calls(state_from_json(b.initial_db), b.tool_sequence, parse_tools(b.tools)).state;
  const auto& rec = final_state.tables["reservations"]["6VORJU"];
  EXPECT_EQ(rec["booking"]["journey_id"], "FL_SK130_20260618");
  EXPECT_EQ(rec["booking"]["flight_number"], "SK130");
  EXPECT_EQ(rec["booking"]["departure_time"], "13:00");
  EXPECT_EQ(rec["booking"]["seat"], "21A");
  EXPECT_EQ(rec["status"], "changed");
  EXPECT_EQ(rec["same_day_change_fee"], 75);
  EXPECT_EQ(rec["booking"]["date"], "2026-06-18");
  EXPECT_EQ(rec["booking"]["fare_paid"], 289.0);
  EXPECT_EQ(rec["passenger"]["last_name"], "Thompson");
  EXPECT_EQ(final_state.session["confirmation_number"], "6VORJU");
  EXPECT_EQ(db_hash(final_state), db_hash(state_from_json(b.expected_db)));
}

TEST(DiffStates, IdenticalIsEmpty) {
  auto s = airline_initial();
  EXPECT_TRUE(diff_states(s, s).empty());
}

TEST(DiffStates, SeatAndDepartureGiveTwoFieldChanges) {
  auto before = airline_initial();
  auto after = before;
  after.tables["reservations"]["6VORJU"]["booking"]["seat"] = "21A";
  after.tables["reservations"]["6VORJU"]["booking"]["departure_time"] = "13:00";
  auto d = diff_states(before, after);
  EXPECT_EQ(d.field_change_count(), 2u);
  ASSERT_EQ(d.tables_modified.size(), 1u);
  const auto& changes = d.tables_modified[0].records_modified[0].field_changes;
  EXPECT_EQ(changes[0].field(), "booking.departure_time");
  EXPECT_EQ(*changes[0].expected, "17:30");
  EXPECT_EQ(*changes[0].actual, "13:00");
  EXPECT_EQ(changes[1].field(), "booking.seat");
  EXPECT_EQ(*changes[1].expected, nullptr);
  auto j = to_json(d);
  EXPECT_EQ(j["tables_modified"][0]["records_modified"][0]["field_changes"].size(), 2u);
}

TEST(DiffStates, TablesAndRecordsAddedRemoved) {
  ScenarioState a, b;
  a.tables = json::parse(R"({"t1":{"r1":{"x":1},"r2":{}},"gone":{}})");
  b.tables = json::parse(R"({"t1":{"r1":{"x":1,"y":2},"r3":{}},"new":{}})");
  auto d = diff_states(a, b);
  EXPECT_EQ(d.tables_added, std::vector<std::string>{"new"});
  EXPECT_EQ(d.tables_removed, std::vector<std::string>{"gone"});
  ASSERT_EQ(d.tables_modified.size(), 1u);
  EXPECT_EQ(d.tables_modified[0].records_added, std::vector<std::string>{"r3"});
  EXPECT_EQ(d.tables_modified[0].records_removed, std::vector<std::string>{"r2"});
  ASSERT_EQ(d.tables_modified[0].records_modified.size(), 1u);
  const auto& fc = d.tables_modified[0].records_modified[0].field_changes;
  ASSERT_EQ(fc.size(), 1u);
  EXPECT_FALSE(fc[0].expected);
  EXPECT_EQ(*fc[0].actual, 2);
}

TEST(Properties, HashEqualityIffEmptyDiffAndReconstruction) {
  std::mt19937_64 rng(20260618);
  int equal_pairs = 0;
  for (int i = 0; i < 500; ++i) {
    auto a = random_state(rng);
    auto b = a;
    if (i % 5 != 0) {
      for (int m = 0, n = 1 + static_cast<int>(rng() % 3); m < n; ++m) mutate(b, rng);
    }
    b.session = random_value(rng, 0).is_null() ? json::object() : json{{"s", static_cast<int>(rng() % 3)}};
    auto d = diff_states(a, b);
    const bool same_hash = db_hash(a) == db_hash(b);
    EXPECT_EQ(same_hash, d.empty()) << i;
    equal_pairs += same_hash;
    auto rebuilt = apply_diff(a, d, b);
    EXPECT_EQ(canonical_serialize(rebuilt), canonical_serialize(b)) << i;
  }
  EXPECT_GE(equal_pairs, 100);
}

TEST(Properties, ExecutorIsPure) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto b = fixtures::generic_bundle("g", seed, static_cast<int>(seed % 4));
    auto cat = parse_tools(b.tools);
    auto init = state_from_json(b.initial_db);
    auto first = replay_tool_calls(init, b.tool_sequence, cat);
    auto second = replay_tool_calls(init, b.tool_sequence, cat);
    EXPECT_EQ(db_hash(first.state), db_hash(second.state));
    EXPECT_EQ(first.response, second.response);
    EXPECT_EQ(init, state_from_json(b.initial_db));
  }
}

TEST(Properties, MutationAlwaysChangesHash) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto b = fixtures::generic_bundle("g", seed, 1 + static_cast<int>(seed % 3));
    auto cat = parse_tools(b.tools);
    auto mutated = replay_tool_calls(state_from_json(b.initial_db), fixtures::mutate_one_parameter(b.tool_sequence), cat);
    auto d = diff_states(state_from_json(b.expected_db), mutated.state);
    EXPECT_FALSE(d.empty()) << seed;
    EXPECT_NE(db_hash(mutated.state), db_hash(state_from_json(b.expected_db))) << seed;
  }
}
