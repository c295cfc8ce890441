#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>

#include "eva/fixtures.hpp"
#include "eva/metrics.hpp"
#include "support/log_builder.hpp"

using namespace eva;

namespace {

AudioSpan us(double a, double b) { return {Speaker::user, a, b}; }
AudioSpan as(double a, double b) { return {Speaker::assistant, a, b}; }

Turn turn(int index, std::vector<AudioSpan> u, std::vector<AudioSpan> a, bool tool = false) {
  Turn t;
  t.index = index;
  t.user_spans = std::move(u);
  t.assistant_spans = std::move(a);
  t.has_tool_call = tool;
  return t;
}

std::vector<Turn> with_greeting(std::vector<Turn> rest) {
  rest.insert(rest.begin(), turn(0, {}, {as(0, 100)}));
  return rest;
}

// Recursive edit distance over pre-split words.
std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    return memo[key] = best;
  };
  return go(0, 0);
}

}  // namespace

TEST(TaskCompletion, IdenticalStatesPass) {
  auto s = state_from_json(fixtures::scenario_121_bundle().expected_db);
  auto m = task_completion(s, s);
  EXPECT_EQ(m.score, 1.0);
  EXPECT_TRUE(*m.passed);
  EXPECT_EQ(*m.pass_threshold, 1.0);
}

TEST(TaskCompletion, OneFieldDifference) {
  auto e = state_from_json(fixtures::scenario_121_bundle().expected_db);
  auto a = e;
  a.tables["reservations"]["6VORJU"]["booking"]["seat"] = "21B";
  auto m = task_completion(e, a);
  EXPECT_EQ(m.score, 0.0);
  EXPECT_FALSE(*m.passed);
  EXPECT_EQ(m.details["reason"], "state_mismatch");
  EXPECT_EQ(m.details["diff"]["tables_modified"][0]["records_modified"][0]["field_changes"].size(), 1u);
}

TEST(TaskCompletion, SessionShortCircuits) {
  auto e = state_from_json(fixtures::scenario_121_bundle().expected_db);
  auto a = e;
  a.session = json::object();
  auto m = task_completion(e, a);
  EXPECT_EQ(m.score, 0.0);
  EXPECT_EQ(m.details["reason"], "session_mismatch");
  EXPECT_FALSE(m.details.contains("diff"));
}

TEST(TaskCompletion, Scenario121Replay) {
  auto b = fixtures::scenario_121_bundle();
  auto final_state = replay_tool_calls(state_from_json(b.initial_db), b.tool_sequence, parse_tools(b.tools)).state;
  EXPECT_EQ(task_completion(state_from_json(b.expected_db), final_state).score, 1.0);
  auto mutated = replay_tool_calls(state_from_json(b.initial_db), fixtures::mutate_one_parameter(b.tool_sequence),
                                   parse_tools(b.tools)).state;
  EXPECT_EQ(task_completion(state_from_json(b.expected_db), mutated).score, 0.0);
}

TEST(AuthenticationSuccess, Diagnostic) {
  auto m = authentication_success(json{{"last_name", "thompson"}}, json{{"last_name", "Thompson"}});
  EXPECT_EQ(m.score, 1.0);
  EXPECT_TRUE(m.diagnostic);
  EXPECT_FALSE(m.passed);
  EXPECT_EQ(authentication_success(json{{"last_name", "thompson"}}, json{{"last_name", "thomson"}}).score, 0.0);
}

TEST(ResponseLatency, SingleTurn) {
  auto st = response_latency_stats(with_greeting({turn(1, {us(1000, 2000)}, {as(3500, 4000)})}));
  EXPECT_EQ(*st.overall_s, 1.5);
  EXPECT_FALSE(st.with_tools_s);
  EXPECT_EQ(*st.without_tools_s, 1.5);
}

TEST(ResponseLatency, SplitByTool) {
  auto st = response_latency_stats(with_greeting({turn(1, {us(1000, 2000)}, {as(3000, 4000)}, true),
                                                  turn(2, {us(5000, 6000)}, {as(9000, 9500)})}));
  EXPECT_EQ(*st.with_tools_s, 1.0);
  EXPECT_EQ(*st.without_tools_s, 3.0);
  EXPECT_EQ(*st.overall_s, 2.0);
}

TEST(ResponseLatency, NegativeRetainedAndUnansweredSkipped) {
  auto st = response_latency_stats(with_greeting({turn(1, {us(1000, 2000)}, {as(1800, 4000)}),
                                                  turn(2, {us(5000, 6000)}, {})}));
  EXPECT_DOUBLE_EQ(*st.overall_s, -0.2);
  EXPECT_FALSE(st.turns[1].latency_s);
  EXPECT_EQ(response_latency_outcome(with_greeting({})).score, 0.0);
}

TEST(ResponseLatency, MatchesRecomputationOnFixtures) {
  std::mt19937_64 rng(5);
  std::vector<Turn> turns{turn(0, {}, {as(0, 100)})};
  double sum = 0;
  for (int i = 1; i <= 50; ++i) {
    const double base = i * 10000.0;
    const double lat = static_cast<double>(rng() % 4000);
    turns.push_back(turn(i, {us(base, base + 500)}, {as(base + 500 + lat, base + 9000)}));
    sum += lat / 1000.0;
  }
  EXPECT_NEAR(*response_latency_stats(turns).overall_s, sum / 50, 1e-12);
}

TEST(Buckets, Examples) {
  auto all_on_time = bucket_turns(with_greeting({turn(1, {us(0, 1000)}, {as(2000, 3000)}),
                                                 turn(2, {us(5000, 6000)}, {as(7000, 8000)})}));
  EXPECT_EQ(all_on_time.on_time, 1.0);
  auto tool = bucket_turns(with_greeting({turn(1, {us(0, 1000)}, {as(6000, 7000)}, true)}));
  EXPECT_EQ(tool.on_time, 1.0);
  auto plain = bucket_turns(with_greeting({turn(1, {us(0, 1000)}, {as(6000, 7000)})}));
  EXPECT_EQ(plain.late, 1.0);
  EXPECT_EQ(bucket_of(199.9, false, {}), Bucket::early);
  EXPECT_EQ(bucket_of(200, false, {}), Bucket::on_time);
  EXPECT_EQ(bucket_of(4000, false, {}), Bucket::late);
  EXPECT_EQ(bucket_of(std::nullopt, false, {}), Bucket::late);
  EXPECT_THROW(bucket_turns(with_greeting({})), Error);
}

TEST(Buckets, RatesPartition) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<Turn> turns{turn(0, {}, {as(0, 100)})};
    const int n = 1 + static_cast<int>(rng() % 7);
    for (int i = 1; i <= n; ++i) {
      const double base = i * 20000.0;
      const double lat = static_cast<double>(rng() % 9000) - 1000;
      turns.push_back(turn(i, {us(base, base + 500)}, {as(base + 500 + lat, base + 12000)}, rng() & 1));
    }
    auto r = bucket_turns(turns);
    EXPECT_EQ(r.early * r.turns + r.on_time * r.turns + r.late * r.turns, static_cast<double>(n));
    EXPECT_NEAR(r.early + r.on_time + r.late, 1.0, 1e-15);
  }
}

TEST(ConversationCompletion, EndCallAndTimeout) {
  evatest::LogBuilder b;
  b.start(0, "assistant").assistant_speech(1, "hi").end(500, "assistant");
  b.start(1000, "user").user_speech(1001, "hello").end(2000, "user");
  b.start(2500, "assistant").assistant_speech(2501, "yes").end(3000, "assistant");
  b.start(4000, "user").user_speech(4001, "are you there").end(5000, "user");
  auto silent = b.reconcile();
  EXPECT_EQ(end_cause(silent), EndCause::agent_timeout);
  EXPECT_EQ(conversation_completion(silent).score, 0.0);
  b.end_call(40000);
  auto ended = b.reconcile();
  EXPECT_EQ(conversation_completion(ended).score, 1.0);
}

TEST(ConversationCompletion, AgreesWithFixtureLabels) {
  int timeouts = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    auto script = fixtures::random_script(seed);
    auto g = fixtures::generate_conversation(script);
    auto conv = reconcile_logs(g.logs, script.pipeline);
    EXPECT_EQ(std::string(to_string(end_cause(conv))), g.ground_truth["end_cause"].get<std::string>()) << seed;
    timeouts += end_cause(conv) == EndCause::agent_timeout;
  }
  EXPECT_GT(timeouts, 0);
}

TEST(WordErrorRate, Examples) {
  EXPECT_EQ(word_error_rate("the cat sat", "the cat sat"), 0.0);
  EXPECT_DOUBLE_EQ(word_error_rate("the cat sat", "the cat"), 1.0 / 3.0);
  EXPECT_EQ(word_error_rate("Hello, World!", "hello world"), 0.0);
  EXPECT_EQ(word_error_rate("a b", ""), 1.0);
  EXPECT_EQ(word_error_rate("a", "x y z"), 3.0);
  EXPECT_THROW(word_error_rate(" ... ", "x"), Error);
}

TEST(WordErrorRate, MatchesRecursiveOracle) {
  std::mt19937_64 rng(1234);
  const char* vocab[] = {"a", "b", "c", "d", "e"};
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<std::string> ref, hyp;
    for (int i = 0; i < 20; ++i) ref.push_back(vocab[rng() % 5]);
    for (int i = 0, n = static_cast<int>(rng() % 25); i < n; ++i) hyp.push_back(vocab[rng() % 5]);
    const double expected = static_cast<double>(edit_distance(ref, hyp)) / 20.0;
    EXPECT_DOUBLE_EQ(word_error_rate(text::join(ref), text::join(hyp)), expected);
  }
}

TEST(WordErrorRate, NormalizationIdempotent) {
  const std::string s = "Well, I NEED: the 6VORJU booking!";
  EXPECT_EQ(word_error_rate(s, text::join(wer_tokens(s))), 0.0);
  EXPECT_EQ(wer_tokens(text::join(wer_tokens(s))), wer_tokens(s));
}

TEST(SttWer, SkipsTurnsWithoutReferenceAndStripsTags) {
  auto turns = with_greeting({turn(1, {us(0, 1)}, {as(2, 3)}), turn(2, {us(4, 5)}, {as(6, 7)})});
  turns[1].intended_user = "book a flight";
  turns[1].transcribed_user = "[user interrupts] book the flight";
  auto m = stt_wer(turns);
  EXPECT_DOUBLE_EQ(m.score, 1.0 / 3.0);
  EXPECT_EQ(m.details["rated_turns"], 1);
  EXPECT_TRUE(m.diagnostic);
}

TEST(ToolCallValidity, Fractions) {
  auto cat = parse_tools(fixtures::scenario_121_bundle().tools);
  EXPECT_EQ(tool_call_validity({}, cat), 1.0);
  auto calls = fixtures::scenario_121_bundle().tool_sequence;
  calls.resize(4);
  EXPECT_EQ(tool_call_validity(calls, cat), 1.0);
  calls[3].parameters["passenger_count"] = "several";
  EXPECT_EQ(tool_call_validity(calls, cat), 0.75);
  calls[2].tool_name = "nope";
  auto m = tool_call_validity_outcome(calls, cat);
  EXPECT_EQ(m.score, 0.5);
  EXPECT_EQ(m.details["invalid_call_ids"], json::array({"c3", "c4"}));
}

TEST(ToolCallValidity, MatchesPerCallOracle) {
  auto cat = parse_tools(fixtures::scenario_121_bundle().tools);
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    auto calls = fixtures::scenario_121_bundle().tool_sequence;
    int valid = 0;
    for (auto& c : calls) {
      bool ok = true;
      switch (rng() % 4) {
        case 0: c.parameters.erase(c.parameters.begin().key()); ok = false; break;
        case 1: c.parameters[c.parameters.begin().key()] = json::array(); ok = false; break;
        case 2: c.parameters["unrelated_extra"] = 5; break;
        default: break;
      }
      valid += ok;
    }
    EXPECT_DOUBLE_EQ(tool_call_validity(calls, cat), valid / 6.0);
  }
}
