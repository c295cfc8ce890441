#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "eva/judge.hpp"
#include "support/log_builder.hpp"

using namespace eva;

namespace {

json dims(std::initializer_list<std::pair<const char*, int>> ratings, bool flag_below_three = true) {
  json d = json::object();
  for (const auto& [name, r] : ratings) d[name] = {{"rating", r}, {"flagged", flag_below_three && r < 3}};
  return {{"dimensions", d}};
}

json faith(int a, int b, int c, int d, int e) {
  return dims({{"fabricating_tool_parameters", a},
               {"misrepresenting_tool_result", b},
               {"violating_policies", c},
               {"failing_to_disambiguate", d},
               {"hallucination", e}});
}

json prog(int a, int b, int c, int d) {
  return dims({{"unnecessary_tool_calls", a}, {"information_loss", b}, {"redundant_statements", c},
               {"question_quality", d}});
}

json sf_turns(int good, int bad) {
  json t = json::array();
  for (int i = 0; i < good + bad; ++i) t.push_back({{"turn_id", i}, {"rating", i < good ? 1 : 0}});
  return {{"turns", t}};
}

ReconciledConversation small_conversation() {
  evatest::LogBuilder b;
  b.start(0, "assistant").assistant_speech(1, "hi").end(500, "assistant");
  b.start(1000, "user").user_speech(1001, "hello").end(2000, "user");
  b.start(2500, "assistant").assistant_speech(2501, "yes").end(3000, "assistant");
  b.start(4000, "user").user_speech(4001, "bye").end(5000, "user");
  b.start(5500, "assistant").assistant_speech(5501, "bye").end(6000, "assistant");
  b.end_call(6500);
  return b.reconcile();
}

}  // namespace

TEST(NormalizeRating, Table) {
  EXPECT_EQ(normalize_rating(1), 0.0);
  EXPECT_EQ(normalize_rating(2), 0.5);
  EXPECT_EQ(normalize_rating(3), 1.0);
  EXPECT_THROW(normalize_rating(0), Error);
  EXPECT_THROW(normalize_rating(4), Error);
}

TEST(Faithfulness, MinRule) {
  auto clean = faithfulness_score(faith(3, 3, 3, 3, 3));
  EXPECT_EQ(clean.score, 1.0);
  EXPECT_TRUE(*clean.passed);
  auto two = faithfulness_score(faith(3, 3, 2, 3, 3));
  EXPECT_EQ(two.score, 0.5);
  EXPECT_TRUE(*two.passed);
  auto one = faithfulness_score(faith(3, 3, 3, 3, 1));
  EXPECT_EQ(one.score, 0.0);
  EXPECT_FALSE(*one.passed);
  EXPECT_TRUE(one.details["dimensions"]["hallucination"]["flagged"].get<bool>());
}

TEST(Faithfulness, MissingDimension) {
  auto v = faith(3, 3, 3, 3, 3);
  v["dimensions"].erase("hallucination");
  try {
    faithfulness_score(v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_dimension);
  }
  EXPECT_THROW(faithfulness_score(json::object()), Error);
  EXPECT_THROW(faithfulness_score(faith(3, 3, 3, 3, 5)), Error);
}

TEST(Faithfulness, OverallNeverAboveAnyDimension) {
  for (int code = 0; code < 243; ++code) {
    int r[5], c = code;
    for (int& x : r) {
      x = 1 + c % 3;
      c /= 3;
    }
    auto m = faithfulness_score(faith(r[0], r[1], r[2], r[3], r[4]));
    for (int x : r) EXPECT_LE(m.score, normalize_rating(x));
    EXPECT_EQ(m.score, normalize_rating(*std::min_element(r, r + 5)));
  }
}

TEST(Progression, CountRule) {
  EXPECT_EQ(conversation_progression_score(prog(3, 3, 3, 3)).score, 1.0);
  EXPECT_EQ(conversation_progression_score(prog(2, 3, 3, 3)).score, 0.5);
  EXPECT_EQ(conversation_progression_score(prog(2, 2, 3, 3)).score, 0.5);
  EXPECT_EQ(conversation_progression_score(prog(2, 2, 2, 3)).score, 0.0);
  EXPECT_EQ(conversation_progression_score(prog(1, 3, 3, 3)).score, 0.0);
  EXPECT_EQ(conversation_progression_score(prog(2, 2, 2, 3)).details["flagged_dimensions"], 3);
}

TEST(Progression, FlagWithoutLowerRatingStillCounts) {
  auto v = prog(3, 3, 3, 3);
  v["dimensions"]["information_loss"]["flagged"] = true;
  EXPECT_EQ(conversation_progression_score(v).score, 0.5);
}

TEST(Progression, HandTableExhaustive) {
  for (int code = 0; code < 81; ++code) {
    int r[4], c = code;
    for (int& x : r) {
      x = 1 + c % 3;
      c /= 3;
    }
    const int flagged = static_cast<int>(std::count_if(r, r + 4, [](int x) { return x < 3; }));
    const bool any_one = std::find(r, r + 4, 1) != r + 4;
    const double expected = flagged == 0 ? 1.0 : (!any_one && flagged <= 2) ? 0.5 : 0.0;
    const double got = conversation_progression_score(prog(r[0], r[1], r[2], r[3])).score;
    EXPECT_EQ(got, expected) << r[0] << r[1] << r[2] << r[3];
    EXPECT_EQ(got == 1.0, flagged == 0);
  }
}

TEST(Conciseness, Means) {
  json all3 = json::array({{{"turn_id", 0}, {"rating", 3}}, {{"turn_id", 1}, {"rating", 3}}});
  EXPECT_EQ(conciseness_score(all3).score, 1.0);
  json mixed = json::array({{{"turn_id", 0}, {"rating", 3}}, {{"turn_id", 1}, {"rating", 1}},
                            {{"turn_id", 2}, {"rating", nullptr}}});
  auto m = conciseness_score(mixed);
  EXPECT_EQ(m.score, 0.5);
  EXPECT_EQ(m.details["rated_turns"], 2);
}

TEST(Conciseness, TenTurnHandMean) {
  const int ratings[10] = {3, 2, 2, 1, 3, 3, 2, 3, 1, 3};
  json v = json::array();
  for (int i = 0; i < 10; ++i) {
    json t = {{"turn_id", i}, {"rating", ratings[i]}, {"failure_modes", json::array()}};
    if (ratings[i] < 3) t["failure_modes"].push_back("verbosity");
    if (ratings[i] == 1) t["failure_modes"].push_back("over_explanation");
    v.push_back(t);
  }
  // (1 + .5 + .5 + 0 + 1 + 1 + .5 + 1 + 0 + 1) / 10
  auto m = conciseness_score(v);
  EXPECT_DOUBLE_EQ(m.score, 0.65);
  EXPECT_DOUBLE_EQ(m.details["failure_mode_rates"]["verbosity"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(m.details["failure_mode_rates"]["over_explanation"].get<double>(), 0.2);
  std::mt19937_64 rng(1);
  std::shuffle(v.begin(), v.end(), rng);
  EXPECT_DOUBLE_EQ(conciseness_score(v).score, 0.65);
}

TEST(Conciseness, NoRatedTurns) {
  try {
    conciseness_score(json::array({{{"turn_id", 0}, {"rating", nullptr}}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::no_rated_turns);
  }
}

TEST(SpeechFidelity, Boundary) {
  auto pass = speech_fidelity_score(sf_turns(19, 1), PipelineType::cascade);
  EXPECT_EQ(pass.score, 0.95);
  EXPECT_TRUE(*pass.passed);
  auto fail = speech_fidelity_score(sf_turns(18, 1), PipelineType::cascade);
  EXPECT_FALSE(*fail.passed);
  EXPECT_EQ(speech_fidelity_score(sf_turns(5, 0), PipelineType::hybrid).score, 1.0);
}

TEST(SpeechFidelity, S2sEntityExclusion) {
  json turns = json::array();
  for (int i = 0; i < 10; ++i)
    turns.push_back({{"turn_id", i}, {"rating", i < 5 ? 0 : (i < 9 ? 1 : 0)}, {"has_entities", i >= 5}});
  auto m = speech_fidelity_score(json{{"turns", turns}}, PipelineType::s2s);
  EXPECT_DOUBLE_EQ(m.score, 4.0 / 5.0);
  EXPECT_EQ(m.details["included_turns"], 5);
  EXPECT_EQ(m.details["excluded_turns"], 5);
  // The same verdict on a cascade pipeline counts every turn.
  EXPECT_DOUBLE_EQ(speech_fidelity_score(json{{"turns", turns}}, PipelineType::cascade).score, 4.0 / 10.0);
}

TEST(SpeechFidelity, Errors) {
  json none = {{"turns", json::array({{{"turn_id", 0}, {"rating", 1}, {"has_entities", false}}})}};
  try {
    speech_fidelity_score(none, PipelineType::s2s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::undefined_score);
  }
  EXPECT_THROW(speech_fidelity_score(json{{"turns", json::array({{{"rating", 2}}})}}, PipelineType::cascade), Error);
  EXPECT_THROW(speech_fidelity_score(sf_turns(1, 0), PipelineType::s2s), Error);
}

TEST(Validation, Decisions) {
  json clean_b = {{"rating", 1}, {"corruption_analysis", json::object()}};
  json clean_u = {{"turns", json::array({{{"turn_id", 1}, {"rating", 3}}, {{"turn_id", 2}, {"rating", 2}}})}};
  EXPECT_TRUE(validation_decision(true, clean_b, clean_u).accept);

  json premature = {{"rating", 0},
                    {"corruption_analysis", {{"premature_ending", {{"detected", true}}},
                                             {"extra_modifications", {{"detected", false}}}}}};
  auto d = validation_decision(true, premature, clean_u);
  EXPECT_FALSE(d.accept);
  EXPECT_EQ(d.reasons, std::vector<std::string>{"user_behavioral_fidelity: premature_ending"});

  json bad_u = {{"turns", json::array({{{"turn_id", 1}, {"rating", 3}}, {{"turn_id", 2}, {"rating", 1}}})}};
  auto u = validation_decision(true, clean_b, bad_u);
  EXPECT_FALSE(u.accept);
  EXPECT_EQ(u.reasons, std::vector<std::string>{"user_speech_fidelity: turn 2"});

  auto end = validation_decision(false, nullptr, nullptr);
  EXPECT_FALSE(end.accept);
  EXPECT_FALSE(end.judges_consulted);
  EXPECT_EQ(end.reasons, std::vector<std::string>{"conversation_valid_end"});
  EXPECT_EQ(to_json(end)["decision"], "rerun");
}

TEST(Validation, AcceptOnlyWhenAllGatesPass) {
  json clean_u = {{"turns", json::array({{{"turn_id", 1}, {"rating", 3}}})}};
  json bad_u = {{"turns", json::array({{{"turn_id", 1}, {"rating", 1}}})}};
  for (int valid = 0; valid < 2; ++valid)
    for (int beh = 0; beh < 2; ++beh)
      for (int sp = 0; sp < 2; ++sp) {
        auto d = validation_decision(valid, json{{"rating", beh}}, sp ? clean_u : bad_u);
        EXPECT_EQ(d.accept, valid && beh && sp);
      }
}

TEST(MockJudge, CleanByDefaultAndDeterministic) {
  auto conv = small_conversation();
  auto bundle = make_bundle(conv);
  MockJudge j(7);
  auto f = j.judge(metric::faithfulness, PipelineType::cascade, bundle);
  EXPECT_EQ(faithfulness_score(f).score, 1.0);
  EXPECT_EQ(f, MockJudge(7).judge(metric::faithfulness, PipelineType::cascade, bundle));
  EXPECT_EQ(conversation_progression_score(j.judge(metric::conversation_progression, PipelineType::cascade, bundle)).score, 1.0);
  auto c = j.judge(metric::conciseness, PipelineType::cascade, bundle);
  EXPECT_EQ(c.size(), 3u);
  EXPECT_EQ(conciseness_score(c).score, 1.0);
  EXPECT_EQ(speech_fidelity_score(j.judge(metric::speech_fidelity, PipelineType::s2s, bundle), PipelineType::s2s).score, 1.0);
  auto beh = j.judge(metric::user_behavioral_fidelity, PipelineType::cascade, bundle);
  auto us = j.judge(metric::user_speech_fidelity, PipelineType::cascade, bundle);
  EXPECT_EQ(us["turns"].size(), 2u);
  EXPECT_TRUE(validation_decision(true, beh, us).accept);
  EXPECT_THROW(j.judge("mystery", PipelineType::cascade, bundle), Error);
}

TEST(MockJudge, EchoesPlantedRatings) {
  json plan = {{"faithfulness", {{"violating_policies", 2}, {"hallucination", 2}}},
               {"conversation_progression", {{"information_loss", 2}, {"redundant_statements", 2},
                                             {"question_quality", 2}}},
               {"conciseness", {{"ratings", {{"1", 1}}}}},
               {"speech_fidelity", {{"ratings", {{"2", 0}}}, {"has_entities", {{"0", false}}}}},
               {"user_behavioral_fidelity", {{"detected", {"premature_ending"}}}},
               {"user_speech_fidelity", {{"ratings", {{"1", 1}}}}}};
  auto bundle = make_bundle(small_conversation(), plan);
  MockJudge j;
  auto f = j.judge(metric::faithfulness, PipelineType::cascade, bundle);
  EXPECT_EQ(f["dimensions"]["violating_policies"]["rating"], 2);
  EXPECT_EQ(f["rating"], 2);
  EXPECT_EQ(faithfulness_score(f).score, 0.5);
  EXPECT_EQ(conversation_progression_score(j.judge(metric::conversation_progression, PipelineType::cascade, bundle)).score, 0.0);
  EXPECT_DOUBLE_EQ(conciseness_score(j.judge(metric::conciseness, PipelineType::cascade, bundle)).score, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(speech_fidelity_score(j.judge(metric::speech_fidelity, PipelineType::s2s, bundle), PipelineType::s2s).score, 0.5);
  auto d = validation_decision(true, j.judge(metric::user_behavioral_fidelity, PipelineType::cascade, bundle),
                               j.judge(metric::user_speech_fidelity, PipelineType::cascade, bundle));
  EXPECT_EQ(d.reasons, (std::vector<std::string>{"user_behavioral_fidelity: premature_ending", "user_speech_fidelity: turn 1"}));
}

TEST(ExternalJudge, RoundTripsThroughCommand) {
  ExternalJudge echo("cat");
  auto bundle = make_bundle(small_conversation());
  auto out = echo.judge(metric::conciseness, PipelineType::hybrid, bundle);
  EXPECT_EQ(out["metric"], "conciseness");
  EXPECT_EQ(out["pipeline"], "hybrid");
  EXPECT_EQ(out["bundle"], bundle);
  EXPECT_THROW(ExternalJudge("false").judge(metric::conciseness, PipelineType::cascade, bundle), Error);
  EXPECT_THROW(ExternalJudge("echo not-json").judge(metric::conciseness, PipelineType::cascade, bundle), Error);
}
