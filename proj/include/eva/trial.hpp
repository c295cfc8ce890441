#pragma once

// Scores one recorded conversation against its scenario bundle.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "eva/aggregate.hpp"
#include "eva/config.hpp"
#include "eva/error.hpp"
#include "eva/judge.hpp"
#include "eva/metrics.hpp"
#include "eva/reconcile.hpp"
#include "eva/scenario_store.hpp"
#include "eva/turn_taking.hpp"

namespace eva {

inline constexpr int kTrialReportVersion = 1;

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const std::filesystem::path& p) {
  auto bytes = read_file(p);
  try {
    return json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::malformed_document, p.string() + ": " + e.what());
  }
}

/// Conversation directory layout: audit_log.json, elevenlabs_events.jsonl,
/// optionally framework_logs.jsonl (absent for s2s captures).
inline RawLogs load_raw_logs(const std::filesystem::path& dir) {
  RawLogs logs;
  logs.audit = read_file(dir / "audit_log.json");
  logs.audio_bus = read_file(dir / "elevenlabs_events.jsonl");
  if (std::filesystem::exists(dir / "framework_logs.jsonl")) logs.framework = read_file(dir / "framework_logs.jsonl");
  return logs;
}

struct ScenarioFiles {
  std::string scenario_id;
  std::string domain = "default";
  ScenarioState initial;
  ScenarioState expected;
  ToolCatalog catalog;
  json judge_plan = nullptr;
};

inline ScenarioFiles load_scenario(const std::filesystem::path& dir) {
  ScenarioFiles s;
  s.initial = state_from_json(read_json_file(dir / "scenario_db.json"));
  s.expected = state_from_json(read_json_file(dir / "expected_scenario_db.json"));
  s.catalog = parse_tools(read_json_file(dir / "tools.json"));
  if (std::filesystem::exists(dir / "goal.json")) {
    auto goal = read_json_file(dir / "goal.json");
    s.scenario_id = goal.value("scenario_id", std::string{});
    s.domain = goal.value("domain", s.domain);
  }
  if (s.scenario_id.empty()) s.scenario_id = dir.filename().string();
  if (std::filesystem::exists(dir / "judge_plan.json")) s.judge_plan = read_json_file(dir / "judge_plan.json");
  return s;
}

struct TrialMeta {
  std::optional<std::string> system;
  std::optional<PipelineType> pipeline;
  std::optional<std::string> scenario_id;
  std::optional<int> trial_index;
};

inline TrialMeta load_trial_meta(const std::filesystem::path& dir) {
  TrialMeta m;
  if (!std::filesystem::exists(dir / "trial.json")) return m;
  auto j = read_json_file(dir / "trial.json");
  if (j.contains("system")) m.system = j["system"].get<std::string>();
  if (j.contains("pipeline")) {
    m.pipeline = parse_pipeline(j["pipeline"].get<std::string>());
    if (!m.pipeline) throw Error(ErrorKind::unsupported_value, "trial.json: unknown pipeline");
  }
  if (j.contains("scenario_id")) m.scenario_id = j["scenario_id"].get<std::string>();
  if (j.contains("trial_index")) m.trial_index = j["trial_index"].get<int>();
  return m;
}

struct TrialOutcome {
  TrialResult result;
  ValidationDecision decision;
  json report;
  int exit_code() const { return decision.accept ? 0 : 2; }
};

struct TrialOverrides {
  std::optional<std::string> system;
  std::optional<PipelineType> pipeline;
  std::optional<int> trial_index;
};

/// Reconciles the logs, replays tool calls (unless the capture ships its own
/// final_scenario_db.json), runs every metric and both gates.
inline TrialOutcome score_trial(const std::filesystem::path& conversation_dir, const ScenarioFiles& scenario,
                                const RunConfig& cfg, JudgePort& judge, const TrialOverrides& over = {}) {
  const auto meta = load_trial_meta(conversation_dir);
  const PipelineType pipeline = over.pipeline ? *over.pipeline : meta.pipeline.value_or(cfg.pipeline);
  auto conv = reconcile_logs(load_raw_logs(conversation_dir), pipeline);

  ScenarioState final_state;
  std::string final_source;
  if (std::filesystem::exists(conversation_dir / "final_scenario_db.json")) {
    final_state = state_from_json(read_json_file(conversation_dir / "final_scenario_db.json"));
    final_source = "captured";
  } else {
    final_state = replay_tool_calls(scenario.initial, conv.tool_calls, scenario.catalog).state;
    final_source = "replayed";
  }

  json metrics = json::object();
  ScoreMap scores;
  auto record = [&](const MetricOutcome& m) {
    metrics[m.metric] = to_json(m);
    scores[m.metric] = m.score;
  };

  record(task_completion(scenario.expected, final_state));
  record(authentication_success(scenario.expected.session, final_state.session));
  record(tool_call_validity_outcome(conv.tool_calls, scenario.catalog));
  record(response_latency_outcome(conv.turns));
  record(conversation_completion(conv, cfg.inactivity_timeout_ms));
  if (pipeline != PipelineType::s2s) record(stt_wer(conv.turns));
  if (conv.turns.size() > 1) {
    auto rates = bucket_turns(conv.turns, cfg.buckets);
    metrics["latency_buckets"] = {{"early", rates.early}, {"on_time", rates.on_time}, {"late", rates.late},
                                  {"turns", rates.turns}};
  }
  try {
    record(score_conversation(conv.turns, cfg.turn_taking));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::no_scorable_turns) throw;
    MetricOutcome m = gated_outcome("turn_taking", 0.0, cfg.turn_taking.pass_threshold, Comparator::at_least,
                                    {{"note", "no user turns"}});
    record(m);
  }

  json plan = scenario.judge_plan;
  if (std::filesystem::exists(conversation_dir / "judge_plan.json"))
    plan = read_json_file(conversation_dir / "judge_plan.json");
  const json bundle = make_bundle(conv, plan);
  record(faithfulness_score(judge.judge(metric::faithfulness, pipeline, bundle), cfg.gates.faithfulness));
  record(conversation_progression_score(judge.judge(metric::conversation_progression, pipeline, bundle),
                                        cfg.gates.conversation_progression));
  record(conciseness_score(judge.judge(metric::conciseness, pipeline, bundle), cfg.gates.conciseness));
  record(speech_fidelity_score(judge.judge(metric::speech_fidelity, pipeline, bundle), pipeline,
                               cfg.gates.speech_fidelity));

  const bool valid_end = end_cause(conv, cfg.inactivity_timeout_ms) == EndCause::user_end_call;
  json behavioral = nullptr, user_speech = nullptr;
  if (valid_end) {
    behavioral = judge.judge(metric::user_behavioral_fidelity, pipeline, bundle);
    user_speech = judge.judge(metric::user_speech_fidelity, pipeline, bundle);
  }

  TrialOutcome out;
  out.decision = validation_decision(valid_end, behavioral, user_speech);
  auto& r = out.result;
  r.system = over.system ? *over.system : meta.system.value_or(cfg.system);
  r.domain = scenario.domain;
  r.scenario_id = meta.scenario_id.value_or(scenario.scenario_id);
  r.trial_index = over.trial_index ? *over.trial_index : meta.trial_index.value_or(0);
  r.scores = scores;
  r.eva_a = eva_gate(scores, EvaDimension::accuracy, cfg.gates);
  r.eva_x = eva_gate(scores, EvaDimension::experience, cfg.gates);

  json rec = to_json(conv.diagnostics);
  out.report = to_json(r);
  out.report["report_version"] = kTrialReportVersion;
  out.report["pipeline"] = std::string(to_string(pipeline));
  out.report["metrics"] = metrics;
  out.report["validation"] = to_json(out.decision);
  out.report["final_state"] = {{"source", final_source}, {"db_hash", to_hex(db_hash(final_state))},
                               {"expected_db_hash", to_hex(db_hash(scenario.expected))}};
  out.report["reconciliation"] = {{"turns", conv.turns.size()},
                                  {"assistant_interrupted_turns", conv.assistant_interrupted_turns()},
                                  {"user_interrupted_turns", conv.user_interrupted_turns()},
                                  {"diagnostics", rec}};
  return out;
}

}  // namespace eva
