#pragma once

// Run configuration: a flat `key = value` document with `#` comments.
// Later sources override earlier ones (file, then --set flags).

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eva/aggregate.hpp"
#include "eva/error.hpp"
#include "eva/log_model.hpp"
#include "eva/metrics.hpp"
#include "eva/text.hpp"
#include "eva/turn_taking.hpp"

namespace eva {

struct RunConfig {
  std::string system = "system";
  PipelineType pipeline = PipelineType::cascade;
  std::string judge = "mock";
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned jobs = 1;
  std::string format = "json";

  GateThresholds gates;
  TurnTakingConfig turn_taking;
  BucketBounds buckets;
  double inactivity_timeout_ms = 30000.0;

  int pass_k = 0;
  int aggregate_bootstrap = 1000;
  double alpha = 0.05;
  std::uint64_t permutations = 10000;
  int delta_bootstrap = 1000;
  int agreement_bootstrap = 10000;
  int stability_draws = 2000;
  std::vector<int> stability_k = {1, 2, 3};
  std::vector<int> sweep_grid = {50, 55, 60, 65, 70, 75, 80, 85, 90, 95};
};

using ConfigEntries = std::map<std::string, std::string>;

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
inline ConfigEntries parse_config_text(std::string_view textv, const std::string& source = "config") {
  ConfigEntries out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= textv.size()) {
    auto nl = textv.find('\n', pos);
    std::string line(textv.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = text::normalize_ws(line);
    if (!line.empty()) {
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorKind::config, source + " line " + std::to_string(line_no) + ": expected key = value");
      auto key = text::normalize_ws(line.substr(0, eq));
      auto value = text::normalize_ws(line.substr(eq + 1));
      if (key.empty()) throw Error(ErrorKind::config, source + " line " + std::to_string(line_no) + ": empty key");
      out[key] = value;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return out;
}

inline ConfigEntries load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  double x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(x))
    throw Error(ErrorKind::config, key + ": '" + v + "' is not a number");
  return x;
}

inline long long to_int(const std::string& key, const std::string& v) {
  long long x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || p != v.data() + v.size()) throw Error(ErrorKind::config, key + ": '" + v + "' is not an integer");
  return x;
}

inline double unit(const std::string& key, const std::string& v) {
  double x = to_double(key, v);
  if (x < 0.0 || x > 1.0) throw Error(ErrorKind::config, key + " must lie in [0, 1]");
  return x;
}

inline std::vector<std::string> list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v + ",") {
    if (c == ',') {
      auto t = text::normalize_ws(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

inline std::vector<int> int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : list(v)) out.push_back(static_cast<int>(to_int(key, s)));
  if (out.empty()) throw Error(ErrorKind::config, key + " needs at least one value");
  return out;
}

// turn_taking.breakpoints.{standard,tool}.{hard_early,sweet_low,sweet_high,hard_late}_ms
inline void breakpoint_field(TurnTakingConfig& tt, const std::string& key, double value) {
  const std::string rest = key.substr(std::string("turn_taking.breakpoints.").size());
  const auto dot = rest.find('.');
  const std::string set = rest.substr(0, dot), field = dot == std::string::npos ? "" : rest.substr(dot + 1);
  LatencyBreakpoints* b = set == "standard" ? &tt.standard : set == "tool" ? &tt.tool : nullptr;
  if (!b) throw Error(ErrorKind::config, "unknown key '" + key + "'");
  if (field == "hard_early_ms") b->hard_early_ms = value;
  else if (field == "sweet_low_ms") b->sweet_low_ms = value;
  else if (field == "sweet_high_ms") b->sweet_high_ms = value;
  else if (field == "hard_late_ms") b->hard_late_ms = value;
  else throw Error(ErrorKind::config, "unknown key '" + key + "'");
}

}  // namespace detail

/// Applies entries on top of `cfg`. Unknown keys are rejected.
inline void apply_config(RunConfig& cfg, const ConfigEntries& entries) {
  using namespace detail;
  for (const auto& [key, v] : entries) {
    if (key == "system") cfg.system = v;
    else if (key == "pipeline") {
      auto p = parse_pipeline(v);
      if (!p) throw Error(ErrorKind::config, "pipeline must be cascade, hybrid or s2s");
      cfg.pipeline = *p;
    } else if (key == "judge") {
      if (v != "mock" && v.rfind("cmd:", 0) != 0) throw Error(ErrorKind::config, "judge must be mock or cmd:<path>");
      cfg.judge = v;
    } else if (key == "seed") {
      auto x = to_int(key, v);
      if (x < 0) throw Error(ErrorKind::config, "seed must be nonnegative");
      cfg.seed = static_cast<std::uint64_t>(x);
      cfg.seed_set = true;
    } else if (key == "jobs") {
      auto x = to_int(key, v);
      if (x < 1) throw Error(ErrorKind::config, "jobs must be at least 1");
      cfg.jobs = static_cast<unsigned>(x);
    } else if (key == "format") {
      if (v != "json" && v != "csv") throw Error(ErrorKind::config, "format must be json or csv");
      cfg.format = v;
    } else if (key == "threshold.task_completion") cfg.gates.task_completion = unit(key, v);
    else if (key == "threshold.faithfulness") cfg.gates.faithfulness = unit(key, v);
    else if (key == "threshold.speech_fidelity") cfg.gates.speech_fidelity = unit(key, v);
    else if (key == "threshold.turn_taking" || key == "turn_taking.pass_threshold")
      cfg.gates.turn_taking = cfg.turn_taking.pass_threshold = unit(key, v);
    else if (key == "threshold.conversation_progression") cfg.gates.conversation_progression = unit(key, v);
    else if (key == "threshold.conciseness") cfg.gates.conciseness = unit(key, v);
    else if (key.rfind("turn_taking.breakpoints.", 0) == 0) breakpoint_field(cfg.turn_taking, key, to_double(key, v));
    else if (key == "turn_taking.m_cap") cfg.turn_taking.interrupt.m_cap = to_double(key, v);
    else if (key == "turn_taking.o_max_ms") cfg.turn_taking.interrupt.o_max_ms = to_double(key, v);
    else if (key == "turn_taking.n_max") cfg.turn_taking.interrupt.n_max = to_double(key, v);
    else if (key == "turn_taking.yield_max_ms") cfg.turn_taking.interrupt.yield_max_ms = to_double(key, v);
    else if (key == "latency.early_ms") cfg.buckets.early_ms = to_double(key, v);
    else if (key == "latency.on_time_ms") cfg.buckets.on_time_upper_ms = to_double(key, v);
    else if (key == "latency.on_time_tool_ms") cfg.buckets.on_time_upper_tool_ms = to_double(key, v);
    else if (key == "completion.inactivity_timeout_ms") cfg.inactivity_timeout_ms = to_double(key, v);
    else if (key == "aggregate.k") cfg.pass_k = static_cast<int>(to_int(key, v));
    else if (key == "aggregate.bootstrap_samples") cfg.aggregate_bootstrap = static_cast<int>(to_int(key, v));
    else if (key == "alpha") {
      cfg.alpha = to_double(key, v);
      if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw Error(ErrorKind::config, "alpha must lie in (0, 1)");
    } else if (key == "compare.permutations") cfg.permutations = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "compare.bootstrap_samples") cfg.delta_bootstrap = static_cast<int>(to_int(key, v));
    else if (key == "agreement.bootstrap_samples") cfg.agreement_bootstrap = static_cast<int>(to_int(key, v));
    else if (key == "stability.draws") cfg.stability_draws = static_cast<int>(to_int(key, v));
    else if (key == "stability.k_grid") cfg.stability_k = int_list(key, v);
    else if (key == "sweep.grid") {
      cfg.sweep_grid = int_list(key, v);
      for (int h : cfg.sweep_grid)
        if (h < 0 || h > 100) throw Error(ErrorKind::config, "sweep.grid values are hundredths in [0, 100]");
    } else {
      throw Error(ErrorKind::config, "unknown key '" + key + "'");
    }
  }
  try {
    cfg.turn_taking.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::config, e.what());
  }
  if (cfg.aggregate_bootstrap < 1 || cfg.delta_bootstrap < 1 || cfg.agreement_bootstrap < 1 ||
      cfg.stability_draws < 1 || cfg.permutations < 1)
    throw Error(ErrorKind::config, "sample counts must be positive");
}

inline json to_json(const RunConfig& c) {
  auto bp = [](const LatencyBreakpoints& b) {
    return json{{"hard_early_ms", b.hard_early_ms}, {"sweet_low_ms", b.sweet_low_ms},
                {"sweet_high_ms", b.sweet_high_ms}, {"hard_late_ms", b.hard_late_ms}};
  };
  return {{"system", c.system},
          {"pipeline", std::string(to_string(c.pipeline))},
          {"judge", c.judge},
          {"seed", c.seed},
          {"thresholds", {{"task_completion", c.gates.task_completion},
                          {"faithfulness", c.gates.faithfulness},
                          {"speech_fidelity", c.gates.speech_fidelity},
                          {"turn_taking", c.gates.turn_taking},
                          {"conversation_progression", c.gates.conversation_progression},
                          {"conciseness", c.gates.conciseness}}},
          {"turn_taking", {{"breakpoints", {{"standard", bp(c.turn_taking.standard)}, {"tool", bp(c.turn_taking.tool)}}},
                           {"m_cap", c.turn_taking.interrupt.m_cap},
                           {"o_max_ms", c.turn_taking.interrupt.o_max_ms},
                           {"n_max", c.turn_taking.interrupt.n_max},
                           {"yield_max_ms", c.turn_taking.interrupt.yield_max_ms},
                           {"pass_threshold", c.turn_taking.pass_threshold}}},
          {"latency_buckets", {{"early_ms", c.buckets.early_ms},
                               {"on_time_ms", c.buckets.on_time_upper_ms},
                               {"on_time_tool_ms", c.buckets.on_time_upper_tool_ms}}},
          {"inactivity_timeout_ms", c.inactivity_timeout_ms},
          {"aggregate", {{"k", c.pass_k}, {"bootstrap_samples", c.aggregate_bootstrap}}},
          {"alpha", c.alpha},
          {"compare", {{"permutations", c.permutations}, {"bootstrap_samples", c.delta_bootstrap}}},
          {"agreement", {{"bootstrap_samples", c.agreement_bootstrap}}},
          {"stability", {{"draws", c.stability_draws}, {"k_grid", c.stability_k}}},
          {"sweep", {{"grid", c.sweep_grid}}}};
}

}  // namespace eva
