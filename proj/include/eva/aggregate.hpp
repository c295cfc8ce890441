#pragma once

// EVA-A / EVA-X gates and the pass@1, pass@k, pass^k reliability metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "eva/error.hpp"
#include "eva/metric_outcome.hpp"
#include "eva/parallel.hpp"
#include "eva/rng.hpp"

namespace eva {

struct GateThresholds {
  double task_completion = 1.0;
  double faithfulness = 0.5;
  double speech_fidelity = 0.95;
  double turn_taking = 0.8;
  double conversation_progression = 0.5;
  double conciseness = 0.5;
};

enum class EvaDimension { accuracy, experience };

constexpr std::string_view to_string(EvaDimension d) { return d == EvaDimension::accuracy ? "eva_a" : "eva_x"; }

using ScoreMap = std::map<std::string, double>;

namespace detail {

inline double require(const ScoreMap& scores, const std::string& name) {
  auto it = scores.find(name);
  if (it == scores.end()) throw Error(ErrorKind::missing_metric, "gate needs metric '" + name + "'");
  return it->second;
}

}  // namespace detail

/// Conjunction of the dimension's metric thresholds (inclusive; task
/// completion must equal its threshold exactly).
inline bool eva_gate(const ScoreMap& scores, EvaDimension dim, const GateThresholds& th = {}) {
  if (dim == EvaDimension::accuracy) {
    const double tc = detail::require(scores, "task_completion");
    const double f = detail::require(scores, "faithfulness");
    const double sf = detail::require(scores, "speech_fidelity");
    return meets(tc, th.task_completion, Comparator::equals) && f >= th.faithfulness && sf >= th.speech_fidelity;
  }
  const double tt = detail::require(scores, "turn_taking");
  const double cp = detail::require(scores, "conversation_progression");
  const double cc = detail::require(scores, "conciseness");
  return tt >= th.turn_taking && cp >= th.conversation_progression && cc >= th.conciseness;
}

struct TrialResult {
  std::string system;
  std::string domain;
  std::string scenario_id;
  int trial_index = 0;
  ScoreMap scores;
  bool eva_a = false;
  bool eva_x = false;
};

struct ScenarioAggregate {
  std::string scenario_id;
  std::vector<bool> passes;

  int k() const { return static_cast<int>(passes.size()); }
  int pass_count() const { return static_cast<int>(std::count(passes.begin(), passes.end(), true)); }
  double p_hat() const {
    if (passes.empty()) throw Error(ErrorKind::empty_input, "scenario '" + scenario_id + "' has no trials");
    return static_cast<double>(pass_count()) / static_cast<double>(passes.size());
  }
};

/// Fraction of all trials that pass.
inline double pass_at_1(const std::vector<ScenarioAggregate>& scenarios) {
  long passes = 0, total = 0;
  for (const auto& s : scenarios) {
    passes += s.pass_count();
    total += s.k();
  }
  if (total == 0) throw Error(ErrorKind::empty_input, "pass@1 needs at least one trial");
  return static_cast<double>(passes) / static_cast<double>(total);
}

/// Fraction of scenarios with at least one passing trial.
inline double pass_at_k(const std::vector<ScenarioAggregate>& scenarios) {
  if (scenarios.empty()) throw Error(ErrorKind::empty_input, "pass@k needs at least one scenario");
  long hit = 0;
  for (const auto& s : scenarios) hit += s.pass_count() > 0 ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(scenarios.size());
}

/// Mean over scenarios of p_hat^k (plug-in estimator).
inline double pass_pow_k(const std::vector<ScenarioAggregate>& scenarios, int k) {
  if (scenarios.empty()) throw Error(ErrorKind::empty_input, "pass^k needs at least one scenario");
  if (k < 1) throw Error(ErrorKind::out_of_range, "pass^k needs k >= 1");
  double sum = 0.0;
  for (const auto& s : scenarios) sum += std::pow(s.p_hat(), k);
  return sum / static_cast<double>(scenarios.size());
}

inline double pass_pow_k(const std::vector<double>& p_hats, int k) {
  if (p_hats.empty()) throw Error(ErrorKind::empty_input, "pass^k needs at least one scenario");
  if (k < 1) throw Error(ErrorKind::out_of_range, "pass^k needs k >= 1");
  double sum = 0.0;
  for (double p : p_hats) sum += std::pow(p, k);
  return sum / static_cast<double>(p_hats.size());
}

/// Equal-weight mean over domains.
inline double pooled_estimate(const std::vector<double>& per_domain) {
  if (per_domain.empty()) throw Error(ErrorKind::empty_input, "pooled estimate needs at least one domain");
  double s = 0.0;
  for (double v : per_domain) s += v;
  return s / static_cast<double>(per_domain.size());
}

/// Hyndman-Fan type 7 quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw Error(ErrorKind::empty_input, "quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct ConfidenceInterval {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;

  double half_width() const { return (hi - lo) / 2.0; }
};

inline json to_json(const ConfidenceInterval& c) {
  return {{"point", c.point}, {"lo", c.lo}, {"hi", c.hi}, {"half_width", c.half_width()}};
}

/// Percentile bootstrap. Resample b draws from its own counter stream, so
/// the interval is identical for any number of worker threads.
template <class T, class Stat>
ConfidenceInterval bootstrap_ci(const std::vector<T>& items, Stat stat, int resamples, double alpha,
                                std::uint64_t seed, unsigned jobs = 1) {
  if (items.empty()) throw Error(ErrorKind::empty_input, "bootstrap needs at least one value");
  if (resamples < 1) throw Error(ErrorKind::out_of_range, "bootstrap needs B >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::out_of_range, "alpha must be in (0, 1)");
  ConfidenceInterval ci;
  ci.point = stat(items);
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  parallel_for(stats.size(), jobs, [&](std::size_t b) {
    CounterRng rng(seed, b);
    std::vector<T> draw;
    draw.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) draw.push_back(items[rng.below(items.size())]);
    stats[b] = stat(draw);
  });
  std::sort(stats.begin(), stats.end());
  ci.lo = quantile_sorted(stats, alpha / 2.0);
  ci.hi = quantile_sorted(stats, 1.0 - alpha / 2.0);
  return ci;
}

inline ConfidenceInterval bootstrap_mean_ci(const std::vector<double>& values, int resamples, double alpha,
                                            std::uint64_t seed, unsigned jobs = 1) {
  return bootstrap_ci(
      values,
      [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      },
      resamples, alpha, seed, jobs);
}

/// Pooled bootstrap: scenarios are resampled within each domain and the
/// statistic is averaged over domains with equal weight.
template <class Stat>
ConfidenceInterval pooled_bootstrap_ci(const std::vector<std::vector<ScenarioAggregate>>& domains, Stat stat,
                                       int resamples, double alpha, std::uint64_t seed, unsigned jobs = 1) {
  if (domains.empty()) throw Error(ErrorKind::empty_input, "pooled bootstrap needs at least one domain");
  ConfidenceInterval ci;
  std::vector<double> per;
  for (const auto& d : domains) per.push_back(stat(d));
  ci.point = pooled_estimate(per);
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  parallel_for(stats.size(), jobs, [&](std::size_t b) {
    CounterRng rng(seed, b);
    double sum = 0.0;
    for (const auto& d : domains) {
      std::vector<ScenarioAggregate> draw;
      draw.reserve(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) draw.push_back(d[rng.below(d.size())]);
      sum += stat(draw);
    }
    stats[b] = sum / static_cast<double>(domains.size());
  });
  std::sort(stats.begin(), stats.end());
  ci.lo = quantile_sorted(stats, alpha / 2.0);
  ci.hi = quantile_sorted(stats, 1.0 - alpha / 2.0);
  return ci;
}

struct AggregateConfig {
  int k = 0;  ///< exponent for pass^k; 0 means the largest per-scenario trial count
  int bootstrap_samples = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

inline std::vector<ScenarioAggregate> scenario_aggregates(const std::vector<const TrialResult*>& trials,
                                                          EvaDimension dim) {
  std::map<std::string, std::vector<std::pair<int, bool>>> by_scenario;
  for (const auto* t : trials)
    by_scenario[t->scenario_id].push_back({t->trial_index, dim == EvaDimension::accuracy ? t->eva_a : t->eva_x});
  std::vector<ScenarioAggregate> out;
  for (auto& [id, v] : by_scenario) {
    std::sort(v.begin(), v.end());
    ScenarioAggregate s;
    s.scenario_id = id;
    for (const auto& [_, pass] : v) s.passes.push_back(pass);
    out.push_back(std::move(s));
  }
  return out;
}

/// Per-system, per-domain and pooled pass statistics with bootstrap CIs,
/// plus mean sub-metric scores.
inline json aggregate_report(std::vector<TrialResult> trials, const AggregateConfig& cfg) {
  if (trials.empty()) throw Error(ErrorKind::empty_input, "no trial results to aggregate");
  std::sort(trials.begin(), trials.end(), [](const TrialResult& a, const TrialResult& b) {
    return std::tie(a.system, a.domain, a.scenario_id, a.trial_index) <
           std::tie(b.system, b.domain, b.scenario_id, b.trial_index);
  });
  std::map<std::string, std::map<std::string, std::vector<const TrialResult*>>> grouped;
  for (const auto& t : trials) grouped[t.system][t.domain].push_back(&t);

  json systems = json::object();
  std::vector<std::string> warnings;
  std::uint64_t stream = 0;
  for (const auto& [system, domains] : grouped) {
    json sys = json::object();
    bool unbalanced = false;
    for (auto dim : {EvaDimension::accuracy, EvaDimension::experience}) {
      json per_domain = json::object();
      std::vector<std::vector<ScenarioAggregate>> all;
      int k_max = 0, k_min = 1 << 30;
      for (const auto& [domain, list] : domains) {
        auto aggs = scenario_aggregates(list, dim);
        for (const auto& a : aggs) {
          k_max = std::max(k_max, a.k());
          k_min = std::min(k_min, a.k());
        }
        all.push_back(std::move(aggs));
      }
      if (k_min != k_max) unbalanced = true;
      const int k = cfg.k > 0 ? cfg.k : k_max;
      auto p1 = [](const std::vector<ScenarioAggregate>& v) { return pass_at_1(v); };
      auto pk = [](const std::vector<ScenarioAggregate>& v) { return pass_at_k(v); };
      auto ppk = [k](const std::vector<ScenarioAggregate>& v) { return pass_pow_k(v, k); };
      std::size_t di = 0;
      for (const auto& [domain, _] : domains) {
        const auto& aggs = all[di++];
        json d = {{"scenarios", aggs.size()}};
        d["pass_at_1"] = to_json(bootstrap_ci(aggs, p1, cfg.bootstrap_samples, cfg.alpha, mix64(cfg.seed + stream++), cfg.jobs));
        d["pass_at_k"] = to_json(bootstrap_ci(aggs, pk, cfg.bootstrap_samples, cfg.alpha, mix64(cfg.seed + stream++), cfg.jobs));
        d["pass_pow_k"] = to_json(bootstrap_ci(aggs, ppk, cfg.bootstrap_samples, cfg.alpha, mix64(cfg.seed + stream++), cfg.jobs));
        per_domain[domain] = d;
      }
      json pooled = {
          {"pass_at_1", to_json(pooled_bootstrap_ci(all, p1, cfg.bootstrap_samples, cfg.alpha, mix64(cfg.seed + stream++), cfg.jobs))},
          {"pass_at_k", to_json(pooled_bootstrap_ci(all, pk, cfg.bootstrap_samples, cfg.alpha, mix64(cfg.seed + stream++), cfg.jobs))},
          {"pass_pow_k", to_json(pooled_bootstrap_ci(all, ppk, cfg.bootstrap_samples, cfg.alpha, mix64(cfg.seed + stream++), cfg.jobs))}};
      sys[std::string(to_string(dim))] = {{"k", k}, {"domains", per_domain}, {"pooled", pooled}};
    }
    std::map<std::string, std::pair<double, int>> sums;
    for (const auto& [_, list] : domains)
      for (const auto* t : list)
        for (const auto& [m, v] : t->scores) {
          sums[m].first += v;
          sums[m].second += 1;
        }
    json means = json::object();
    for (const auto& [m, sv] : sums) means[m] = sv.first / sv.second;
    sys["submetric_means"] = means;
    sys["unbalanced_trials"] = unbalanced;
    if (unbalanced) warnings.push_back("system '" + system + "' has unequal trial counts across scenarios");
    systems[system] = sys;
  }
  return {{"systems", systems}, {"warnings", warnings}};
}

inline json to_json(const TrialResult& t) {
  return {{"system", t.system},           {"domain", t.domain}, {"scenario_id", t.scenario_id},
          {"trial_index", t.trial_index}, {"scores", t.scores}, {"eva_a", t.eva_a},
          {"eva_x", t.eva_x}};
}

inline TrialResult trial_from_json(const json& j) {
  TrialResult t;
  try {
    t.system = j.value("system", std::string("system"));
    t.domain = j.value("domain", std::string("default"));
    t.scenario_id = j.at("scenario_id").get<std::string>();
    t.trial_index = j.value("trial_index", 0);
    for (const auto& [k, v] : j.at("scores").items())
      if (v.is_number()) t.scores[k] = v.get<double>();
    t.eva_a = j.at("eva_a").get<bool>();
    t.eva_x = j.at("eva_x").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("trial result: ") + e.what());
  }
  return t;
}

}  // namespace eva
