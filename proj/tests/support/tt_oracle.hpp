#pragma once

// Brute-force restatement of the turn-taking rules over plain intervals.
// Deliberately shares no code with the engine: overlap is measured by
// walking elementary intervals between all span endpoints.

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace evatest::oracle {

using Iv = std::pair<double, double>;

struct Breaks {
  double a, b, c, d;
};

inline Breaks standard_breaks() { return {-500, 500, 2000, 3500}; }
inline Breaks tool_breaks() { return {-500, 500, 3000, 5000}; }

inline double curve(double x, const Breaks& k) {
  if (x <= k.a) return 0.0;
  if (x <= k.b) return (x - k.a) / (k.b - k.a);
  if (x <= k.c) return 1.0;
  if (x >= k.d) return 0.0;
  return (k.d - x) / (k.d - k.c);
}

inline bool covers(const std::vector<Iv>& v, double x) {
  for (const auto& [lo, hi] : v)
    if (lo < x && x < hi) return true;
  return false;
}

inline std::vector<double> cuts(const std::vector<Iv>& a, const std::vector<Iv>& b) {
  std::vector<double> xs;
  for (const auto& [lo, hi] : a) xs.insert(xs.end(), {lo, hi});
  for (const auto& [lo, hi] : b) xs.insert(xs.end(), {lo, hi});
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  return xs;
}

/// Measure of the set of instants where both sides are speaking.
inline double both_speaking(const std::vector<Iv>& user, const std::vector<Iv>& asst) {
  auto xs = cuts(user, asst);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    const double mid = 0.5 * (xs[i] + xs[i + 1]);
    if (covers(user, mid) && covers(asst, mid)) total += xs[i + 1] - xs[i];
  }
  return total;
}

inline int barge_ins(const std::vector<Iv>& user, const std::vector<Iv>& asst) {
  int n = 0;
  for (const auto& a : asst)
    if (both_speaking(user, {a}) > 1.0) ++n;
  return n < 1 ? 1 : n;
}

struct Params {
  double m = 0.5, o_max = 2000, n_max = 3, y_max = 2000;
};

struct TurnIn {
  std::vector<Iv> user;
  std::vector<Iv> asst;
  std::vector<Iv> prev_asst;
  bool agent_interrupted = false;
  bool user_interrupted = false;
  bool tool = false;
};

inline double score(const TurnIn& t, const Params& p = {}) {
  if (t.user.empty() || t.asst.empty()) return 0.0;
  const Breaks k = t.tool ? tool_breaks() : standard_breaks();
  double first_user = 1e300, last_user = -1e300, first_asst = 1e300;
  for (const auto& [lo, hi] : t.user) {
    first_user = std::min(first_user, lo);
    last_user = std::max(last_user, hi);
  }
  for (const auto& iv : t.asst) first_asst = std::min(first_asst, iv.first);
  if (!t.agent_interrupted && !t.user_interrupted) return curve(first_asst - last_user, k);

  double result = 1e300;
  if (t.agent_interrupted) {
    const double o = both_speaking(t.user, t.asst);
    const int n = barge_ins(t.user, t.asst);
    result = std::min(result, std::max(0.0, p.m * (1 - o / p.o_max)));
    result = std::min(result, std::max(0.0, p.m * (1 - (n - 1) / (p.n_max - 1))));
    bool straddle = false;
    std::optional<double> settled;
    for (const auto& [lo, hi] : t.asst) {
      if (lo < last_user && hi > last_user) straddle = true;
      if (lo >= last_user) settled = settled ? std::min(*settled, lo) : lo;
    }
    if (settled && !straddle) result = std::min(result, curve(*settled - last_user, k));
  }
  if (t.user_interrupted) {
    double prev_end = first_user;
    if (!t.prev_asst.empty()) {
      prev_end = -1e300;
      for (const auto& iv : t.prev_asst) prev_end = std::max(prev_end, iv.second);
    }
    const double dt = std::max(0.0, prev_end - first_user);
    result = std::min(result, std::max(0.0, 1 - dt / p.y_max));
  }
  return result;
}

/// Oracle input for user turn i of a generated conversation's ground truth.
inline TurnIn from_ground_truth(const nlohmann::json& gt, std::size_t i) {
  auto spans = [](const nlohmann::json& arr) {
    std::vector<Iv> out;
    for (const auto& s : arr) out.emplace_back(s[0].get<double>(), s[1].get<double>());
    return out;
  };
  const auto& t = gt["turns"][i];
  TurnIn in;
  in.user = {{t["user_span"][0].get<double>(), t["user_span"][1].get<double>()}};
  in.asst = spans(t["assistant_spans"]);
  in.prev_asst = spans(gt["turns"][i - 1]["assistant_spans"]);
  in.agent_interrupted = t["assistant_interrupted"].get<bool>();
  in.user_interrupted = t["user_interrupted"].get<bool>();
  in.tool = t["tool_turn"].get<bool>();
  return in;
}

}  // namespace evatest::oracle
