#pragma once

// Naive reference computations for the statistics tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace evatest::oracle {

/// Two-sided sign-flip p by recursive enumeration of all 2^n sign vectors.
inline double sign_flip_exhaustive(const std::vector<double>& d) {
  double observed = 0;
  for (double x : d) observed += x;
  const double target = std::fabs(observed) - 1e-9;
  long hits = 0, total = 0;
  std::function<void(std::size_t, double)> go = [&](std::size_t i, double s) {
    if (i == d.size()) {
      ++total;
      hits += std::fabs(s) >= target;
      return;
    }
    go(i + 1, s + d[i]);
    go(i + 1, s - d[i]);
  };
  go(0, 0.0);
  return static_cast<double>(hits) / static_cast<double>(total);
}

struct Planted {
  double scenario = 4, model = 1, interaction = 1, residual = 4;
};

/// y[model][scenario][trial] from a two-way random-effects model.
inline std::vector<std::vector<std::vector<double>>> simulate_design(int models, int scenarios, int trials,
                                                                     const Planted& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> m(models), s(scenarios);
  for (auto& v : m) v = std::sqrt(p.model) * z(rng);
  for (auto& v : s) v = std::sqrt(p.scenario) * z(rng);
  std::vector<std::vector<std::vector<double>>> y(models, std::vector<std::vector<double>>(scenarios));
  for (int i = 0; i < models; ++i)
    for (int j = 0; j < scenarios; ++j) {
      const double cell = 10.0 + m[i] + s[j] + std::sqrt(p.interaction) * z(rng);
      for (int t = 0; t < trials; ++t) y[i][j].push_back(cell + std::sqrt(p.residual) * z(rng));
    }
  return y;
}

}  // namespace evatest::oracle
