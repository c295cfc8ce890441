#pragma once

// Resampling tests, multiple-comparison correction, variance
// decomposition, agreement coefficients, threshold sweeps and trial-count
// stability.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>
#include <nlohmann/json.hpp>

#include "eva/aggregate.hpp"
#include "eva/error.hpp"
#include "eva/parallel.hpp"
#include "eva/rng.hpp"

namespace eva::stats {

// ---------------------------------------------------------------------------
// Perturbation deltas and permutation tests

struct PairedDelta {
  std::string scenario_id;
  double delta = 0.0;
};

/// delta = mean(perturbed) - mean(clean) for every scenario present in both.
inline std::vector<PairedDelta> paired_deltas(const std::map<std::string, std::vector<double>>& clean,
                                              const std::map<std::string, std::vector<double>>& perturbed) {
  std::vector<PairedDelta> out;
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  for (const auto& [id, c] : clean) {
    auto it = perturbed.find(id);
    if (it == perturbed.end() || c.empty() || it->second.empty()) continue;
    out.push_back({id, mean(it->second) - mean(c)});
  }
  if (out.empty()) throw Error(ErrorKind::empty_input, "no scenario appears in both result sets");
  return out;
}

enum class Alternative { two_sided, greater, less };

struct PermutationResult {
  double p_value = 1.0;
  double observed_mean = 0.0;
  bool exhaustive = true;
  std::uint64_t permutations = 0;
};

inline constexpr std::size_t kExhaustiveLimit = 20;

/// Sign-flip permutation test on paired deltas. Exhaustive for n <= 20;
/// otherwise n_perm random sign vectors with the add-one convention.
inline PermutationResult sign_flip_permutation(const std::vector<double>& deltas, std::uint64_t n_perm,
                                               std::uint64_t seed, Alternative alt = Alternative::two_sided,
                                               unsigned jobs = 1) {
  if (deltas.empty()) throw Error(ErrorKind::empty_input, "permutation test needs at least one delta");
  const std::size_t n = deltas.size();
  const double observed = std::accumulate(deltas.begin(), deltas.end(), 0.0);
  double scale = 0.0;
  for (double d : deltas) scale += std::fabs(d);
  const double eps = 1e-12 * std::max(1.0, scale);
  auto extreme = [&](double s) {
    switch (alt) {
      case Alternative::two_sided: return std::fabs(s) >= std::fabs(observed) - eps;
      case Alternative::greater: return s >= observed - eps;
      case Alternative::less: return s <= observed + eps;
    }
    return false;
  };

  PermutationResult r;
  r.observed_mean = observed / static_cast<double>(n);
  if (n <= kExhaustiveLimit) {
    const std::uint64_t total = std::uint64_t{1} << n;
    std::uint64_t hits = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (mask >> i & 1) ? -deltas[i] : deltas[i];
      hits += extreme(s) ? 1 : 0;
    }
    r.p_value = static_cast<double>(hits) / static_cast<double>(total);
    r.exhaustive = true;
    r.permutations = total;
    return r;
  }
  if (n_perm == 0) throw Error(ErrorKind::out_of_range, "sampled permutation test needs n_perm >= 1");
  std::vector<std::uint8_t> hit(n_perm, 0);
  parallel_for(n_perm, jobs, [&](std::size_t p) {
    CounterRng rng(seed, p);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += rng.coin() ? -deltas[i] : deltas[i];
    hit[p] = extreme(s) ? 1 : 0;
  });
  const auto hits = std::accumulate(hit.begin(), hit.end(), std::uint64_t{0});
  r.p_value = static_cast<double>(1 + hits) / static_cast<double>(1 + n_perm);
  r.exhaustive = false;
  r.permutations = n_perm;
  return r;
}

/// Same as above but always samples, regardless of n.
inline PermutationResult sampled_sign_flip(const std::vector<double>& deltas, std::uint64_t n_perm,
                                           std::uint64_t seed, Alternative alt = Alternative::two_sided) {
  if (deltas.empty()) throw Error(ErrorKind::empty_input, "permutation test needs at least one delta");
  const double observed = std::accumulate(deltas.begin(), deltas.end(), 0.0);
  double scale = 0.0;
  for (double d : deltas) scale += std::fabs(d);
  const double eps = 1e-12 * std::max(1.0, scale);
  std::uint64_t hits = 0;
  for (std::uint64_t p = 0; p < n_perm; ++p) {
    CounterRng rng(seed, p);
    double s = 0.0;
    for (double d : deltas) s += rng.coin() ? -d : d;
    bool x = alt == Alternative::two_sided ? std::fabs(s) >= std::fabs(observed) - eps
             : alt == Alternative::greater ? s >= observed - eps
                                           : s <= observed + eps;
    hits += x ? 1 : 0;
  }
  PermutationResult r;
  r.observed_mean = observed / static_cast<double>(deltas.size());
  r.p_value = static_cast<double>(1 + hits) / static_cast<double>(1 + n_perm);
  r.exhaustive = false;
  r.permutations = n_perm;
  return r;
}

struct HolmResult {
  std::vector<double> adjusted;
  std::vector<bool> reject;
};

/// Holm step-down adjustment, returned in the input order.
inline HolmResult holm_bonferroni(const std::vector<double>& p, double alpha = 0.05) {
  for (double x : p)
    if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorKind::out_of_range, "p-values must lie in [0, 1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  HolmResult r{std::vector<double>(m), std::vector<bool>(m, false)};
  double running = 0.0;
  bool still = true;
  for (std::size_t i = 0; i < m; ++i) {
    const double adj = std::min(1.0, static_cast<double>(m - i) * p[order[i]]);
    running = std::max(running, adj);
    r.adjusted[order[i]] = running;
    still = still && running <= alpha;
    r.reject[order[i]] = still;
  }
  return r;
}

inline std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

/// Exact upper tail P(X >= count) for X ~ Binomial(n, 1/2).
inline double binomial_sign_test(int count_positive, int n) {
  if (n < 0 || count_positive < 0 || count_positive > n)
    throw Error(ErrorKind::out_of_range, "sign test needs 0 <= count <= n");
  if (count_positive == 0) return 1.0;
  double tail = 0.0;
  const double log_half_n = n * std::log(0.5);
  for (int j = count_positive; j <= n; ++j) {
    const double log_c = std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0);
    tail += std::exp(log_c + log_half_n);
  }
  if (n <= 60) {
    // Exact integer arithmetic where it fits.
    unsigned long long c = 1, sum = 0;
    for (int j = 0; j <= n; ++j) {
      if (j >= count_positive) sum += c;
      c = c * static_cast<unsigned long long>(n - j) / static_cast<unsigned long long>(j + 1);
    }
    tail = static_cast<double>(sum) / std::ldexp(1.0, n);
  }
  return std::min(1.0, tail);
}

// ---------------------------------------------------------------------------
// Variance decomposition

/// scores[model][scenario][trial]
using Design = std::vector<std::vector<std::vector<double>>>;

struct VarianceComponents {
  double sigma2_scenario = 0.0;
  double sigma2_model = 0.0;
  double sigma2_interaction = 0.0;
  double sigma2_residual = 0.0;
  double raw_scenario = 0.0;  ///< before truncation at zero
  double raw_model = 0.0;
  double raw_interaction = 0.0;
  double ss_model = 0.0, ss_scenario = 0.0, ss_interaction = 0.0, ss_residual = 0.0, ss_total = 0.0;
  double ms_model = 0.0, ms_scenario = 0.0, ms_interaction = 0.0, ms_residual = 0.0;
  double df_model = 0.0, df_scenario = 0.0, df_interaction = 0.0, df_residual = 0.0;
  double f_interaction = 0.0, p_interaction = 1.0;
  double f_model = 0.0, p_model = 1.0;
  double f_scenario = 0.0, p_scenario = 1.0;
  double icc_scenario = 0.0;

  double total() const { return sigma2_scenario + sigma2_model + sigma2_interaction + sigma2_residual; }
};

namespace detail {

inline double f_upper_tail(double f, double df1, double df2) {
  if (std::isnan(f)) return 1.0;
  if (std::isinf(f)) return 0.0;
  if (f <= 0.0) return 1.0;
  boost::math::fisher_f dist(df1, df2);
  return boost::math::cdf(boost::math::complement(dist, f));
}

inline double ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace detail

/// Balanced two-way random-effects ANOVA (method of moments). The
/// interaction is tested against the residual; main effects against the
/// interaction.
inline VarianceComponents anova_components(const Design& y) {
  const std::size_t a = y.size();
  if (a < 2) throw Error(ErrorKind::degenerate_input, "variance decomposition needs at least two models");
  const std::size_t b = y[0].size();
  if (b < 2) throw Error(ErrorKind::degenerate_input, "variance decomposition needs at least two scenarios");
  const std::size_t n = y[0][0].size();
  for (const auto& model : y) {
    if (model.size() != b) throw Error(ErrorKind::unbalanced_design, "every model needs the same scenarios");
    for (const auto& cell : model)
      if (cell.size() != n) throw Error(ErrorKind::unbalanced_design, "every cell needs the same trial count");
  }
  if (n < 2) throw Error(ErrorKind::degenerate_input, "variance decomposition needs at least two trials per cell");

  const double A = static_cast<double>(a), B = static_cast<double>(b), N = static_cast<double>(n);
  std::vector<double> mi(a, 0.0), mj(b, 0.0);
  std::vector<std::vector<double>> mij(a, std::vector<double>(b, 0.0));
  // Work on values shifted by the first observation so a constant design yields exact zeros.
  const double shift = y[0][0][0];
  double grand = 0.0;
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (double v : y[i][j]) s += v - shift;
      mij[i][j] = s / N;
      mi[i] += s;
      mj[j] += s;
      grand += s;
    }
  for (auto& v : mi) v /= B * N;
  for (auto& v : mj) v /= A * N;
  grand /= A * B * N;

  VarianceComponents vc;
  for (std::size_t i = 0; i < a; ++i) vc.ss_model += B * N * (mi[i] - grand) * (mi[i] - grand);
  for (std::size_t j = 0; j < b; ++j) vc.ss_scenario += A * N * (mj[j] - grand) * (mj[j] - grand);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double r = mij[i][j] - mi[i] - mj[j] + grand;
      vc.ss_interaction += N * r * r;
      for (double raw : y[i][j]) {
        const double v = raw - shift;
        vc.ss_residual += (v - mij[i][j]) * (v - mij[i][j]);
        vc.ss_total += (v - grand) * (v - grand);
      }
    }
  vc.df_model = A - 1;
  vc.df_scenario = B - 1;
  vc.df_interaction = (A - 1) * (B - 1);
  vc.df_residual = A * B * (N - 1);
  vc.ms_model = vc.ss_model / vc.df_model;
  vc.ms_scenario = vc.ss_scenario / vc.df_scenario;
  vc.ms_interaction = vc.ss_interaction / vc.df_interaction;
  vc.ms_residual = vc.ss_residual / vc.df_residual;

  vc.sigma2_residual = vc.ms_residual;
  vc.raw_interaction = (vc.ms_interaction - vc.ms_residual) / N;
  vc.raw_model = (vc.ms_model - vc.ms_interaction) / (B * N);
  vc.raw_scenario = (vc.ms_scenario - vc.ms_interaction) / (A * N);
  vc.sigma2_interaction = std::max(0.0, vc.raw_interaction);
  vc.sigma2_model = std::max(0.0, vc.raw_model);
  vc.sigma2_scenario = std::max(0.0, vc.raw_scenario);

  vc.f_interaction = detail::ratio(vc.ms_interaction, vc.ms_residual);
  vc.p_interaction = detail::f_upper_tail(vc.f_interaction, vc.df_interaction, vc.df_residual);
  vc.f_model = detail::ratio(vc.ms_model, vc.ms_interaction);
  vc.p_model = detail::f_upper_tail(vc.f_model, vc.df_model, vc.df_interaction);
  vc.f_scenario = detail::ratio(vc.ms_scenario, vc.ms_interaction);
  vc.p_scenario = detail::f_upper_tail(vc.f_scenario, vc.df_scenario, vc.df_interaction);

  const double total = vc.total();
  vc.icc_scenario = total > 0.0 ? vc.sigma2_scenario / total : 0.0;
  return vc;
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const VarianceComponents& vc) {
  return {{"sigma2_scenario", vc.sigma2_scenario},
          {"sigma2_model", vc.sigma2_model},
          {"sigma2_interaction", vc.sigma2_interaction},
          {"sigma2_residual", vc.sigma2_residual},
          {"untruncated", {{"sigma2_scenario", vc.raw_scenario}, {"sigma2_model", vc.raw_model},
                           {"sigma2_interaction", vc.raw_interaction}}},
          {"sum_of_squares", {{"model", vc.ss_model}, {"scenario", vc.ss_scenario},
                              {"interaction", vc.ss_interaction}, {"residual", vc.ss_residual},
                              {"total", vc.ss_total}}},
          {"f_interaction", finite_or_null(vc.f_interaction)},
          {"p_interaction", vc.p_interaction},
          {"f_model", finite_or_null(vc.f_model)},
          {"p_model", vc.p_model},
          {"f_scenario", finite_or_null(vc.f_scenario)},
          {"p_scenario", vc.p_scenario},
          {"icc_scenario", vc.icc_scenario}};
}

struct IccResult {
  double icc = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Subtracts each model's grand mean: result[scenario] collects the
/// centered scores of every model and trial.
inline std::vector<std::vector<double>> center_by_model(const Design& y) {
  if (y.empty()) throw Error(ErrorKind::empty_input, "no models");
  const std::size_t b = y[0].size();
  std::vector<std::vector<double>> out(b);
  for (const auto& model : y) {
    if (model.size() != b) throw Error(ErrorKind::unbalanced_design, "every model needs the same scenarios");
    double s = 0.0, c = 0.0;
    for (const auto& cell : model)
      for (double v : cell) {
        s += v;
        c += 1;
      }
    const double m = c > 0 ? s / c : 0.0;
    for (std::size_t j = 0; j < b; ++j)
      for (double v : model[j]) out[j].push_back(v - m);
  }
  return out;
}

/// One-way random-effects ICC over groups (scenarios) with the n0
/// adjustment for unequal sizes and F-based confidence bounds.
inline IccResult icc_oneway(const std::vector<std::vector<double>>& groups, double alpha = 0.05) {
  const std::size_t k = groups.size();
  if (k < 2) throw Error(ErrorKind::degenerate_input, "ICC needs at least two groups");
  double total = 0.0, count = 0.0, sum_sq_n = 0.0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw Error(ErrorKind::degenerate_input, "ICC needs at least two observations per group");
    for (double v : g) total += v;
    count += static_cast<double>(g.size());
    sum_sq_n += static_cast<double>(g.size() * g.size());
  }
  const double grand = total / count;
  double ssb = 0.0, ssw = 0.0;
  for (const auto& g : groups) {
    const double m = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    ssb += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double v : g) ssw += (v - m) * (v - m);
  }
  const double K = static_cast<double>(k);
  const double df_b = K - 1, df_w = count - K;
  const double msb = ssb / df_b, msw = ssw / df_w;
  const double n0 = (count - sum_sq_n / count) / df_b;

  IccResult r;
  if (msb <= 0.0 && msw <= 0.0) return r;
  if (msw <= 0.0) {
    r.icc = r.lo = r.hi = 1.0;
    return r;
  }
  r.icc = (msb - msw) / (msb + (n0 - 1.0) * msw);
  const double f = msb / msw;
  boost::math::fisher_f f_bw(df_b, df_w), f_wb(df_w, df_b);
  const double fl = f / boost::math::quantile(f_bw, 1.0 - alpha / 2.0);
  const double fu = f * boost::math::quantile(f_wb, 1.0 - alpha / 2.0);
  r.lo = (fl - 1.0) / (fl + n0 - 1.0);
  r.hi = (fu - 1.0) / (fu + n0 - 1.0);
  return r;
}

// ---------------------------------------------------------------------------
// Agreement

/// Cohen's kappa on an ordinal scale of consecutive integer categories
/// [lo, hi]. Quadratic weights unless the scale is binary.
inline double cohen_kappa_qw(const std::vector<int>& a, const std::vector<int>& b, int lo, int hi) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::empty_input, "kappa needs ratings");
  if (a.size() != b.size()) throw Error(ErrorKind::mismatched_lengths, "kappa needs paired ratings");
  if (hi <= lo) throw Error(ErrorKind::out_of_range, "kappa needs at least two categories");
  const int K = hi - lo + 1;
  const bool binary = K == 2;
  std::vector<std::vector<double>> obs(K, std::vector<double>(K, 0.0));
  std::vector<double> ra(K, 0.0), rb(K, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < lo || a[i] > hi || b[i] < lo || b[i] > hi) throw Error(ErrorKind::out_of_range, "rating off scale");
    obs[a[i] - lo][b[i] - lo] += 1.0;
    ra[a[i] - lo] += 1.0;
    rb[b[i] - lo] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double po = 0.0, pe = 0.0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      const double d = static_cast<double>(i - j) / (K - 1);
      const double w = binary ? (i == j ? 1.0 : 0.0) : 1.0 - d * d;
      po += w * obs[i][j];
      pe += w * ra[i] * rb[j];
    }
  po /= n;
  pe /= n * n;
  if (1.0 - pe <= 1e-15) return 1.0;
  return (po - pe) / (1.0 - pe);
}

inline std::vector<double> mid_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorKind::mismatched_lengths, "correlation needs paired values");
  if (x.size() < 2) throw Error(ErrorKind::empty_input, "correlation needs at least two pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error(ErrorKind::degenerate_input, "correlation of a constant vector");
  return sxy / std::sqrt(sxx * syy);
}

/// Pearson correlation of mid-ranks.
inline double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::mismatched_lengths, "spearman needs paired values");
  return pearson_r(mid_ranks(a), mid_ranks(b));
}

// ---------------------------------------------------------------------------
// Threshold sweep

/// Thresholds as integer hundredths so grid points are exact decimals.
inline std::vector<int> default_sweep_grid() {
  std::vector<int> g;
  for (int h = 50; h <= 95; h += 5) g.push_back(h);
  return g;
}

struct SweepCurve {
  std::string system;
  std::vector<double> pass_at_1;  ///< one value per grid point
};

struct SweepResult {
  std::vector<int> grid;
  std::vector<SweepCurve> curves;
  std::vector<std::vector<std::optional<double>>> column_correlation;  ///< Pearson r across systems
};

/// Recomputes EVA-X pass@1 with the turn-taking threshold set to each grid
/// value, holding the other experience thresholds fixed.
inline SweepResult threshold_sweep(const std::vector<TrialResult>& trials, const std::vector<int>& grid_hundredths,
                                   const GateThresholds& fixed = {}) {
  if (grid_hundredths.empty()) throw Error(ErrorKind::empty_input, "sweep grid is empty");
  if (trials.empty()) throw Error(ErrorKind::empty_input, "sweep needs trial results");
  std::map<std::string, std::vector<const TrialResult*>> by_system;
  for (const auto& t : trials) by_system[t.system].push_back(&t);
  SweepResult r;
  r.grid = grid_hundredths;
  for (const auto& [system, list] : by_system) {
    SweepCurve c{system, {}};
    for (int h : grid_hundredths) {
      GateThresholds th = fixed;
      th.turn_taking = h / 100.0;
      long pass = 0;
      for (const auto* t : list) pass += eva_gate(t->scores, EvaDimension::experience, th) ? 1 : 0;
      c.pass_at_1.push_back(static_cast<double>(pass) / static_cast<double>(list.size()));
    }
    r.curves.push_back(std::move(c));
  }
  const std::size_t g = grid_hundredths.size();
  r.column_correlation.assign(g, std::vector<std::optional<double>>(g));
  if (r.curves.size() >= 2) {
    for (std::size_t i = 0; i < g; ++i)
      for (std::size_t j = 0; j < g; ++j) {
        std::vector<double> x, y;
        for (const auto& c : r.curves) {
          x.push_back(c.pass_at_1[i]);
          y.push_back(c.pass_at_1[j]);
        }
        try {
          r.column_correlation[i][j] = pearson_r(x, y);
        } catch (const Error&) {
        }
      }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Trial-count stability

struct StabilityPoint {
  int k = 0;
  double lo = 0.0;
  double hi = 0.0;
  double width = 0.0;
};

/// For each k, n_draws model-level means where every scenario contributes
/// the mean of an independent uniform k-subset of its trials; the width is
/// the central (1 - alpha) percentile spread.
inline std::vector<StabilityPoint> subsample_stability(const std::vector<std::vector<double>>& scores,
                                                       const std::vector<int>& k_grid, int n_draws,
                                                       std::uint64_t seed, double alpha = 0.05, unsigned jobs = 1) {
  if (scores.empty()) throw Error(ErrorKind::empty_input, "stability needs scenarios");
  if (n_draws < 1) throw Error(ErrorKind::out_of_range, "stability needs at least one draw");
  std::size_t available = scores.front().size();
  for (const auto& s : scores) available = std::min(available, s.size());
  std::vector<StabilityPoint> out;
  for (std::size_t gi = 0; gi < k_grid.size(); ++gi) {
    const int k = k_grid[gi];
    if (k < 1 || static_cast<std::size_t>(k) > available)
      throw Error(ErrorKind::out_of_range, "k = " + std::to_string(k) + " exceeds available trials");
    std::vector<double> est(static_cast<std::size_t>(n_draws));
    parallel_for(est.size(), jobs, [&](std::size_t d) {
      CounterRng rng(seed, gi * static_cast<std::uint64_t>(n_draws) + d);
      double total = 0.0;
      std::vector<std::size_t> idx;
      for (const auto& s : scores) {
        idx.resize(s.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < k; ++i) {
          const auto j = static_cast<std::size_t>(i) + rng.below(s.size() - static_cast<std::size_t>(i));
          std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
        }
        std::sort(idx.begin(), idx.begin() + k);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) sum += s[idx[static_cast<std::size_t>(i)]];
        total += sum / k;
      }
      est[d] = total / static_cast<double>(scores.size());
    });
    std::sort(est.begin(), est.end());
    StabilityPoint p;
    p.k = k;
    p.lo = quantile_sorted(est, alpha / 2.0);
    p.hi = quantile_sorted(est, 1.0 - alpha / 2.0);
    p.width = p.hi - p.lo;
    out.push_back(p);
  }
  return out;
}

}  // namespace eva::stats
