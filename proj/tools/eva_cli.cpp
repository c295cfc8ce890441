#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eva/eva.hpp"

namespace fs = std::filesystem;
using eva::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::optional<std::string> pipeline;
  std::optional<std::string> judge;
  std::optional<std::string> format;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_out = true) {
  cmd->add_option("--config", f.config_path, "key = value configuration file");
  cmd->add_option("--set", f.sets, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--format", f.format, "report format")->check(CLI::IsMember({"json", "csv"}));
  auto* out = cmd->add_option("--out", f.out, "output directory");
  if (needs_out) out->required();
}

eva::RunConfig resolve_config(const CommonFlags& f, bool stochastic) {
  eva::RunConfig cfg;
  if (!f.config_path.empty()) eva::apply_config(cfg, eva::load_config_file(f.config_path));
  eva::ConfigEntries over;
  for (const auto& s : f.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw eva::Error(eva::ErrorKind::config, "--set expects key=value, got '" + s + "'");
    over[eva::text::normalize_ws(s.substr(0, eq))] = eva::text::normalize_ws(s.substr(eq + 1));
  }
  if (f.seed) over["seed"] = std::to_string(*f.seed);
  if (f.jobs) over["jobs"] = std::to_string(*f.jobs);
  if (f.pipeline) over["pipeline"] = *f.pipeline;
  if (f.judge) over["judge"] = *f.judge;
  if (f.format) over["format"] = *f.format;
  eva::apply_config(cfg, over);
  if (stochastic && !cfg.seed_set) throw eva::Error(eva::ErrorKind::config, "this command needs --seed (or seed = in the config)");
  return cfg;
}

std::string utc_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_report(const fs::path& dir, const std::string& name, const json& body) {
  fs::create_directories(dir);
  eva::fixtures::write_text(dir / name, body.dump(2) + "\n");
}

/// Wall-clock details live beside the report so the report itself stays
/// reproducible.
void write_meta(const fs::path& dir, const std::string& command, int argc, char** argv) {
  json args = json::array();
  for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
  write_report(dir, command + ".meta.json", {{"command", command}, {"argv", args}, {"finished_at", utc_now()}});
}

json envelope(const std::string& command, const eva::RunConfig& cfg, json result) {
  return {{"command", command}, {"config", eva::to_json(cfg)}, {"seed", cfg.seed}, {"result", std::move(result)}};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  return json(v).dump();
}

std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += csv_field(cells[i]);
  }
  return line + "\n";
}

std::unique_ptr<eva::JudgePort> make_judge(const eva::RunConfig& cfg) {
  if (cfg.judge == "mock") return std::make_unique<eva::MockJudge>(cfg.seed);
  return std::make_unique<eva::ExternalJudge>(cfg.judge.substr(4));
}

// ---------------------------------------------------------------------------
// Trial result loading

struct LoadedTrial {
  eva::TrialResult result;
  bool accepted = true;
};

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> here;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".json" &&
            e.path().filename().string().find(".meta.") == std::string::npos)
          here.push_back(e.path());
      std::sort(here.begin(), here.end());
      files.insert(files.end(), here.begin(), here.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw eva::Error(eva::ErrorKind::io, "no such input " + in);
    }
  }
  return files;
}

std::vector<LoadedTrial> load_trials(const std::vector<std::string>& inputs) {
  std::vector<LoadedTrial> out;
  for (const auto& f : expand_inputs(inputs)) {
    auto j = eva::read_json_file(f);
    if (!j.is_object() || !j.contains("scores") || !j.contains("eva_a")) continue;
    LoadedTrial t;
    try {
      t.result = eva::trial_from_json(j);
    } catch (const eva::Error& e) {
      throw eva::Error(e.kind(), f.string() + ": " + e.what());
    }
    if (j.contains("validation")) t.accepted = j["validation"].value("decision", std::string("accept")) == "accept";
    out.push_back(std::move(t));
  }
  std::sort(out.begin(), out.end(), [](const LoadedTrial& a, const LoadedTrial& b) {
    return std::tie(a.result.system, a.result.scenario_id, a.result.trial_index) <
           std::tie(b.result.system, b.result.scenario_id, b.result.trial_index);
  });
  return out;
}

std::vector<eva::TrialResult> accepted_results(const std::vector<LoadedTrial>& all, bool include_rerun,
                                               std::size_t& skipped) {
  std::vector<eva::TrialResult> out;
  skipped = 0;
  for (const auto& t : all) {
    if (t.accepted || include_rerun)
      out.push_back(t.result);
    else
      ++skipped;
  }
  if (out.empty()) throw eva::Error(eva::ErrorKind::empty_input, "no usable trial results");
  return out;
}

double metric_value(const eva::TrialResult& t, const std::string& m) {
  if (m == "eva_a") return t.eva_a ? 1.0 : 0.0;
  if (m == "eva_x") return t.eva_x ? 1.0 : 0.0;
  auto it = t.scores.find(m);
  if (it == t.scores.end()) throw eva::Error(eva::ErrorKind::missing_metric, "trial lacks metric '" + m + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_score(const CommonFlags& f, const std::vector<std::string>& conversations, const std::string& bundle,
              const std::string& bundles_root, const std::optional<std::string>& system,
              const std::optional<int>& trial_index, int argc, char** argv) {
  auto cfg = resolve_config(f, false);
  if (bundle.empty() == bundles_root.empty())
    throw eva::Error(eva::ErrorKind::config, "give exactly one of --bundle or --bundles");
  if (trial_index && conversations.size() != 1)
    throw eva::Error(eva::ErrorKind::config, "--trial-index applies to a single conversation");
  eva::TrialOverrides over;
  over.system = system;
  over.trial_index = trial_index;
  if (f.pipeline) over.pipeline = cfg.pipeline;

  struct Slot {
    std::optional<eva::TrialOutcome> outcome;
    std::string error;
  };
  std::vector<Slot> slots(conversations.size());
  const fs::path out_dir(f.out);
  eva::parallel_for(conversations.size(), cfg.jobs, [&](std::size_t i) {
    const fs::path conv(conversations[i]);
    try {
      fs::path bdir = bundle;
      if (bdir.empty()) {
        auto meta = eva::load_trial_meta(conv);
        if (!meta.scenario_id) throw eva::Error(eva::ErrorKind::config, "trial.json has no scenario_id for --bundles");
        bdir = fs::path(bundles_root) / *meta.scenario_id;
      }
      if (!fs::is_directory(bdir)) throw eva::Error(eva::ErrorKind::io, "missing scenario bundle " + bdir.string());
      auto scenario = eva::load_scenario(bdir);
      auto judge = make_judge(cfg);
      slots[i].outcome = eva::score_trial(conv, scenario, cfg, *judge, over);
    } catch (const std::exception& e) {
      slots[i].error = conv.string() + ": " + e.what();
    }
  });

  int code = 0;
  std::string csv = csv_join({"conversation", "system", "scenario_id", "trial_index", "eva_a", "eva_x", "decision"});
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto name = fs::path(conversations[i]).lexically_normal().filename().string();
    if (!slots[i].outcome) {
      std::cerr << "error: " << slots[i].error << "\n";
      code = 1;
      continue;
    }
    const auto& o = *slots[i].outcome;
    json report = o.report;
    report["conversation"] = name;
    report["config"] = eva::to_json(cfg);
    write_report(out_dir, name + ".json", report);
    const std::string decision = o.decision.accept ? "accept" : "rerun";
    csv += csv_join({name, o.result.system, o.result.scenario_id, std::to_string(o.result.trial_index),
                     o.result.eva_a ? "1" : "0", o.result.eva_x ? "1" : "0", decision});
    std::cout << name << ": eva_a=" << o.result.eva_a << " eva_x=" << o.result.eva_x << " " << decision << "\n";
    if (code == 0 && o.exit_code() == 2) code = 2;
  }
  if (cfg.format == "csv") eva::fixtures::write_text(out_dir / "trials.csv", csv);
  write_meta(out_dir, "score", argc, argv);
  return code;
}

int cmd_aggregate(const CommonFlags& f, const std::vector<std::string>& inputs, bool include_rerun, int argc,
                  char** argv) {
  auto cfg = resolve_config(f, true);
  std::size_t skipped = 0;
  auto trials = accepted_results(load_trials(inputs), include_rerun, skipped);
  eva::AggregateConfig ac{cfg.pass_k, cfg.aggregate_bootstrap, cfg.alpha, cfg.seed, cfg.jobs};
  auto result = eva::aggregate_report(trials, ac);
  result["trials"] = trials.size();
  result["skipped_rerun_trials"] = skipped;
  const fs::path out(f.out);
  write_report(out, "aggregate.json", envelope("aggregate", cfg, result));

  std::string csv = csv_join({"system", "dimension", "scope", "statistic", "point", "lo", "hi"});
  for (const auto& [system, sys] : result["systems"].items()) {
    for (const char* dim : {"eva_a", "eva_x"}) {
      const auto& d = sys[dim];
      auto emit = [&](const std::string& scope, const json& block) {
        for (const char* stat : {"pass_at_1", "pass_at_k", "pass_pow_k"})
          csv += csv_join({system, dim, scope, stat, num(block[stat]["point"].get<double>()),
                           num(block[stat]["lo"].get<double>()), num(block[stat]["hi"].get<double>())});
      };
      for (const auto& [domain, block] : d["domains"].items()) emit(domain, block);
      emit("pooled", d["pooled"]);
    }
  }
  eva::fixtures::write_text(out / "aggregate.csv", csv);
  for (const auto& w : result["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
  write_meta(out, "aggregate", argc, argv);
  return 0;
}

int cmd_compare(const CommonFlags& f, const std::vector<std::string>& clean_in,
                const std::vector<std::string>& perturbed_specs, std::vector<std::string> metrics, int argc,
                char** argv) {
  auto cfg = resolve_config(f, true);
  std::size_t skipped = 0;
  auto clean = accepted_results(load_trials(clean_in), false, skipped);
  std::vector<std::pair<std::string, std::vector<eva::TrialResult>>> conditions;
  for (const auto& spec : perturbed_specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) throw eva::Error(eva::ErrorKind::config, "--perturbed expects name=path");
    std::size_t sk = 0;
    conditions.emplace_back(spec.substr(0, eq), accepted_results(load_trials({spec.substr(eq + 1)}), false, sk));
  }
  if (metrics.empty()) {
    std::set<std::string> names{"eva_a", "eva_x"};
    for (const auto& t : clean)
      for (const auto& [m, _] : t.scores) names.insert(m);
    metrics.assign(names.begin(), names.end());
  }

  using Table = std::map<std::string, std::map<std::string, std::vector<double>>>;  // system -> scenario -> values
  auto table = [](const std::vector<eva::TrialResult>& v, const std::string& m) {
    Table t;
    for (const auto& r : v) {
      auto it = r.scores.find(m);
      if (m != "eva_a" && m != "eva_x" && it == r.scores.end()) continue;
      t[r.system][r.scenario_id].push_back(metric_value(r, m));
    }
    return t;
  };

  json families = json::array();
  std::string csv = csv_join({"system", "metric", "condition", "n", "mean_delta", "ci_lo", "ci_hi", "p_value",
                              "p_holm", "stars", "exhaustive"});
  std::uint64_t stream = 0;
  for (const auto& m : metrics) {
    const auto clean_t = table(clean, m);
    for (const auto& [system, clean_s] : clean_t) {
      json members = json::array();
      std::vector<double> ps;
      for (const auto& [name, results] : conditions) {
        auto pt = table(results, m);
        auto sit = pt.find(system);
        if (sit == pt.end()) continue;
        auto deltas = eva::stats::paired_deltas(clean_s, sit->second);
        std::vector<double> d;
        json per = json::object();
        for (const auto& pd : deltas) {
          d.push_back(pd.delta);
          per[pd.scenario_id] = pd.delta;
        }
        const auto seed = eva::mix64(cfg.seed + (++stream));
        auto perm = eva::stats::sign_flip_permutation(d, cfg.permutations, seed, eva::stats::Alternative::two_sided,
                                                      cfg.jobs);
        auto ci = eva::bootstrap_mean_ci(d, cfg.delta_bootstrap, cfg.alpha, eva::mix64(seed ^ 0xb007), cfg.jobs);
        ps.push_back(perm.p_value);
        members.push_back({{"condition", name},
                           {"n", d.size()},
                           {"mean_delta", perm.observed_mean},
                           {"ci", eva::to_json(ci)},
                           {"p_value", perm.p_value},
                           {"exhaustive", perm.exhaustive},
                           {"permutations", perm.permutations},
                           {"deltas", per}});
      }
      if (members.empty()) continue;
      auto holm = eva::stats::holm_bonferroni(ps, cfg.alpha);
      for (std::size_t i = 0; i < members.size(); ++i) {
        auto& mem = members[i];
        mem["p_holm"] = holm.adjusted[i];
        mem["reject"] = static_cast<bool>(holm.reject[i]);
        mem["stars"] = eva::stats::significance_stars(holm.adjusted[i]);
        csv += csv_join({system, m, mem["condition"].get<std::string>(), std::to_string(mem["n"].get<int>()),
                         num(mem["mean_delta"].get<double>()), num(mem["ci"]["lo"].get<double>()),
                         num(mem["ci"]["hi"].get<double>()), num(mem["p_value"].get<double>()),
                         num(holm.adjusted[i]), mem["stars"].get<std::string>(),
                         mem["exhaustive"].get<bool>() ? "1" : "0"});
      }
      families.push_back({{"system", system}, {"metric", m}, {"conditions", members}});
    }
  }
  if (families.empty()) throw eva::Error(eva::ErrorKind::empty_input, "no system appears in both clean and perturbed results");
  const fs::path out(f.out);
  write_report(out, "compare.json", envelope("compare", cfg, {{"families", families}}));
  if (cfg.format == "csv") eva::fixtures::write_text(out / "compare.csv", csv);
  write_meta(out, "compare", argc, argv);
  return 0;
}

int cmd_sweep(const CommonFlags& f, const std::vector<std::string>& inputs, int argc, char** argv) {
  auto cfg = resolve_config(f, false);
  std::size_t skipped = 0;
  auto trials = accepted_results(load_trials(inputs), false, skipped);
  auto r = eva::stats::threshold_sweep(trials, cfg.sweep_grid, cfg.gates);
  json curves = json::object();
  std::vector<std::string> header{"system"};
  for (int h : r.grid) header.push_back(json(h / 100.0).dump());
  std::string csv = csv_join(header);
  for (const auto& c : r.curves) {
    curves[c.system] = c.pass_at_1;
    std::vector<std::string> row{c.system};
    for (double v : c.pass_at_1) row.push_back(num(v));
    csv += csv_join(row);
  }
  json corr = json::array();
  for (const auto& row : r.column_correlation) {
    json jr = json::array();
    for (const auto& v : row) jr.push_back(v ? json(*v) : json(nullptr));
    corr.push_back(jr);
  }
  json grid = json::array();
  for (int h : r.grid) grid.push_back(h / 100.0);
  const fs::path out(f.out);
  write_report(out, "sweep.json", envelope("sweep", cfg, {{"thresholds", grid}, {"eva_x_pass_at_1", curves},
                                                          {"column_correlation", corr}}));
  if (cfg.format == "csv") eva::fixtures::write_text(out / "sweep.csv", csv);
  write_meta(out, "sweep", argc, argv);
  return 0;
}

int cmd_stability(const CommonFlags& f, const std::vector<std::string>& inputs, const std::string& metric, int argc,
                  char** argv) {
  auto cfg = resolve_config(f, true);
  std::size_t skipped = 0;
  auto trials = accepted_results(load_trials(inputs), false, skipped);
  std::map<std::string, std::map<std::string, std::vector<double>>> by;
  for (const auto& t : trials) by[t.system][t.scenario_id].push_back(metric_value(t, metric));
  json systems = json::object();
  std::string csv = csv_join({"system", "k", "lo", "hi", "width"});
  std::uint64_t stream = 0;
  for (const auto& [system, scen] : by) {
    std::vector<std::vector<double>> scores;
    for (const auto& [_, v] : scen) scores.push_back(v);
    auto pts = eva::stats::subsample_stability(scores, cfg.stability_k, cfg.stability_draws,
                                               eva::mix64(cfg.seed + (++stream)), cfg.alpha, cfg.jobs);
    json arr = json::array();
    for (const auto& p : pts) {
      arr.push_back({{"k", p.k}, {"lo", p.lo}, {"hi", p.hi}, {"width", p.width}});
      csv += csv_join({system, std::to_string(p.k), num(p.lo), num(p.hi), num(p.width)});
    }
    systems[system] = arr;
  }
  const fs::path out(f.out);
  write_report(out, "stability.json", envelope("stability", cfg, {{"metric", metric}, {"systems", systems}}));
  if (cfg.format == "csv") eva::fixtures::write_text(out / "stability.csv", csv);
  write_meta(out, "stability", argc, argv);
  return 0;
}

std::vector<int> read_ratings(const std::string& path) {
  const auto bytes = eva::read_file(path);
  std::vector<int> out;
  auto trimmed = eva::text::normalize_ws(bytes);
  if (!trimmed.empty() && trimmed.front() == '[') {
    try {
      for (const auto& v : json::parse(trimmed)) out.push_back(v.get<int>());
    } catch (const json::exception& e) {
      throw eva::Error(eva::ErrorKind::malformed_document, path + ": " + e.what());
    }
    return out;
  }
  std::size_t line = 0;
  std::istringstream in(bytes);
  std::string s;
  while (std::getline(in, s)) {
    ++line;
    s = eva::text::normalize_ws(s);
    if (s.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw eva::Error(eva::ErrorKind::malformed_document, path + " line " + std::to_string(line) + ": not an integer");
    }
  }
  return out;
}

int cmd_kappa(const CommonFlags& f, const std::string& a_path, const std::string& b_path, int lo, int hi, int argc,
              char** argv) {
  auto cfg = resolve_config(f, true);
  auto a = read_ratings(a_path), b = read_ratings(b_path);
  const double kappa = eva::stats::cohen_kappa_qw(a, b, lo, hi);
  std::vector<std::size_t> idx(a.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto ci = eva::bootstrap_ci(
      idx,
      [&](const std::vector<std::size_t>& draw) {
        std::vector<int> x, y;
        for (auto i : draw) {
          x.push_back(a[i]);
          y.push_back(b[i]);
        }
        return eva::stats::cohen_kappa_qw(x, y, lo, hi);
      },
      cfg.agreement_bootstrap, cfg.alpha, eva::mix64(cfg.seed), cfg.jobs);
  std::vector<double> da(a.begin(), a.end()), db(b.begin(), b.end());
  json rho = nullptr;
  try {
    rho = eva::stats::spearman_rho(da, db);
  } catch (const eva::Error&) {
  }
  json result = {{"n", a.size()}, {"scale", {lo, hi}}, {"kappa", kappa}, {"kappa_ci", eva::to_json(ci)},
                 {"spearman_rho", rho}};
  const fs::path out(f.out);
  write_report(out, "kappa.json", envelope("kappa", cfg, result));
  if (cfg.format == "csv")
    eva::fixtures::write_text(out / "kappa.csv", csv_join({"n", "kappa", "ci_lo", "ci_hi", "spearman_rho"}) +
                                                     csv_join({std::to_string(a.size()), num(kappa), num(ci.lo),
                                                               num(ci.hi), rho.is_null() ? "" : num(rho.get<double>())}));
  std::cout << "kappa = " << kappa << "\n";
  write_meta(out, "kappa", argc, argv);
  return 0;
}

int cmd_fixtures_gen(const CommonFlags& f, int trials, int scenarios, int scripts, int argc, char** argv) {
  auto cfg = resolve_config(f, true);
  eva::fixtures::SuiteOptions opt;
  opt.trials = trials;
  opt.generic_scenarios = scenarios;
  auto suite = eva::fixtures::generate_scenario_suite(cfg.seed, opt);
  const fs::path out(f.out);
  json manifest_bundles = json::array(), manifest_trials = json::array(), manifest_scripts = json::array();
  for (const auto& b : suite.bundles) {
    eva::fixtures::write_bundle(b, out / "bundles" / b.scenario_id);
    manifest_bundles.push_back({{"scenario_id", b.scenario_id}, {"domain", b.domain},
                                {"dir", "bundles/" + b.scenario_id}});
  }
  for (const auto& t : suite.trials) {
    const auto id = t.conversation.ground_truth["conversation_id"].get<std::string>();
    json meta = {{"system", t.system}, {"pipeline", std::string(eva::to_string(t.pipeline))},
                 {"scenario_id", t.scenario_id}, {"trial_index", t.trial_index}};
    eva::fixtures::write_conversation(t.conversation, meta, out / "conversations" / id);
    manifest_trials.push_back({{"conversation_id", id}, {"dir", "conversations/" + id}, {"system", t.system},
                               {"scenario_id", t.scenario_id}, {"trial_index", t.trial_index},
                               {"mutated", t.mutated},
                               {"expected_task_completion", t.conversation.ground_truth["expected_task_completion"]}});
  }
  // One trial whose planted behavioral verdict fails the validation gate.
  if (!suite.trials.empty()) {
    const auto& t = suite.trials.front();
    const std::string id = "behavioral_fail";
    json meta = {{"system", t.system}, {"pipeline", std::string(eva::to_string(t.pipeline))},
                 {"scenario_id", t.scenario_id}, {"trial_index", t.trial_index}};
    const auto dir = out / "extra" / id;
    eva::fixtures::write_conversation(t.conversation, meta, dir);
    eva::fixtures::write_text(dir / "judge_plan.json",
                              json{{"user_behavioral_fidelity", {{"detected", {"premature_ending"}}}}}.dump(2) + "\n");
    manifest_trials.push_back({{"conversation_id", id}, {"dir", "extra/" + id}, {"system", t.system},
                               {"scenario_id", t.scenario_id}, {"trial_index", t.trial_index},
                               {"expected_decision", "rerun"}});
  }
  for (int i = 0; i < scripts; ++i) {
    const auto seed = eva::mix64(cfg.seed + 0x5c + static_cast<std::uint64_t>(i));
    auto script = eva::fixtures::random_script(seed);
    script.conversation_id = "script_" + std::to_string(i);
    auto g = eva::fixtures::generate_conversation(script);
    eva::fixtures::write_conversation(g, {{"pipeline", std::string(eva::to_string(script.pipeline))}},
                                      out / "scripts" / script.conversation_id);
    manifest_scripts.push_back({{"conversation_id", script.conversation_id},
                                {"dir", "scripts/" + script.conversation_id}, {"seed", seed}});
  }
  write_report(out, "manifest.json", {{"seed", cfg.seed}, {"bundles", manifest_bundles},
                                      {"trials", manifest_trials}, {"scripts", manifest_scripts}});
  std::cout << "wrote " << manifest_bundles.size() << " bundles, " << manifest_trials.size() << " trials, "
            << manifest_scripts.size() << " scripts to " << out.string() << "\n";
  write_meta(out, "fixtures-gen", argc, argv);
  return 0;
}

// ---------------------------------------------------------------------------
// Self-test: engine output against fixture ground truth.

struct Check {
  std::size_t conversations = 0;
  std::size_t failures = 0;
  std::vector<std::string> messages;

  void fail(const std::string& msg) {
    ++failures;
    if (messages.size() < 20) messages.push_back(msg);
  }
};

void check_conversation(const std::string& id, const eva::RawLogs& logs, const json& gt, Check& c,
                        const eva::TurnTakingConfig& tt) {
  ++c.conversations;
  const auto pipeline = eva::parse_pipeline(gt.value("pipeline", std::string("cascade"))).value_or(eva::PipelineType::cascade);
  auto conv = eva::reconcile_logs(logs, pipeline);
  if (conv.turns.size() != gt["turn_count"].get<std::size_t>()) {
    c.fail(id + ": turn count " + std::to_string(conv.turns.size()) + " != " + gt["turn_count"].dump());
    return;
  }
  if (json(conv.assistant_interrupted_turns()) != gt["assistant_interrupted_turns"])
    c.fail(id + ": assistant-interrupted turns differ");
  if (json(conv.user_interrupted_turns()) != gt["user_interrupted_turns"]) c.fail(id + ": user-interrupted turns differ");
  if (conv.turns.size() < 2) return;
  auto scores = eva::score_turns(conv.turns, tt);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double want = gt["turns"][i + 1]["expected_score"].get<double>();
    if (std::abs(scores[i].score - want) > 1e-12)
      c.fail(id + ": turn " + std::to_string(i + 1) + " score " + json(scores[i].score).dump() + " != " + json(want).dump());
  }
  const double conv_score = eva::score_conversation(conv.turns, tt).score;
  if (std::abs(conv_score - gt["turn_taking"].get<double>()) > 1e-12) c.fail(id + ": conversation score differs");
}

int cmd_self_test(const CommonFlags& f, int count, const std::string& fixtures_dir, int argc, char** argv) {
  auto cfg = resolve_config(f, fixtures_dir.empty());
  Check c;
  const eva::TurnTakingConfig tt;  // ground truth is planned with the published parameters
  if (!fixtures_dir.empty()) {
    const fs::path root(fixtures_dir);
    auto manifest = eva::read_json_file(root / "manifest.json");
    for (const auto& section : {"trials", "scripts"})
      for (const auto& t : manifest.value(section, json::array())) {
        const fs::path dir = root / t["dir"].get<std::string>();
        check_conversation(t["conversation_id"].get<std::string>(), eva::load_raw_logs(dir),
                           eva::read_json_file(dir / "ground_truth.json"), c, tt);
      }
  } else {
    std::vector<Check> per(static_cast<std::size_t>(count));
    eva::parallel_for(per.size(), cfg.jobs, [&](std::size_t i) {
      const auto seed = eva::mix64(cfg.seed + i);
      auto script = eva::fixtures::random_script(seed);
      script.conversation_id = "script_" + std::to_string(i);
      auto g1 = eva::fixtures::generate_conversation(script);
      auto g2 = eva::fixtures::generate_conversation(script);
      if (g1.logs.audit != g2.logs.audit || g1.logs.framework != g2.logs.framework ||
          g1.logs.audio_bus != g2.logs.audio_bus)
        per[i].fail(script.conversation_id + ": generator is not deterministic");
      check_conversation(script.conversation_id, g1.logs, g1.ground_truth, per[i], tt);
    });
    for (const auto& p : per) {
      c.conversations += p.conversations;
      c.failures += p.failures;
      for (const auto& m : p.messages)
        if (c.messages.size() < 20) c.messages.push_back(m);
    }
  }
  json result = {{"conversations", c.conversations}, {"failures", c.failures}, {"messages", c.messages}};
  std::cout << "self-test: " << c.conversations << " conversations, " << c.failures << " failures\n";
  for (const auto& m : c.messages) std::cout << "  " << m << "\n";
  if (!f.out.empty()) {
    write_report(f.out, "self_test.json", envelope("self-test", cfg, result));
    write_meta(f.out, "self-test", argc, argv);
  }
  return c.failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voice-agent conversation evaluation toolkit"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string pipeline_flag, judge_flag;

  auto* score = app.add_subcommand("score", "score recorded conversations against a scenario bundle");
  std::vector<std::string> conversations;
  std::string bundle, bundles_root;
  std::optional<std::string> system;
  std::optional<int> trial_index;
  add_common(score, f);
  score->add_option("conversations", conversations, "conversation directories")->required()->check(CLI::ExistingDirectory);
  score->add_option("--bundle", bundle, "scenario bundle directory");
  score->add_option("--bundles", bundles_root, "root holding one bundle per scenario id");
  score->add_option("--pipeline", f.pipeline, "pipeline type")->check(CLI::IsMember({"cascade", "hybrid", "s2s"}));
  score->add_option("--judge", f.judge, "mock or cmd:<path>");
  score->add_option("--system", system, "system name recorded in results");
  score->add_option("--trial-index", trial_index, "trial index recorded in results");

  std::vector<std::string> inputs;
  bool include_rerun = false;
  auto* aggregate = app.add_subcommand("aggregate", "pass@1 / pass@k / pass^k with bootstrap intervals");
  add_common(aggregate, f);
  aggregate->add_option("inputs", inputs, "trial result files or directories")->required();
  aggregate->add_flag("--include-rerun", include_rerun, "keep trials whose validation asked for a rerun");

  std::vector<std::string> clean_in, perturbed, metrics;
  auto* compare = app.add_subcommand("compare", "paired perturbation deltas with permutation tests");
  add_common(compare, f);
  compare->add_option("--clean", clean_in, "clean trial results")->required();
  compare->add_option("--perturbed", perturbed, "condition=path, repeatable")->required();
  compare->add_option("--metric", metrics, "restrict to these metrics");

  auto* sweep = app.add_subcommand("sweep", "EVA-X pass@1 across turn-taking thresholds");
  add_common(sweep, f);
  sweep->add_option("inputs", inputs, "trial result files or directories")->required();

  std::string stab_metric = "eva_a";
  auto* stability = app.add_subcommand("stability", "interval width against number of trials");
  add_common(stability, f);
  stability->add_option("inputs", inputs, "trial result files or directories")->required();
  stability->add_option("--metric", stab_metric, "eva_a, eva_x or a sub-metric name");

  std::string ka, kb;
  int klo = 1, khi = 3;
  auto* kappa = app.add_subcommand("kappa", "weighted agreement between two rating files");
  add_common(kappa, f);
  kappa->add_option("--a", ka, "first rating file")->required()->check(CLI::ExistingFile);
  kappa->add_option("--b", kb, "second rating file")->required()->check(CLI::ExistingFile);
  kappa->add_option("--min", klo, "lowest category");
  kappa->add_option("--max", khi, "highest category");

  int fx_trials = 3, fx_scenarios = 3, fx_scripts = 20;
  auto* fixtures_gen = app.add_subcommand("fixtures-gen", "write synthetic bundles and conversations");
  add_common(fixtures_gen, f);
  fixtures_gen->add_option("--trials", fx_trials, "trials per scenario and system")->check(CLI::PositiveNumber);
  fixtures_gen->add_option("--scenarios", fx_scenarios, "generic scenarios besides 1.2.1")->check(CLI::NonNegativeNumber);
  fixtures_gen->add_option("--scripts", fx_scripts, "random timing scripts")->check(CLI::NonNegativeNumber);

  int st_count = 200;
  std::string st_fixtures;
  auto* self_test = app.add_subcommand("self-test", "check the engine against generated ground truth");
  add_common(self_test, f, false);
  self_test->add_option("--count", st_count, "random scripts to generate")->check(CLI::PositiveNumber);
  self_test->add_option("--fixtures", st_fixtures, "check an existing fixtures-gen directory instead")
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*score) return cmd_score(f, conversations, bundle, bundles_root, system, trial_index, argc, argv);
    if (*aggregate) return cmd_aggregate(f, inputs, include_rerun, argc, argv);
    if (*compare) return cmd_compare(f, clean_in, perturbed, metrics, argc, argv);
    if (*sweep) return cmd_sweep(f, inputs, argc, argv);
    if (*stability) return cmd_stability(f, inputs, stab_metric, argc, argv);
    if (*kappa) return cmd_kappa(f, ka, kb, klo, khi, argc, argv);
    if (*fixtures_gen) return cmd_fixtures_gen(f, fx_trials, fx_scenarios, fx_scripts, argc, argv);
    if (*self_test) return cmd_self_test(f, st_count, st_fixtures, argc, argv);
  } catch (const eva::Error& e) {
    std::cerr << "error [" << eva::to_string(e.kind()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
