#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "eva/aggregate.hpp"
#include "eva/fixtures.hpp"
#include "eva/trial.hpp"

using namespace eva;
namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / ("eva_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

int run(const std::string& args, std::string* err = nullptr) {
  const auto log = work() / "stderr.txt";
  const std::string cmd = std::string(EVA_CLI_PATH) + " " + args + " > /dev/null 2> " + log.string();
  const int status = std::system(cmd.c_str());
  if (err) *err = read_file(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const fs::path& x) { return "'" + x.string() + "'"; }

void write_trial(const fs::path& dir, const std::string& system, const std::string& scenario, int trial, ScoreMap s) {
  TrialResult t;
  t.system = system;
  t.domain = "d";
  t.scenario_id = scenario;
  t.trial_index = trial;
  t.scores = std::move(s);
  t.eva_a = eva_gate(t.scores, EvaDimension::accuracy, {});
  t.eva_x = eva_gate(t.scores, EvaDimension::experience, {});
  fs::create_directories(dir);
  fixtures::write_text(dir / (scenario + "_" + std::to_string(trial) + ".json"), to_json(t).dump());
}

ScoreMap clean_scores(double conciseness) {
  return {{"task_completion", 1.0}, {"faithfulness", 1.0}, {"speech_fidelity", 1.0},
          {"turn_taking", 0.9},     {"conversation_progression", 1.0}, {"conciseness", conciseness}};
}

// Fixtures are generated once; several tests score them.
const fs::path& fixtures_dir() {
  static const fs::path d = [] {
    auto out = work() / "fx";
    EXPECT_EQ(run("fixtures-gen --seed 11 --trials 2 --scenarios 2 --scripts 3 --out " + p(out)), 0);
    return out;
  }();
  return d;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--help"), 0);
  std::string err;
  EXPECT_EQ(run("fixtures-gen --out " + p(work() / "noseed"), &err), 1);
  EXPECT_NE(err.find("--seed"), std::string::npos) << err;
  EXPECT_EQ(run("aggregate --seed 1 --set colour=blue --out " + p(work() / "x") + " " + p(work()), &err), 1);
  EXPECT_NE(err.find("colour"), std::string::npos) << err;
}

TEST(Cli, ScoreExitCodes) {
  const auto& fx = fixtures_dir();
  auto manifest = read_json_file(fx / "manifest.json");
  const auto first = fx / manifest["trials"][0]["dir"].get<std::string>();
  EXPECT_EQ(run("score --bundles " + p(fx / "bundles") + " --out " + p(work() / "s0") + " " + p(first)), 0);
  auto report = read_json_file(work() / "s0" / (first.filename().string() + ".json"));
  EXPECT_TRUE(report.contains("eva_a"));
  EXPECT_EQ(report["validation"]["decision"], "accept");

  EXPECT_EQ(run("score --bundles " + p(fx / "bundles") + " --out " + p(work() / "s1") + " " +
                p(fx / "extra" / "behavioral_fail")),
            2);
  EXPECT_EQ(run("score --bundle " + p(work() / "missing_bundle") + " --out " + p(work() / "s2") + " " + p(first)), 1);
}

TEST(Cli, ScoreMatchesFixtureLabels) {
  const auto& fx = fixtures_dir();
  auto manifest = read_json_file(fx / "manifest.json");
  std::string dirs;
  for (const auto& t : manifest["trials"])
    if (!t.contains("expected_decision")) dirs += " " + p(fx / t["dir"].get<std::string>());
  ASSERT_EQ(run("score --jobs 3 --bundles " + p(fx / "bundles") + " --out " + p(work() / "all") + dirs), 0);
  for (const auto& t : manifest["trials"]) {
    if (t.contains("expected_decision")) continue;
    auto r = read_json_file(work() / "all" / (t["conversation_id"].get<std::string>() + ".json"));
    EXPECT_EQ(r["scores"]["task_completion"], t["expected_task_completion"]) << t["conversation_id"];
  }
  EXPECT_EQ(run("self-test --fixtures " + p(fx)), 0);
  EXPECT_EQ(run("self-test --seed 3 --count 50"), 0);
}

TEST(Cli, AggregateIsByteIdenticalAcrossRunsAndJobs) {
  auto dir = work() / "agg_in";
  for (int s = 0; s < 4; ++s)
    for (int k = 0; k < 3; ++k) write_trial(dir, "sys", "sc" + std::to_string(s), k, clean_scores((s + k) % 3 ? 1 : 0.2));
  ASSERT_EQ(run("aggregate --seed 5 --out " + p(work() / "agg1") + " " + p(dir)), 0);
  ASSERT_EQ(run("aggregate --seed 5 --jobs 4 --out " + p(work() / "agg2") + " " + p(dir)), 0);
  ASSERT_EQ(run("aggregate --seed 6 --out " + p(work() / "agg3") + " " + p(dir)), 0);
  const auto a = read_file(work() / "agg1" / "aggregate.json");
  auto b = read_json_file(work() / "agg2" / "aggregate.json");
  auto ja = json::parse(a);
  EXPECT_EQ(ja["result"], b["result"]);
  EXPECT_EQ(read_file(work() / "agg1" / "aggregate.csv"), read_file(work() / "agg2" / "aggregate.csv"));
  ASSERT_EQ(run("aggregate --seed 5 --out " + p(work() / "agg4") + " " + p(dir)), 0);
  EXPECT_EQ(a, read_file(work() / "agg4" / "aggregate.json"));
  EXPECT_NE(a, read_file(work() / "agg3" / "aggregate.json"));
  EXPECT_EQ(ja["seed"], 5);
  EXPECT_TRUE(fs::exists(work() / "agg1" / "aggregate.meta.json"));
}

TEST(Cli, AggregateSingleTrial) {
  auto dir = work() / "one";
  write_trial(dir, "sys", "only", 0, clean_scores(1.0));
  ASSERT_EQ(run("aggregate --seed 1 --out " + p(work() / "one_out") + " " + p(dir)), 0);
  auto r = read_json_file(work() / "one_out" / "aggregate.json")["result"]["systems"]["sys"]["eva_a"]["pooled"];
  EXPECT_EQ(r["pass_at_1"]["point"], 1.0);
  EXPECT_EQ(r["pass_at_k"]["point"], 1.0);
  EXPECT_EQ(r["pass_pow_k"]["point"], 1.0);
  EXPECT_EQ(run("aggregate --seed 1 --out " + p(work() / "none_out") + " " + p(work() / "empty_dir_missing")), 1);
}

TEST(Cli, CompareFindsPlantedShift) {
  auto clean = work() / "clean", pert = work() / "pert";
  for (int s = 0; s < 10; ++s) {
    write_trial(clean, "sys", "sc" + std::to_string(s), 0, clean_scores(0.9));
    write_trial(pert, "sys", "sc" + std::to_string(s), 0, clean_scores(0.7));
  }
  ASSERT_EQ(run("compare --seed 2 --clean " + p(clean) + " --perturbed noise=" + p(pert) + " --perturbed same=" +
                p(clean) + " --out " + p(work() / "cmp")),
            0);
  auto fam = read_json_file(work() / "cmp" / "compare.json")["result"]["families"];
  int checked = 0;
  for (const auto& f : fam) {
    for (const auto& c : f["conditions"]) {
      const bool shifted = f["metric"] == "conciseness" && c["condition"] == "noise";
      if (shifted) {
        EXPECT_NEAR(c["mean_delta"].get<double>(), -0.2, 1e-12);
        EXPECT_EQ(c["p_value"], 2.0 / 1024.0);
        EXPECT_EQ(c["p_holm"], 4.0 / 1024.0);
        EXPECT_EQ(c["stars"], "**");
        ++checked;
      } else {
        EXPECT_EQ(c["mean_delta"], 0.0);
        EXPECT_EQ(c["p_value"], 1.0);
        EXPECT_EQ(c["stars"], "");
      }
    }
  }
  EXPECT_EQ(checked, 1);
}

TEST(Cli, SweepStabilityKappa) {
  auto dir = work() / "sw";
  for (int s = 0; s < 3; ++s)
    for (int k = 0; k < 3; ++k) {
      auto all_pass = clean_scores(1.0);
      all_pass["turn_taking"] = 1.0;
      write_trial(dir, "sys", "sc" + std::to_string(s), k, all_pass);
    }
  ASSERT_EQ(run("sweep --out " + p(work() / "sw_out") + " " + p(dir)), 0);
  auto curve = read_json_file(work() / "sw_out" / "sweep.json")["result"]["eva_x_pass_at_1"]["sys"];
  ASSERT_EQ(curve.size(), 10u);
  for (const auto& v : curve) EXPECT_EQ(v, 1.0);

  ASSERT_EQ(run("stability --seed 4 --set stability.k_grid=1,3 --out " + p(work() / "st_out") + " " + p(dir)), 0);
  auto pts = read_json_file(work() / "st_out" / "stability.json")["result"]["systems"]["sys"];
  EXPECT_EQ(pts[1]["k"], 3);
  EXPECT_EQ(pts[1]["width"], 0.0);

  fixtures::write_text(work() / "ra.txt", "1\n2\n3\n3\n2\n");
  ASSERT_EQ(run("kappa --seed 1 --a " + p(work() / "ra.txt") + " --b " + p(work() / "ra.txt") + " --out " +
                p(work() / "k_out")),
            0);
  EXPECT_EQ(read_json_file(work() / "k_out" / "kappa.json")["result"]["kappa"], 1.0);
  fixtures::write_text(work() / "bad.txt", "1\nx\n");
  EXPECT_EQ(run("kappa --seed 1 --a " + p(work() / "ra.txt") + " --b " + p(work() / "bad.txt") + " --out " +
                p(work() / "k_bad")),
            1);
}
