#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "persurv/harness.hpp"
#include "persurv/io.hpp"

namespace persurv {
namespace {

namespace fs = std::filesystem;

// Fresh scratch directory removed at scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("persurv_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ojson read_json(const fs::path& p) { return ojson::parse(read_file(p)); }

GenerateOptions small_generate() {
  GenerateOptions g;
  g.sizes = {"U3G2"};
  g.count = 3;
  g.seed = 11;
  return g;
}

PlanOptions small_plan(const fs::path& scenarios, const std::string& method) {
  PlanOptions p;
  p.scenarios = {scenarios.string()};
  p.method = method;
  p.iterations = 300;
  return p;
}

TEST(Harness, ParseSizeAndMethod) {
  EXPECT_EQ(parse_size("U15G5"), std::make_pair(15, 5));
  EXPECT_EQ(parse_size("U75G25"), std::make_pair(75, 25));
  EXPECT_THROW(parse_size("15G5"), Error);
  EXPECT_TRUE(parse_method("policy-greedy").policy);
  EXPECT_EQ(parse_method("policy-sample-1024").samples, 1024);
  EXPECT_EQ(parse_method("GLS").metaheuristic, Metaheuristic::kGuidedLocalSearch);
  EXPECT_THROW(parse_method("policy-sample-0"), Error);
  EXPECT_THROW(parse_method("greedy"), Error);
}

TEST(Harness, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, 0), derive_seed(1, 0));
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}

TEST(Harness, OptionsRejectUnknownKeysAndWrongTypes) {
  ojson j = PlanOptions{};
  j["iteratons"] = 5;
  EXPECT_THROW(j.get<PlanOptions>(), Error);
  ojson k = GenerateOptions{};
  k["count"] = "thirty";
  EXPECT_THROW(k.get<GenerateOptions>(), Error);
  const TrainOptions t = ojson(toy_train_options()).get<TrainOptions>();
  EXPECT_EQ(to_train_config(t).hyper, toy_hyper());
  EXPECT_EQ(to_train_config(t).mission_period, toy_train_config().mission_period);
}

TEST(Compare, GapAgainstTheBestRow) {
  const std::vector<ComparisonRow> rows =
      compare_methods({{"DRL", {"a", "b"}, 6000, 2.7, 0.1}, {"TS", {"b", "a"}, 6000, 3.1, 2.0}});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].gap, 0.0);
  EXPECT_NEAR(rows[1].gap, 14.81, 0.01);
  const std::string table = comparison_table(rows);
  for (const char* col : {"Method", "Obj", "Gap (%)", "Time (s)"}) EXPECT_NE(table.find(col), std::string::npos);
}

TEST(Compare, SingleMethodHasZeroGap) {
  const auto rows = compare_methods({{"TS", {"a"}, 6000, 4.2, 1.0}});
  EXPECT_EQ(rows.front().gap, 0.0);
}

TEST(Compare, MismatchedInstancesAreRejected) {
  try {
    compare_methods({{"TS", {"a", "b"}, 6000, 1.0, 0.0}, {"SA", {"a", "c"}, 6000, 1.0, 0.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInstanceSetMismatch);
  }
  EXPECT_THROW(compare_methods({{"TS", {"a"}, 6000, 1.0, 0.0}, {"SA", {"a"}, 12000, 1.0, 0.0}}), Error);
}

TEST(Generate, WritesCountFilesPerSizeDeterministically) {
  TempDir a("gen_a"), b("gen_b");
  GenerateOptions g = small_generate();
  g.sizes = {"U3G2", "U4G2"};
  const RunManifest m = cmd_generate(g, a.path);
  cmd_generate(g, b.path);
  EXPECT_EQ(m.outputs.size(), 6u);
  EXPECT_EQ(m.seeds.size(), 6u);
  for (const ManifestOutput& o : m.outputs) {
    EXPECT_EQ(read_file(a.path / o.path), read_file(b.path / o.path)) << o.path;
  }
  const ScenarioInstance s = load_scenario(a.path / "U4G2" / "U4G2_002.json");
  EXPECT_EQ(s.aerial_count(), 4u);
  EXPECT_EQ(s.ground_count(), 2u);
  EXPECT_EQ(s.mission_period, kDeskMissionPeriodMin * 60.0);
  EXPECT_TRUE(fs::exists(a.path / "manifest.json"));
}

TEST(Generate, LongMissionsNeedTheFullPeriodFlag) {
  TempDir d("gen_long");
  GenerateOptions g = small_generate();
  g.mission_period_min = 1000;
  EXPECT_THROW(cmd_generate(g, d.path), Error);
  g.full_period = true;
  std::vector<std::string> lines;
  cmd_generate(g, d.path, [&](const std::string& l) { lines.push_back(l); });
  ASSERT_FALSE(lines.empty());
  EXPECT_NE(lines.front().find("warning"), std::string::npos);
}

TEST(Plan, ScoresMatchTheReceedingHorizonOracleAndTheLogs) {
  TempDir d("plan_ts");
  cmd_generate(small_generate(), d.path / "gen");
  const PlanOptions p = small_plan(d.path / "gen", "TS");
  const RunManifest m = cmd_plan(p, d.path / "ts");
  const ojson summary = read_json(d.path / "ts" / "summary.json");
  ASSERT_EQ(summary["instances"].size(), 3u);
  const auto files = expand_scenario_paths(p.scenarios);
  for (std::size_t i = 0; i < files.size(); ++i) {
    const ojson& row = summary["instances"][i];
    const double score = row["score"].get<double>();
    const EpisodeLog log =
        episode_from_jsonl(read_file(d.path / "ts" / "logs" / (row["name"].get<std::string>() + ".jsonl")));
    EXPECT_NEAR(episode_score(log, false), score, 1e-9);

    PlannerConfig cfg;
    cfg.iterations = p.iterations;
    cfg.seed = m.seeds[i];
    const RecedingResult oracle = run_receding_horizon(load_scenario(files[i]), cfg);
    EXPECT_NEAR(episode_score(oracle.log, false), score, 1e-9);
  }
  EXPECT_TRUE(fs::exists(d.path / "ts" / "sorties" / "U3G2_000.json"));
  bool timing_volatile = false;
  for (const ManifestOutput& o : m.outputs) timing_volatile |= o.path == "timing.json" && o.volatile_content;
  EXPECT_TRUE(timing_volatile);
}

TEST(Plan, PolicyMethodsNeedParameters) {
  TempDir d("plan_noparams");
  cmd_generate(small_generate(), d.path / "gen");
  try {
    cmd_plan(small_plan(d.path / "gen", "policy-greedy"), d.path / "pg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
  }
}

TEST(Plan, PolicyGreedyIsRepeatableAndLargerPoolsNeverLose) {
  TempDir d("plan_policy");
  cmd_generate(small_generate(), d.path / "gen");
  save_params(init_params(5, toy_hyper()), d.path / "policy.bin");
  PlanOptions p = small_plan(d.path / "gen", "policy-greedy");
  p.params = (d.path / "policy.bin").string();
  cmd_plan(p, d.path / "g1");
  p.threads = 2;
  cmd_plan(p, d.path / "g2");
  EXPECT_EQ(read_file(d.path / "g1" / "summary.json"), read_file(d.path / "g2" / "summary.json"));

  p.method = "policy-sample-8";
  cmd_plan(p, d.path / "s8");
  p.method = "policy-sample-64";
  cmd_plan(p, d.path / "s64");
  const ojson small = read_json(d.path / "s8" / "summary.json");
  const ojson large = read_json(d.path / "s64" / "summary.json");
  for (std::size_t i = 0; i < small["instances"].size(); ++i) {
    EXPECT_LE(large["instances"][i]["score"].get<double>(), small["instances"][i]["score"].get<double>() + 1e-9);
  }
}

TEST(CompareCommand, TableOverPlanRunsAndInstanceGuard) {
  TempDir d("cmp");
  cmd_generate(small_generate(), d.path / "gen");
  cmd_plan(small_plan(d.path / "gen", "TS"), d.path / "ts");
  cmd_plan(small_plan(d.path / "gen", "SA"), d.path / "sa");
  const RunManifest m = cmd_compare({{(d.path / "ts").string(), (d.path / "sa").string()}}, d.path / "cmp");
  const ojson doc = read_json(d.path / "cmp" / "comparison.json");
  ASSERT_EQ(doc["rows"].size(), 2u);
  bool has_zero = false;
  for (const ojson& r : doc["rows"]) has_zero |= r["gap_percent"].get<double>() == 0.0;
  EXPECT_TRUE(has_zero);
  EXPECT_EQ(m.input_hashes.size(), 4u);

  GenerateOptions other = small_generate();
  other.seed = 12;
  cmd_generate(other, d.path / "gen2");
  cmd_plan(small_plan(d.path / "gen2", "TS"), d.path / "ts2");
  try {
    cmd_compare({{(d.path / "ts").string(), (d.path / "ts2").string()}}, d.path / "cmp2");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInstanceSetMismatch);
  }
}

TEST(Priority, UniformWeightsMakeTheObjectiveIndependentOfS) {
  const ScenarioInstance s = testing::random_scenario(4, 2, 3, 6000.0);
  MethodSettings settings;
  settings.iterations = 300;
  const PriorityReport r = priority_sweep(s, {}, PriorityOptions{}.s_grid, parse_method("TS"), settings);
  ASSERT_EQ(r.objectives.size(), 5u);
  for (double o : r.objectives) EXPECT_EQ(o, r.objectives.front());
  EXPECT_NE(std::find(r.s_grid.begin(), r.s_grid.end(), 0.75), r.s_grid.end());
  EXPECT_EQ(r.best_s, 0.0);
}

TEST(Priority, ReportsWeightsAndValidatesThem) {
  const ScenarioInstance s = testing::random_scenario(4, 2, 4, 6000.0);
  MethodSettings settings;
  settings.iterations = 300;
  const int id = s.points.back().id;
  const PriorityReport r = priority_sweep(s, {{id, 1.5}}, {0.0, 0.75}, parse_method("TS"), settings);
  EXPECT_EQ(r.points.back().weight, 1.5);
  EXPECT_EQ(r.objectives.size(), 2u);
  EXPECT_THROW(priority_sweep(s, {{id, 0.0}}, {0.75}, parse_method("TS"), settings), Error);
  EXPECT_THROW(priority_sweep(s, {{9999, 1.5}}, {0.75}, parse_method("TS"), settings), Error);
  EXPECT_THROW(priority_sweep(s, {}, {1.5}, parse_method("TS"), settings), Error);
}

TEST(Train, MetricsRowsAndResume) {
  TempDir d("train");
  TrainOptions o = toy_train_options();
  o.epochs = 3;
  o.batches = 2;
  o.batch_size = 4;
  o.probe_size = 4;
  cmd_train(o, d.path / "straight");
  const std::string metrics = read_file(d.path / "straight" / "metrics.jsonl");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), o.epochs * o.batches);
  EXPECT_TRUE(fs::exists(d.path / "straight" / "checkpoints" / "epoch_0002" / "state.json"));

  TrainOptions first = o;
  first.epochs = 1;
  cmd_train(first, d.path / "resumed");
  TrainOptions rest = o;
  rest.resume = true;
  cmd_train(rest, d.path / "resumed");
  EXPECT_EQ(read_file(d.path / "resumed" / "metrics.jsonl"), metrics);
  EXPECT_EQ(read_file(d.path / "resumed" / "policy.bin"), read_file(d.path / "straight" / "policy.bin"));
}

TEST(Replay, ManifestsReproduceTheirOutputs) {
  TempDir d("replay");
  const RunManifest gen = cmd_generate(small_generate(), d.path / "gen");
  EXPECT_TRUE(replay_manifest(load_manifest(d.path / "gen" / "manifest.json"), d.path / "gen_r").identical());
  const RunManifest plan = cmd_plan(small_plan(d.path / "gen", "GLS"), d.path / "gls");
  EXPECT_TRUE(replay_manifest(plan, d.path / "gls_r").identical());
  const RunManifest cmp = cmd_compare({{(d.path / "gls").string()}}, d.path / "cmp");
  EXPECT_TRUE(replay_manifest(cmp, d.path / "cmp_r").identical());

  RunManifest tampered = plan;
  tampered.outputs.front().crc32 = "00000000";
  EXPECT_FALSE(replay_manifest(tampered, d.path / "gls_t").identical());

  write_file_atomic(d.path / "gen" / "U3G2" / "U3G2_000.json", "{}");
  EXPECT_THROW(replay_manifest(plan, d.path / "gls_x"), Error);
}

TEST(Replay, ManifestJsonRoundTrip) {
  RunManifest m;
  m.command = "plan";
  m.config = PlanOptions{};
  m.seeds = {1, 2};
  m.input_hashes["a.json"] = "deadbeef";
  m.outputs.push_back({"summary.json", "01234567", 42, false});
  m.outputs.push_back({"timing.json", "89abcdef", 7, true});
  const RunManifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_TRUE(back.outputs[1].volatile_content);
}

}  // namespace
}  // namespace persurv
