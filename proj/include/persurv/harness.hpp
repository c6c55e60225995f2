#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "persurv/bilevel.hpp"
#include "persurv/policy.hpp"
#include "persurv/training.hpp"

namespace persurv {

using ojson = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "0.3.0";
// Longest mission period (minutes) allowed without `full_period`.
inline constexpr double kDeskMissionPeriodMin = 200.0;

struct ManifestOutput {
  std::string path;  // relative to the output directory
  std::string crc32;
  std::uintmax_t size = 0;
  // Wall-clock measurements; regenerated on replay but not compared.
  bool volatile_content = false;
};

struct RunManifest {
  std::string command;
  ojson config;
  std::vector<std::uint64_t> seeds;
  std::string tool_version = kToolVersion;
  std::map<std::string, std::string> input_hashes;  // path as given -> crc32
  std::vector<ManifestOutput> outputs;
};

ojson manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const ojson& j);
RunManifest load_manifest(const std::filesystem::path& path);

// Derived per-item seed (splitmix64 over the pair).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// "U15G5" -> {15 aerial, 5 ground}.
std::pair<int, int> parse_size(const std::string& label);

struct GenerateOptions {
  std::uint64_t seed = 1;
  std::string distribution = "uniform";
  double radius = 4000.0;
  std::vector<std::string> sizes{"U15G5"};
  int count = 30;
  double mission_period_min = kDeskMissionPeriodMin;
  bool full_period = false;
};

struct PlanOptions {
  std::uint64_t seed = 1;
  std::vector<std::string> scenarios;  // files or directories
  // TS, SA, GLS, policy-greedy or policy-sample-N
  std::string method = "TS";
  std::string params;
  int iterations = 10000;
  double penalty_scale = 1.0;
  double mission_period_min = 0.0;  // 0 keeps each scenario's own
  bool full_period = false;
  int threads = 1;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  bool toy = false;
  int epochs = 100;
  int batches = 200;
  int batch_size = 256;
  double lr = 1e-4;
  double decay = 0.995;
  std::string distribution = "uniform";
  double radius = 4000.0;
  int n_aerial = 15;
  int n_ground = 5;
  double mission_period_min = 400.0;
  int d_h = 128;
  int heads = 8;
  int layers = 3;
  int d_ff = 512;
  double clip = 10.0;
  bool head_projection = true;
  bool adam = true;
  int probe_size = 64;
  double significance = 0.05;
  bool terminal_gap_reward = false;
  bool resume = false;
};

// Preset matching toy_train_config().
TrainOptions toy_train_options();
TrainConfig to_train_config(const TrainOptions& o);

struct CompareOptions {
  std::vector<std::string> runs;  // plan output directories
};

struct PriorityOptions {
  std::uint64_t seed = 1;
  std::string scenario;
  std::string weights;  // {"weights": {"<point id>": w, ...}}
  std::vector<double> s_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::string method = "TS";
  std::string params;
  int iterations = 10000;
  double penalty_scale = 1.0;
};

void to_json(ojson& j, const GenerateOptions& o);
void from_json(const ojson& j, GenerateOptions& o);
void to_json(ojson& j, const PlanOptions& o);
void from_json(const ojson& j, PlanOptions& o);
void to_json(ojson& j, const TrainOptions& o);
void from_json(const ojson& j, TrainOptions& o);
void to_json(ojson& j, const CompareOptions& o);
void from_json(const ojson& j, CompareOptions& o);
void to_json(ojson& j, const PriorityOptions& o);
void from_json(const ojson& j, PriorityOptions& o);

struct MethodSpec {
  std::string name;
  bool policy = false;
  int samples = 0;  // 0: greedy
  Metaheuristic metaheuristic = Metaheuristic::kTabu;
};

MethodSpec parse_method(const std::string& name);

struct MethodSettings {
  int iterations = 10000;
  double penalty_scale = 1.0;
  std::uint64_t seed = 0;
  const PolicyParams* params = nullptr;
};

struct MethodRun {
  EpisodeLog log;
  std::vector<HorizonPlan> cycles;  // planner methods only
};

// One mission on `s` with priority scale S. Policy methods need
// `settings.params`.
MethodRun run_method(const ScenarioInstance& s, const MethodSpec& m, const MethodSettings& settings,
                     double priority_scale = 0.0);

struct ComparisonRow {
  std::string method;
  double objective = 0.0;  // mean score
  double runtime = 0.0;    // mean seconds per instance
  double gap = 0.0;        // percent over the best objective in the table
};

struct MethodSummary {
  std::string method;
  std::vector<std::string> instance_hashes;
  double mission_period = 0.0;
  double mean_score = 0.0;
  double mean_runtime = 0.0;
};

// Throws kInstanceSetMismatch unless every summary covers the same instances.
std::vector<ComparisonRow> compare_methods(const std::vector<MethodSummary>& methods);
std::string comparison_table(const std::vector<ComparisonRow>& rows);

struct PriorityPoint {
  int id = 0;
  double weight = 1.0;
  double max_age_weighted = 0.0;  // run with the weights at the best S
  double max_age_uniform = 0.0;   // same seed, every weight 1
};

struct PriorityReport {
  std::vector<double> s_grid;
  std::vector<double> objectives;  // weighted score per S
  double best_s = 0.0;
  std::vector<PriorityPoint> points;
  std::vector<EpisodeLog> logs;  // one per S
  EpisodeLog uniform_log;
};

// `weights` maps external point ids to priority weights (others stay 1).
PriorityReport priority_sweep(const ScenarioInstance& s, const std::map<int, double>& weights,
                              const std::vector<double>& s_grid, const MethodSpec& m,
                              const MethodSettings& settings);

// Commands. Each writes its outputs and manifest.json under `out`; `log`
// receives progress lines.
using LogFn = std::function<void(const std::string&)>;

RunManifest cmd_generate(const GenerateOptions& o, const std::filesystem::path& out, const LogFn& log = {});
RunManifest cmd_plan(const PlanOptions& o, const std::filesystem::path& out, const LogFn& log = {});
RunManifest cmd_train(const TrainOptions& o, const std::filesystem::path& out, const LogFn& log = {});
RunManifest cmd_compare(const CompareOptions& o, const std::filesystem::path& out, const LogFn& log = {});
RunManifest cmd_priority(const PriorityOptions& o, const std::filesystem::path& out, const LogFn& log = {});

// Dispatches on the manifest's command name.
RunManifest run_command(const std::string& command, const ojson& config, const std::filesystem::path& out,
                        const LogFn& log = {});

struct ReplayReport {
  RunManifest replayed;
  std::vector<std::string> mismatches;  // outputs whose bytes differ
  bool identical() const { return mismatches.empty(); }
};

// Re-runs a manifest into `out` and compares every non-volatile output.
// Throws kValidation when an input file no longer matches its hash.
ReplayReport replay_manifest(const RunManifest& m, const std::filesystem::path& out, const LogFn& log = {});

// Scenario files named by `paths` (directories expand to their *.json files,
// sorted, manifest.json excluded).
std::vector<std::filesystem::path> expand_scenario_paths(const std::vector<std::string>& paths);

}  // namespace persurv
