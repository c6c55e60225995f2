#include "persurv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "persurv/io.hpp"

namespace persurv {

namespace fs = std::filesystem;

namespace {

void note(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

// Strict reader for option objects: wrong types and unknown keys are
// validation errors naming the key.
class OptionReader {
 public:
  OptionReader(const ojson& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j.is_object()) throw Error(ErrorCode::kValidation, context_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& value) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      value = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kValidation, context_ + "." + key + ": wrong type");
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error(ErrorCode::kValidation, context_ + "." + item.key() + ": unknown key");
    }
  }

 private:
  const ojson& j_;
  std::string context_;
  std::set<std::string> seen_;
};

template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t extra = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1))) - (n > 0);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < extra; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

class OutputSink {
 public:
  explicit OutputSink(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  void write(const std::string& rel, const std::string& bytes, bool volatile_content = false) {
    write_file_atomic(root_ / rel, bytes);
    record(rel, bytes, volatile_content);
  }

  // Hashes a file some other routine already wrote.
  void adopt(const std::string& rel) { record(rel, read_file(root_ / rel), false); }

  std::vector<ManifestOutput> take() {
    std::sort(outputs_.begin(), outputs_.end(),
              [](const ManifestOutput& a, const ManifestOutput& b) { return a.path < b.path; });
    return std::move(outputs_);
  }

  const fs::path& root() const { return root_; }

 private:
  void record(const std::string& rel, const std::string& bytes, bool volatile_content) {
    std::erase_if(outputs_, [&](const ManifestOutput& o) { return o.path == rel; });
    outputs_.push_back({rel, hex32(crc32_of(bytes)), bytes.size(), volatile_content});
  }

  fs::path root_;
  std::vector<ManifestOutput> outputs_;
};

void finish_manifest(RunManifest& m, OutputSink& sink) {
  m.outputs = sink.take();
  write_file_atomic(sink.root() / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

std::string read_hashed(const fs::path& path, RunManifest& m) {
  std::string bytes = read_file(path);
  m.input_hashes[path.generic_string()] = hex32(crc32_of(bytes));
  return bytes;
}

void check_mission_period(double minutes, bool full_period, const LogFn& log) {
  if (minutes <= kDeskMissionPeriodMin) return;
  if (!full_period) {
    throw Error(ErrorCode::kValidation, "mission_period_min: above " + std::to_string(int(kDeskMissionPeriodMin)) +
                                            " min needs full_period");
  }
  note(log, "warning: mission period of " + std::to_string(minutes) + " min; full-length runs take much longer");
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

const RoadNetwork& default_road() {
  static const RoadNetwork road = build_road_network(default_road_polylines());
  return road;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

ojson manifest_to_json(const RunManifest& m) {
  ojson j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seeds"] = m.seeds;
  j["tool_version"] = m.tool_version;
  j["input_hashes"] = ojson::object();
  for (const auto& [path, crc] : m.input_hashes) j["input_hashes"][path] = crc;
  j["outputs"] = ojson::array();
  for (const ManifestOutput& o : m.outputs) {
    ojson jo;
    jo["path"] = o.path;
    jo["crc32"] = o.crc32;
    jo["size"] = o.size;
    if (o.volatile_content) jo["volatile"] = true;
    j["outputs"].push_back(std::move(jo));
  }
  return j;
}

RunManifest manifest_from_json(const ojson& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.tool_version = j.at("tool_version").get<std::string>();
    for (const auto& item : j.at("input_hashes").items()) m.input_hashes[item.key()] = item.value().get<std::string>();
    for (const ojson& jo : j.at("outputs")) {
      m.outputs.push_back({jo.at("path").get<std::string>(), jo.at("crc32").get<std::string>(),
                           jo.at("size").get<std::uintmax_t>(), jo.value("volatile", false)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("manifest: ") + e.what());
  }
  return m;
}

RunManifest load_manifest(const fs::path& path) {
  try {
    return manifest_from_json(ojson::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, path.string() + ": " + e.what());
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(seed) ^ index);
}

std::pair<int, int> parse_size(const std::string& label) {
  static const std::regex re(R"(U(\d+)G(\d+))");
  std::smatch m;
  if (!std::regex_match(label, m, re)) {
    throw Error(ErrorCode::kValidation, "sizes: expected labels like U15G5, got '" + label + "'");
  }
  return {std::stoi(m[1].str()), std::stoi(m[2].str())};
}

TrainOptions toy_train_options() {
  const TrainConfig c = toy_train_config();
  TrainOptions o;
  o.toy = true;
  o.epochs = c.epochs;
  o.batches = c.batches;
  o.batch_size = c.batch_size;
  o.lr = c.lr;
  o.n_aerial = c.dist.n_aerial;
  o.n_ground = c.dist.n_ground;
  o.mission_period_min = c.mission_period / 60.0;
  o.d_h = c.hyper.d_h;
  o.heads = c.hyper.heads;
  o.layers = c.hyper.layers;
  o.d_ff = c.hyper.d_ff;
  o.probe_size = c.probe_size;
  return o;
}

TrainConfig to_train_config(const TrainOptions& o) {
  TrainConfig c;
  c.toy = o.toy;
  c.seed = o.seed;
  c.epochs = o.epochs;
  c.batches = o.batches;
  c.batch_size = o.batch_size;
  c.lr = o.lr;
  c.decay = o.decay;
  c.dist.kind = distribution_from_string(o.distribution);
  c.dist.radius = o.radius;
  c.dist.n_aerial = o.n_aerial;
  c.dist.n_ground = o.n_ground;
  c.mission_period = o.mission_period_min * 60.0;
  c.hyper.d_h = o.d_h;
  c.hyper.heads = o.heads;
  c.hyper.layers = o.layers;
  c.hyper.d_ff = o.d_ff;
  c.hyper.clip = o.clip;
  c.hyper.head_projection = o.head_projection;
  c.adam = o.adam;
  c.probe_size = o.probe_size;
  c.significance = o.significance;
  c.terminal_gap_reward = o.terminal_gap_reward;
  return c;
}

void to_json(ojson& j, const GenerateOptions& o) {
  j = ojson{{"seed", o.seed},
            {"distribution", o.distribution},
            {"radius", o.radius},
            {"sizes", o.sizes},
            {"count", o.count},
            {"mission_period_min", o.mission_period_min},
            {"full_period", o.full_period}};
}

void from_json(const ojson& j, GenerateOptions& o) {
  OptionReader r(j, "generate");
  r.get("seed", o.seed);
  r.get("distribution", o.distribution);
  r.get("radius", o.radius);
  r.get("sizes", o.sizes);
  r.get("count", o.count);
  r.get("mission_period_min", o.mission_period_min);
  r.get("full_period", o.full_period);
  r.finish();
}

void to_json(ojson& j, const PlanOptions& o) {
  j = ojson{{"seed", o.seed},
            {"scenarios", o.scenarios},
            {"method", o.method},
            {"params", o.params},
            {"iterations", o.iterations},
            {"penalty_scale", o.penalty_scale},
            {"mission_period_min", o.mission_period_min},
            {"full_period", o.full_period},
            {"threads", o.threads}};
}

void from_json(const ojson& j, PlanOptions& o) {
  OptionReader r(j, "plan");
  r.get("seed", o.seed);
  r.get("scenarios", o.scenarios);
  r.get("method", o.method);
  r.get("params", o.params);
  r.get("iterations", o.iterations);
  r.get("penalty_scale", o.penalty_scale);
  r.get("mission_period_min", o.mission_period_min);
  r.get("full_period", o.full_period);
  r.get("threads", o.threads);
  r.finish();
}

void to_json(ojson& j, const TrainOptions& o) {
  j = ojson{{"seed", o.seed},
            {"toy", o.toy},
            {"epochs", o.epochs},
            {"batches", o.batches},
            {"batch_size", o.batch_size},
            {"lr", o.lr},
            {"decay", o.decay},
            {"distribution", o.distribution},
            {"radius", o.radius},
            {"n_aerial", o.n_aerial},
            {"n_ground", o.n_ground},
            {"mission_period_min", o.mission_period_min},
            {"d_h", o.d_h},
            {"heads", o.heads},
            {"layers", o.layers},
            {"d_ff", o.d_ff},
            {"clip", o.clip},
            {"head_projection", o.head_projection},
            {"adam", o.adam},
            {"probe_size", o.probe_size},
            {"significance", o.significance},
            {"terminal_gap_reward", o.terminal_gap_reward},
            {"resume", o.resume}};
}

void from_json(const ojson& j, TrainOptions& o) {
  OptionReader r(j, "train");
  r.get("seed", o.seed);
  r.get("toy", o.toy);
  r.get("epochs", o.epochs);
  r.get("batches", o.batches);
  r.get("batch_size", o.batch_size);
  r.get("lr", o.lr);
  r.get("decay", o.decay);
  r.get("distribution", o.distribution);
  r.get("radius", o.radius);
  r.get("n_aerial", o.n_aerial);
  r.get("n_ground", o.n_ground);
  r.get("mission_period_min", o.mission_period_min);
  r.get("d_h", o.d_h);
  r.get("heads", o.heads);
  r.get("layers", o.layers);
  r.get("d_ff", o.d_ff);
  r.get("clip", o.clip);
  r.get("head_projection", o.head_projection);
  r.get("adam", o.adam);
  r.get("probe_size", o.probe_size);
  r.get("significance", o.significance);
  r.get("terminal_gap_reward", o.terminal_gap_reward);
  r.get("resume", o.resume);
  r.finish();
}

void to_json(ojson& j, const CompareOptions& o) { j = ojson{{"runs", o.runs}}; }

void from_json(const ojson& j, CompareOptions& o) {
  OptionReader r(j, "compare");
  r.get("runs", o.runs);
  r.finish();
}

void to_json(ojson& j, const PriorityOptions& o) {
  j = ojson{{"seed", o.seed},
            {"scenario", o.scenario},
            {"weights", o.weights},
            {"s_grid", o.s_grid},
            {"method", o.method},
            {"params", o.params},
            {"iterations", o.iterations},
            {"penalty_scale", o.penalty_scale}};
}

void from_json(const ojson& j, PriorityOptions& o) {
  OptionReader r(j, "priority");
  r.get("seed", o.seed);
  r.get("scenario", o.scenario);
  r.get("weights", o.weights);
  r.get("s_grid", o.s_grid);
  r.get("method", o.method);
  r.get("params", o.params);
  r.get("iterations", o.iterations);
  r.get("penalty_scale", o.penalty_scale);
  r.finish();
}

MethodSpec parse_method(const std::string& name) {
  MethodSpec m;
  m.name = name;
  if (name == "policy-greedy") {
    m.policy = true;
    return m;
  }
  static const std::regex sample(R"(policy-sample-(\d+))");
  std::smatch match;
  if (std::regex_match(name, match, sample)) {
    m.policy = true;
    m.samples = std::stoi(match[1].str());
    if (m.samples < 1) throw Error(ErrorCode::kValidation, "method: sample count must be at least 1");
    return m;
  }
  try {
    m.metaheuristic = metaheuristic_from_string(name);
  } catch (const Error&) {
    throw Error(ErrorCode::kValidation,
                "method: expected TS, SA, GLS, policy-greedy or policy-sample-N, got '" + name + "'");
  }
  return m;
}

MethodRun run_method(const ScenarioInstance& s, const MethodSpec& m, const MethodSettings& settings,
                     double priority_scale) {
  MethodRun run;
  if (m.policy) {
    if (!settings.params) throw Error(ErrorCode::kValidation, "params: " + m.name + " needs a parameter file");
    const Environment env(s, priority_scale);
    Rng rng(settings.seed);
    Trajectory t = m.samples > 0 ? sample_best(*settings.params, env, m.samples, rng)
                                 : rollout(*settings.params, env, RolloutMode::kGreedy, rng);
    run.log = std::move(t.log);
    return run;
  }
  PlannerConfig cfg;
  cfg.metaheuristic = m.metaheuristic;
  cfg.iterations = settings.iterations;
  cfg.penalty_scale = settings.penalty_scale;
  cfg.seed = settings.seed;
  RecedingResult r = run_receding_horizon(s, cfg, priority_scale);
  run.log = std::move(r.log);
  run.cycles = std::move(r.cycles);
  return run;
}

std::vector<ComparisonRow> compare_methods(const std::vector<MethodSummary>& methods) {
  if (methods.empty()) throw Error(ErrorCode::kValidation, "compare: no methods");
  auto key = [](const MethodSummary& m) {
    std::vector<std::string> k = m.instance_hashes;
    std::sort(k.begin(), k.end());
    return k;
  };
  const std::vector<std::string> reference = key(methods.front());
  for (const MethodSummary& m : methods) {
    if (key(m) != reference || m.mission_period != methods.front().mission_period) {
      throw Error(ErrorCode::kInstanceSetMismatch,
                  m.method + " was run on a different instance set than " + methods.front().method);
    }
  }
  double best = methods.front().mean_score;
  for (const MethodSummary& m : methods) best = std::min(best, m.mean_score);
  std::vector<ComparisonRow> rows;
  for (const MethodSummary& m : methods) {
    rows.push_back({m.method, m.mean_score, m.mean_runtime, m.mean_score == best ? 0.0 : optimality_gap(m.mean_score, best)});
  }
  return rows;
}

std::string comparison_table(const std::vector<ComparisonRow>& rows) {
  std::size_t width = 6;
  for (const ComparisonRow& r : rows) width = std::max(width, r.method.size());
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %10s  %8s  %10s\n", int(width), "Method", "Obj", "Gap (%)", "Time (s)");
  out << buf << std::string(width + 36, '-') << '\n';
  for (const ComparisonRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %10.4f  %8.2f  %10.3f\n", int(width), r.method.c_str(), r.objective, r.gap,
                  r.runtime);
    out << buf;
  }
  return out.str();
}

PriorityReport priority_sweep(const ScenarioInstance& s, const std::map<int, double>& weights,
                              const std::vector<double>& s_grid, const MethodSpec& m,
                              const MethodSettings& settings) {
  if (s_grid.empty()) throw Error(ErrorCode::kValidation, "s_grid: empty");
  for (double S : s_grid) {
    if (!(S >= 0.0 && S <= 1.0)) throw Error(ErrorCode::kValidation, "s_grid: values must lie in [0, 1]");
  }
  ScenarioInstance weighted = s;
  for (const auto& [id, w] : weights) {
    if (!(w > 0.0)) throw Error(ErrorCode::kValidation, "weights." + std::to_string(id) + ": must be positive");
    auto it = std::find_if(weighted.points.begin(), weighted.points.end(),
                           [id = id](const MissionPoint& p) { return p.id == id; });
    if (it == weighted.points.end()) throw Error(ErrorCode::kValidation, "weights." + std::to_string(id) + ": unknown point");
    it->weight = w;
  }
  ScenarioInstance uniform = s;
  for (MissionPoint& p : uniform.points) p.weight = 1.0;

  PriorityReport rep;
  rep.s_grid = s_grid;
  std::size_t best = 0;
  for (std::size_t i = 0; i < s_grid.size(); ++i) {
    MethodRun run = run_method(weighted, m, settings, s_grid[i]);
    rep.objectives.push_back(episode_score(run.log, true));
    if (rep.objectives[i] < rep.objectives[best]) best = i;
    rep.logs.push_back(std::move(run.log));
  }
  rep.best_s = s_grid[best];
  rep.uniform_log = run_method(uniform, m, settings, 0.0).log;
  const double T = s.mission_period;
  const std::vector<double> aw = max_age_per_point(rep.logs[best], T);
  const std::vector<double> au = max_age_per_point(rep.uniform_log, T);
  for (std::size_t k = 0; k < s.points.size(); ++k) {
    rep.points.push_back({weighted.points[k].id, weighted.points[k].weight, aw[k], au[k]});
  }
  return rep;
}

std::vector<fs::path> expand_scenario_paths(const std::vector<std::string>& paths) {
  std::vector<fs::path> out;
  for (const std::string& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::recursive_directory_iterator(p)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json" &&
            entry.path().filename() != "manifest.json") {
          found.push_back(entry.path());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p)) {
      out.emplace_back(p);
    } else {
      throw Error(ErrorCode::kIo, "no such scenario file or directory: " + p);
    }
  }
  return out;
}

RunManifest cmd_generate(const GenerateOptions& o, const fs::path& out, const LogFn& log) {
  if (o.count < 1) throw Error(ErrorCode::kValidation, "count: must be at least 1");
  if (o.sizes.empty()) throw Error(ErrorCode::kValidation, "sizes: empty");
  check_mission_period(o.mission_period_min, o.full_period, log);
  DistributionConfig dist;
  dist.kind = distribution_from_string(o.distribution);
  dist.radius = o.radius;

  RunManifest m;
  m.command = "generate";
  m.config = o;
  OutputSink sink(out);
  for (std::size_t z = 0; z < o.sizes.size(); ++z) {
    std::tie(dist.n_aerial, dist.n_ground) = parse_size(o.sizes[z]);
    for (int i = 0; i < o.count; ++i) {
      dist.seed = derive_seed(derive_seed(o.seed, z), static_cast<std::uint64_t>(i));
      m.seeds.push_back(dist.seed);
      const ScenarioInstance s = sample_scenario(dist, default_road(), VehicleParams{}, o.mission_period_min * 60.0);
      char name[64];
      std::snprintf(name, sizeof name, "%s/%s_%03d.json", o.sizes[z].c_str(), o.sizes[z].c_str(), i);
      sink.write(name, scenario_to_json(s));
    }
    note(log, "generated " + std::to_string(o.count) + " " + o.sizes[z] + " scenarios");
  }
  finish_manifest(m, sink);
  return m;
}

RunManifest cmd_plan(const PlanOptions& o, const fs::path& out, const LogFn& log) {
  const MethodSpec method = parse_method(o.method);
  if (o.iterations < 1) throw Error(ErrorCode::kValidation, "iterations: must be at least 1");
  if (o.mission_period_min < 0.0) throw Error(ErrorCode::kValidation, "mission_period_min: must be non-negative");
  check_mission_period(o.mission_period_min, o.full_period, log);
  const std::vector<fs::path> files = expand_scenario_paths(o.scenarios);
  if (files.empty()) throw Error(ErrorCode::kValidation, "scenarios: no scenario files");

  RunManifest m;
  m.command = "plan";
  m.config = o;
  std::optional<PolicyParams> params;
  if (method.policy) {
    if (o.params.empty()) throw Error(ErrorCode::kValidation, "params: " + method.name + " needs a parameter file");
    params = params_from_bytes(read_hashed(o.params, m));
  }

  std::vector<ScenarioInstance> scenarios;
  std::vector<std::string> names, hashes;
  std::set<std::string> unique;
  for (const fs::path& f : files) {
    const std::string bytes = read_hashed(f, m);
    ScenarioInstance s = scenario_from_json(bytes);
    if (o.mission_period_min > 0.0) s.mission_period = o.mission_period_min * 60.0;
    validate(s);
    if (s.mission_period > kDeskMissionPeriodMin * 60.0 && !o.full_period) {
      throw Error(ErrorCode::kValidation, f.string() + ": mission period above " +
                                              std::to_string(int(kDeskMissionPeriodMin)) + " min needs full_period");
    }
    names.push_back(f.stem().string());
    if (!unique.insert(names.back()).second) {
      throw Error(ErrorCode::kValidation, "scenarios: duplicate file name " + names.back());
    }
    hashes.push_back(hex32(crc32_of(bytes)));
    scenarios.push_back(std::move(s));
  }

  const std::size_t n = scenarios.size();
  std::vector<MethodRun> runs(n);
  std::vector<double> seconds(n);
  for (std::size_t i = 0; i < n; ++i) m.seeds.push_back(derive_seed(o.seed, i));
  parallel_for(n, o.threads, [&](std::size_t i) {
    MethodSettings settings{o.iterations, o.penalty_scale, m.seeds[i], params ? &*params : nullptr};
    const auto t0 = std::chrono::steady_clock::now();
    runs[i] = run_method(scenarios[i], method, settings);
    seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  OutputSink sink(out);
  ojson summary;
  summary["method"] = method.name;
  summary["instances"] = ojson::array();
  ojson timing;
  timing["instances"] = ojson::array();
  std::vector<double> scores;
  for (std::size_t i = 0; i < n; ++i) {
    sink.write("logs/" + names[i] + ".jsonl", episode_to_jsonl(runs[i].log));
    if (!method.policy) sink.write("sorties/" + names[i] + ".json", sorties_to_json(scenarios[i], runs[i].cycles));
    const double score = episode_score(runs[i].log, false);
    scores.push_back(score);
    ojson row;
    row["name"] = names[i];
    row["scenario"] = files[i].generic_string();
    row["input_hash"] = hashes[i];
    row["mission_period_s"] = scenarios[i].mission_period;
    row["score"] = score;
    row["weighted_score"] = episode_score(runs[i].log, true);
    summary["instances"].push_back(std::move(row));
    timing["instances"].push_back({{"name", names[i]}, {"seconds", seconds[i]}});
  }
  const double mean = mean_of(scores);
  double var = 0.0;
  for (double x : scores) var += (x - mean) * (x - mean);
  summary["count"] = n;
  summary["mean_score"] = mean;
  summary["std_score"] = n > 1 ? std::sqrt(var / double(n - 1)) : 0.0;
  timing["mean_seconds"] = mean_of(seconds);
  sink.write("summary.json", summary.dump(2) + "\n");
  sink.write("timing.json", timing.dump(2) + "\n", true);
  note(log, method.name + ": " + std::to_string(n) + " instances, mean score " + format_number(mean));
  finish_manifest(m, sink);
  return m;
}

RunManifest cmd_train(const TrainOptions& o, const fs::path& out, const LogFn& log) {
  const TrainConfig cfg = to_train_config(o);
  validate(cfg);
  RunManifest m;
  m.command = "train";
  m.config = o;
  m.seeds = {o.seed};
  OutputSink sink(out);
  const fs::path ckpt_root = out / "checkpoints";

  TrainerState state = start_training(cfg);
  std::string metrics;
  if (o.resume && fs::is_directory(ckpt_root)) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(ckpt_root)) {
      if (e.is_directory() && fs::exists(e.path() / "state.json")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (!dirs.empty()) {
      state = load_checkpoint(dirs.back(), &cfg.hyper);
      if (fs::exists(out / "metrics.jsonl")) {
        std::istringstream in(read_file(out / "metrics.jsonl"));
        for (std::string line; std::getline(in, line);) {
          if (!line.empty() && ojson::parse(line).at("epoch").get<int>() < state.next_epoch) metrics += line + "\n";
        }
      }
      note(log, "resuming at epoch " + std::to_string(state.next_epoch) + " from " + dirs.back().string());
    }
  }

  while (state.next_epoch < cfg.epochs) {
    std::ostringstream rows;
    const EpochStats st = train_epoch(state, cfg, &rows);
    metrics += rows.str();
    sink.write("metrics.jsonl", metrics);
    char dir[32];
    std::snprintf(dir, sizeof dir, "epoch_%04d", st.epoch);
    save_checkpoint(state, ckpt_root / dir);
    char line[160];
    std::snprintf(line, sizeof line, "epoch %d: mean reward %.5f, baseline %.5f, p = %.4g%s", st.epoch,
                  st.mean_reward, st.mean_baseline_reward, st.test.p, st.test.update ? " (baseline updated)" : "");
    note(log, line);
  }
  sink.write("metrics.jsonl", metrics);
  sink.write("policy.bin", params_to_bytes(state.policy));
  std::vector<std::string> ckpt_files;
  if (fs::is_directory(ckpt_root)) {
    for (const auto& e : fs::recursive_directory_iterator(ckpt_root)) {
      if (e.is_regular_file()) ckpt_files.push_back(fs::relative(e.path(), out).generic_string());
    }
  }
  for (const std::string& f : ckpt_files) sink.adopt(f);
  finish_manifest(m, sink);
  return m;
}

RunManifest cmd_compare(const CompareOptions& o, const fs::path& out, const LogFn& log) {
  if (o.runs.empty()) throw Error(ErrorCode::kValidation, "runs: need at least one plan output directory");
  RunManifest m;
  m.command = "compare";
  m.config = o;
  std::vector<MethodSummary> methods;
  std::set<std::string> labels;
  for (const std::string& dir : o.runs) {
    const ojson summary = ojson::parse(read_hashed(fs::path(dir) / "summary.json", m));
    MethodSummary ms;
    ms.method = summary.at("method").get<std::string>();
    if (!labels.insert(ms.method).second) {
      ms.method += " (" + fs::path(dir).filename().string() + ")";
      labels.insert(ms.method);
    }
    ms.mean_score = summary.at("mean_score").get<double>();
    for (const ojson& row : summary.at("instances")) {
      ms.instance_hashes.push_back(row.at("input_hash").get<std::string>() + "@" +
                                   format_number(row.at("mission_period_s").get<double>()));
    }
    const fs::path timing_path = fs::path(dir) / "timing.json";
    if (fs::exists(timing_path)) {
      ms.mean_runtime = ojson::parse(read_hashed(timing_path, m)).at("mean_seconds").get<double>();
    }
    methods.push_back(std::move(ms));
  }
  const std::vector<ComparisonRow> rows = compare_methods(methods);
  ojson doc;
  doc["instances"] = methods.front().instance_hashes.size();
  doc["rows"] = ojson::array();
  for (const ComparisonRow& r : rows) {
    doc["rows"].push_back(
        {{"method", r.method}, {"objective", r.objective}, {"gap_percent", r.gap}, {"runtime_s", r.runtime}});
  }
  OutputSink sink(out);
  const std::string table = comparison_table(rows);
  sink.write("comparison.json", doc.dump(2) + "\n");
  sink.write("comparison.txt", table);
  note(log, table);
  finish_manifest(m, sink);
  return m;
}

RunManifest cmd_priority(const PriorityOptions& o, const fs::path& out, const LogFn& log) {
  const MethodSpec method = parse_method(o.method);
  RunManifest m;
  m.command = "priority";
  m.config = o;
  m.seeds = {o.seed};
  if (o.scenario.empty()) throw Error(ErrorCode::kValidation, "scenario: required");
  if (o.weights.empty()) throw Error(ErrorCode::kValidation, "weights: required");
  const ScenarioInstance s = scenario_from_json(read_hashed(o.scenario, m));
  validate(s);
  std::map<int, double> weights;
  try {
    const ojson doc = ojson::parse(read_hashed(o.weights, m));
    for (const auto& item : doc.at("weights").items()) weights[std::stoi(item.key())] = item.value().get<double>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kValidation, "weights file " + o.weights + ": " + e.what());
  }
  std::optional<PolicyParams> params;
  if (method.policy) {
    if (o.params.empty()) throw Error(ErrorCode::kValidation, "params: " + method.name + " needs a parameter file");
    params = params_from_bytes(read_hashed(o.params, m));
  }
  const MethodSettings settings{o.iterations, o.penalty_scale, o.seed, params ? &*params : nullptr};
  const PriorityReport rep = priority_sweep(s, weights, o.s_grid, method, settings);

  OutputSink sink(out);
  ojson doc;
  doc["method"] = method.name;
  doc["s_grid"] = rep.s_grid;
  doc["objectives"] = rep.objectives;
  doc["best_s"] = rep.best_s;
  doc["points"] = ojson::array();
  for (const PriorityPoint& p : rep.points) {
    doc["points"].push_back({{"id", p.id},
                             {"weight", p.weight},
                             {"max_age_s", p.max_age_weighted},
                             {"max_age_uniform_s", p.max_age_uniform}});
  }
  for (std::size_t i = 0; i < rep.s_grid.size(); ++i) {
    sink.write("logs/S_" + format_number(rep.s_grid[i]) + ".jsonl", episode_to_jsonl(rep.logs[i]));
  }
  sink.write("logs/uniform.jsonl", episode_to_jsonl(rep.uniform_log));
  sink.write("priority.json", doc.dump(2) + "\n");
  for (std::size_t i = 0; i < rep.s_grid.size(); ++i) {
    note(log, "S = " + format_number(rep.s_grid[i]) + ": weighted score " + format_number(rep.objectives[i]));
  }
  note(log, "best S = " + format_number(rep.best_s));
  finish_manifest(m, sink);
  return m;
}

RunManifest run_command(const std::string& command, const ojson& config, const fs::path& out, const LogFn& log) {
  if (command == "generate") return cmd_generate(config.get<GenerateOptions>(), out, log);
  if (command == "plan") return cmd_plan(config.get<PlanOptions>(), out, log);
  if (command == "train") return cmd_train(config.get<TrainOptions>(), out, log);
  if (command == "compare") return cmd_compare(config.get<CompareOptions>(), out, log);
  if (command == "priority") return cmd_priority(config.get<PriorityOptions>(), out, log);
  throw Error(ErrorCode::kValidation, "command '" + command + "' cannot be replayed");
}

ReplayReport replay_manifest(const RunManifest& m, const fs::path& out, const LogFn& log) {
  for (const auto& [path, crc] : m.input_hashes) {
    if (!fs::exists(path) || hex32(crc32_of(read_file(path))) != crc) {
      throw Error(ErrorCode::kValidation, "input " + path + " no longer matches the manifest");
    }
  }
  ReplayReport rep;
  rep.replayed = run_command(m.command, m.config, out, log);
  std::map<std::string, const ManifestOutput*> fresh;
  for (const ManifestOutput& o : rep.replayed.outputs) fresh[o.path] = &o;
  for (const ManifestOutput& o : m.outputs) {
    auto it = fresh.find(o.path);
    if (it == fresh.end()) {
      rep.mismatches.push_back(o.path + " (missing)");
    } else if (!o.volatile_content && (it->second->crc32 != o.crc32 || it->second->size != o.size)) {
      rep.mismatches.push_back(o.path);
    }
    if (it != fresh.end()) fresh.erase(it);
  }
  for (const auto& [path, _] : fresh) rep.mismatches.push_back(path + " (unexpected)");
  return rep;
}

}  // namespace persurv
