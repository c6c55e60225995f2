// persurv: dataset generation, planning, training, comparison, priority
// sweeps and the mission service from one binary.

#include <csignal>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "persurv/harness.hpp"
#include "persurv/http_server.hpp"
#include "persurv/io.hpp"

namespace {

using persurv::Error;
using persurv::ErrorCode;
using persurv::ojson;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitInfeasible = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation:
    case ErrorCode::kInstanceSetMismatch:
    case ErrorCode::kFormatVersionMismatch:
    case ErrorCode::kCorruptFile:
    case ErrorCode::kDivisionByZero:
    case ErrorCode::kTooManyEndpoints:
    case ErrorCode::kOffRoad:
    case ErrorCode::kDisconnectedNetwork:
      return kExitValidation;
    case ErrorCode::kNoFeasibleSortie:
    case ErrorCode::kDeadlock:
    case ErrorCode::kInfeasibleAction:
    case ErrorCode::kAllMasked:
    case ErrorCode::kExhaustedRejection:
      return kExitInfeasible;
    default:
      return kExitFailure;
  }
}

// Collects the options a user actually set so they can be layered over the
// defaults and the --config file.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& desc) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, desc);
    apply_.push_back([opt, value, key](ojson& j) {
      if (opt->count() > 0) j[key] = *value;
    });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& desc) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app->add_flag(flag, *value, desc);
    apply_.push_back([opt, value, key](ojson& j) {
      if (opt->count() > 0) j[key] = *value;
    });
    return opt;
  }

  ojson collect() const {
    ojson j = ojson::object();
    for (const auto& f : apply_) f(j);
    return j;
  }

 private:
  std::vector<std::function<void(ojson&)>> apply_;
};

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  bool threads_set = false;
  std::string out;
  std::string config;
};

ojson config_file_section(const std::string& path, const std::string& verb) {
  if (path.empty()) return ojson::object();
  ojson doc;
  try {
    doc = ojson::parse(persurv::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, "config " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kValidation, "config " + path + ": expected an object");
  if (doc.contains(verb) && doc[verb].is_object()) return doc[verb];
  return doc;
}

// defaults <- config file <- global flags <- command flags
ojson resolve(ojson defaults, const ojson& file, const Globals& g, const ojson& flags) {
  for (const auto& item : file.items()) defaults[item.key()] = item.value();
  if (g.seed_set && defaults.contains("seed")) defaults["seed"] = g.seed;
  if (g.threads_set && defaults.contains("threads")) defaults["threads"] = g.threads;
  for (const auto& item : flags.items()) defaults[item.key()] = item.value();
  return defaults;
}

volatile std::sig_atomic_t g_interrupted = 0;
persurv::MissionServer* g_server = nullptr;

extern "C" void on_signal(int) {
  g_interrupted = 1;
  if (g_server) g_server->stop();
}

void log_line(const std::string& line) { std::cerr << line << std::endl; }

void print_manifest_summary(const persurv::RunManifest& m, const fs::path& out) {
  std::cout << m.command << ": wrote " << m.outputs.size() << " files and " << (out / "manifest.json").string()
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persistent UAV/UGV surveillance: scenarios, planners, policy training and mission service"};
  app.require_subcommand(1);
  app.set_version_flag("--version", persurv::kToolVersion);

  Globals g;
  app.add_option("--seed", g.seed, "Base random seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--threads", g.threads, "Worker threads for per-instance work")
      ->check(CLI::PositiveNumber)
      ->each([&](const std::string&) { g.threads_set = true; });
  app.add_option("--out", g.out, "Output directory (default runs/<command>)");
  app.add_option("--config", g.config, "JSON file with command options")->check(CLI::ExistingFile);

  Overrides gen_o, plan_o, train_o, cmp_o, pri_o;

  CLI::App* gen = app.add_subcommand("generate", "Sample scenario files");
  gen_o.add<std::string>(gen, "--distribution", "distribution", "uniform, gaussian, rayleigh or exponential");
  gen_o.add<double>(gen, "--radius", "radius", "Spread radius of aerial points, meters");
  gen_o.add<std::vector<std::string>>(gen, "--sizes", "sizes", "Size labels such as U15G5,U30G10")->delimiter(',');
  gen_o.add<int>(gen, "--count", "count", "Scenarios per size");
  gen_o.add<double>(gen, "--mission-period-min", "mission_period_min", "Mission period T_m in minutes");
  gen_o.flag(gen, "--full-period", "full_period", "Allow mission periods above the desk-scale limit");

  CLI::App* plan = app.add_subcommand("plan", "Run a planner or policy on scenario files");
  plan_o.add<std::vector<std::string>>(plan, "scenarios", "scenarios", "Scenario files or directories")->required();
  plan_o.add<std::string>(plan, "--method", "method", "TS, SA, GLS, policy-greedy or policy-sample-N");
  plan_o.add<std::string>(plan, "--params", "params", "Policy parameter file");
  plan_o.add<int>(plan, "--iterations", "iterations", "Metaheuristic iterations per sortie");
  plan_o.add<double>(plan, "--penalty-scale", "penalty_scale", "Scale of the age penalties in the sortie problem");
  plan_o.add<double>(plan, "--mission-period-min", "mission_period_min", "Override T_m in minutes");
  plan_o.flag(plan, "--full-period", "full_period", "Allow mission periods above the desk-scale limit");

  CLI::App* train = app.add_subcommand("train", "Train the policy with REINFORCE and a rollout baseline");
  train_o.flag(train, "--toy", "toy", "Toy preset (U6G3, d_h 16, 2 heads, 1 layer)");
  train_o.add<int>(train, "--epochs", "epochs", "Epochs");
  train_o.add<int>(train, "--batches", "batches", "Batches per epoch");
  train_o.add<int>(train, "--batch-size", "batch_size", "Instances per batch");
  train_o.add<double>(train, "--lr", "lr", "Initial learning rate");
  train_o.add<double>(train, "--decay", "decay", "Per-epoch learning-rate decay");
  train_o.add<int>(train, "--n-aerial", "n_aerial", "Aerial points per training instance");
  train_o.add<int>(train, "--n-ground", "n_ground", "Ground points per training instance");
  train_o.add<double>(train, "--mission-period-min", "mission_period_min", "Training mission period, minutes");
  train_o.flag(train, "--terminal-gap-reward", "terminal_gap_reward", "Also charge the unvisited stretch up to T_m");
  train_o.flag(train, "--resume", "resume", "Continue from the newest checkpoint in --out");

  CLI::App* cmp = app.add_subcommand("compare", "Tabulate plan runs over the same instances");
  cmp_o.add<std::vector<std::string>>(cmp, "runs", "runs", "Plan output directories")->required();

  CLI::App* pri = app.add_subcommand("priority", "Sweep the priority scale S for a weighted scenario");
  pri_o.add<std::string>(pri, "scenario", "scenario", "Scenario file")->required();
  pri_o.add<std::string>(pri, "--weights", "weights", "JSON file {\"weights\": {\"<id>\": w}}")->required();
  pri_o.add<std::vector<double>>(pri, "--s-grid", "s_grid", "S values, e.g. 0,0.25,0.5,0.75,1")->delimiter(',');
  pri_o.add<std::string>(pri, "--method", "method", "TS, SA, GLS or policy-greedy");
  pri_o.add<std::string>(pri, "--params", "params", "Policy parameter file");
  pri_o.add<int>(pri, "--iterations", "iterations", "Metaheuristic iterations per sortie");

  CLI::App* serve = app.add_subcommand("serve", "Run the mission service (HTTP + server-sent events)");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string serve_params, journal_dir;
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port (0 picks one)");
  serve->add_option("--params", serve_params, "Default policy parameter file for policy-greedy sessions");
  serve->add_option("--journal-dir", journal_dir, "Append session journals to <dir>/<id>.jsonl");

  CLI::App* replay = app.add_subcommand("replay", "Re-run a manifest and check its outputs byte for byte");
  std::string manifest_path;
  replay->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  CLI::App* verb = app.get_subcommands().front();
  const std::string name = verb->get_name();
  const fs::path out = g.out.empty() ? fs::path("runs") / name : fs::path(g.out);

  try {
    if (name == "replay") {
      const persurv::RunManifest m = persurv::load_manifest(manifest_path);
      const fs::path target = g.out.empty() ? fs::path(manifest_path).parent_path() / "replay" : out;
      const persurv::ReplayReport rep = persurv::replay_manifest(m, target, log_line);
      if (!rep.identical()) {
        std::cerr << "replay differs from the manifest:\n";
        for (const std::string& p : rep.mismatches) std::cerr << "  " << p << "\n";
        return kExitFailure;
      }
      std::cout << "replay of " << m.command << " is bit-identical (" << m.outputs.size() << " outputs)\n";
      return kExitOk;
    }
    if (name == "serve") {
      std::shared_ptr<const persurv::PolicyParams> params;
      if (!serve_params.empty()) params = std::make_shared<const persurv::PolicyParams>(persurv::load_params(serve_params));
      persurv::RunManifest m;
      m.command = "serve";
      m.config = {{"host", host}, {"port", port}, {"params", serve_params}, {"journal_dir", journal_dir}};
      if (!serve_params.empty()) m.input_hashes[serve_params] = persurv::hex32(persurv::crc32_of(persurv::read_file(serve_params)));
      persurv::write_file_atomic(out / "manifest.json", persurv::manifest_to_json(m).dump(2) + "\n");
      auto sessions = std::make_shared<persurv::SessionManager>(params, journal_dir);
      persurv::MissionServer server(sessions);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "mission service listening on http://" << host << ":" << bound << std::endl;
      server.listen();
      g_server = nullptr;
      return kExitOk;
    }

    const ojson file = config_file_section(g.config, name);
    persurv::RunManifest m;
    if (name == "generate") {
      const ojson cfg = resolve(ojson(persurv::GenerateOptions{}), file, g, gen_o.collect());
      m = persurv::cmd_generate(cfg.get<persurv::GenerateOptions>(), out, log_line);
    } else if (name == "plan") {
      const ojson cfg = resolve(ojson(persurv::PlanOptions{}), file, g, plan_o.collect());
      m = persurv::cmd_plan(cfg.get<persurv::PlanOptions>(), out, log_line);
    } else if (name == "train") {
      const ojson flags = train_o.collect();
      const bool toy = flags.value("toy", file.value("toy", false));
      const ojson base = toy ? ojson(persurv::toy_train_options()) : ojson(persurv::TrainOptions{});
      const ojson cfg = resolve(base, file, g, flags);
      m = persurv::cmd_train(cfg.get<persurv::TrainOptions>(), out, log_line);
    } else if (name == "compare") {
      const ojson cfg = resolve(ojson(persurv::CompareOptions{}), file, g, cmp_o.collect());
      m = persurv::cmd_compare(cfg.get<persurv::CompareOptions>(), out, log_line);
    } else if (name == "priority") {
      const ojson cfg = resolve(ojson(persurv::PriorityOptions{}), file, g, pri_o.collect());
      m = persurv::cmd_priority(cfg.get<persurv::PriorityOptions>(), out, log_line);
    }
    print_manifest_summary(m, out);
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitFailure;
  }
}
