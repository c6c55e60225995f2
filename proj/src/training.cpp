#include "persurv/training.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <memory>
#include <sstream>

#include "persurv/error.hpp"
#include "persurv/io.hpp"

namespace persurv {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

const RoadNetwork& default_road() {
  static const RoadNetwork road = build_road_network(default_road_polylines());
  return road;
}

std::vector<const Environment*> pointers(const std::vector<std::unique_ptr<Environment>>& envs) {
  std::vector<const Environment*> out;
  for (const auto& e : envs) out.push_back(e.get());
  return out;
}

Gradients collect(const PolicyParams& p, WeightVars& w) {
  Gradients g = zeros_like(p);
  for_each_block(
      p.hyper, [](const std::string&, Tensor& out, ad::Var& v) { out = v.grad(); }, g, w);
  return g;
}

void require_finite(const PolicyParams& p, Gradients& g) {
  for_each_block(
      p.hyper,
      [](const std::string& name, const Tensor& t) {
        for (double v : t.values()) {
          if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteGradient, "block " + name);
        }
      },
      g);
}

ad::Var surrogate(const std::vector<ad::Var>& log_prob_sums, const std::vector<double>& advantages) {
  const double B = static_cast<double>(log_prob_sums.size());
  std::vector<ad::Var> terms;
  for (std::size_t b = 0; b < log_prob_sums.size(); ++b) terms.push_back(ad::scale(log_prob_sums[b], advantages[b] / B));
  return ad::sum_scalars(terms);
}

std::vector<std::unique_ptr<Environment>> make_envs(const TrainConfig& cfg, int epoch, int batch, int count) {
  std::vector<std::unique_ptr<Environment>> envs;
  for (int i = 0; i < count; ++i) {
    envs.push_back(std::make_unique<Environment>(
        sample_training_instance(cfg, instance_seed(cfg.seed, epoch, batch, i))));
  }
  return envs;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.epochs <= 0 || cfg.batches <= 0 || cfg.batch_size <= 0) {
    throw Error(ErrorCode::kValidation, "epochs, batches and batch_size must be positive");
  }
  if (!(cfg.decay > 0.0 && cfg.decay <= 1.0)) throw Error(ErrorCode::kValidation, "decay must lie in (0, 1]");
  if (!(cfg.lr >= 0.0)) throw Error(ErrorCode::kValidation, "lr must be non-negative");
  if (cfg.probe_size < 2) throw Error(ErrorCode::kValidation, "probe_size must be at least 2");
  if (!(cfg.mission_period > 0.0)) throw Error(ErrorCode::kValidation, "mission_period must be positive");
  validate(cfg.hyper);
}

TrainConfig toy_train_config() {
  TrainConfig cfg;
  cfg.toy = true;
  cfg.epochs = 30;
  cfg.batches = 8;
  cfg.batch_size = 16;
  cfg.lr = 1e-3;
  cfg.dist.n_aerial = 6;
  cfg.dist.n_ground = 3;
  cfg.mission_period = 6000.0;
  cfg.hyper = toy_hyper();
  cfg.probe_size = 32;
  return cfg;
}

double lr_decay(double lr0, double alpha, int epoch) {
  if (epoch < 0) throw Error(ErrorCode::kValidation, "epoch must be non-negative");
  return lr0 * std::pow(alpha, epoch);
}

std::uint64_t instance_seed(std::uint64_t seed, int epoch, int batch, int index) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(epoch));
  h = splitmix(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(batch)));
  return splitmix(h ^ static_cast<std::uint64_t>(index));
}

ScenarioInstance sample_training_instance(const TrainConfig& cfg, std::uint64_t seed) {
  DistributionConfig d = cfg.dist;
  d.seed = seed;
  return sample_scenario(d, default_road(), VehicleParams{}, cfg.mission_period);
}

double training_reward(const Trajectory& t, bool terminal_gap) {
  return terminal_gap ? -episode_score(t.log, ScoreOptions{false, true}) : t.reward;
}

std::vector<double> greedy_rewards(const PolicyParams& p, std::span<const Environment* const> envs,
                                   bool terminal_gap) {
  ad::NoGradGuard guard;
  const WeightVars w = as_vars(p, false);
  std::vector<double> out;
  for (const Environment* e : envs) {
    const PolicyRun run =
        run_policy(p, w, std::span<const Environment* const>(&e, 1), DecodeMode::kGreedy, BnMode::kEval);
    out.push_back(training_reward(run.trajectories.front(), terminal_gap));
  }
  return out;
}

LossGrad compute_loss_grad(const PolicyParams& p, std::span<const Environment* const> envs,
                           const std::vector<double>& baseline_rewards, Rng& rng, bool terminal_gap) {
  if (envs.empty()) throw Error(ErrorCode::kValidation, "empty batch");
  if (baseline_rewards.size() != envs.size()) throw Error(ErrorCode::kValidation, "one baseline reward per instance");
  WeightVars w = as_vars(p, true);
  PolicyRun run = run_policy(p, w, envs, DecodeMode::kSample, BnMode::kTrain, &rng);
  LossGrad out;
  std::vector<double> adv;
  for (std::size_t b = 0; b < envs.size(); ++b) {
    out.rewards.push_back(training_reward(run.trajectories[b], terminal_gap));
    out.actions.push_back(run.trajectories[b].actions);
    adv.push_back(out.rewards.back() - baseline_rewards[b]);
  }
  ad::backward(surrogate(run.log_prob_sums, adv));
  out.grad = collect(p, w);
  require_finite(p, out.grad);
  out.batch_stats = std::move(run.batch_stats);
  return out;
}

Gradients policy_gradient(const PolicyParams& p, std::span<const Environment* const> envs,
                          const std::vector<std::vector<std::size_t>>& actions,
                          const std::vector<double>& advantages, BnMode bn) {
  if (advantages.size() != envs.size()) throw Error(ErrorCode::kValidation, "one advantage per instance");
  WeightVars w = as_vars(p, true);
  const PolicyRun run = run_policy(p, w, envs, DecodeMode::kReplay, bn, nullptr, &actions);
  ad::backward(surrogate(run.log_prob_sums, advantages));
  Gradients g = collect(p, w);
  require_finite(p, g);
  return g;
}

TTestResult one_sided_paired_ttest(const std::vector<double>& policy, const std::vector<double>& baseline,
                                   double significance) {
  if (policy.size() != baseline.size()) throw Error(ErrorCode::kValidation, "paired samples differ in length");
  const std::size_t n = policy.size();
  if (n < 2) throw Error(ErrorCode::kDegenerateSample, "paired t-test needs at least two pairs");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = policy[i] - baseline[i];
  TTestResult r;
  r.mean_diff = mean(d);
  double ss = 0.0;
  for (double x : d) ss += (x - r.mean_diff) * (x - r.mean_diff);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    r.degenerate = true;
    bool all_better = true;
    for (double x : d) all_better = all_better && x > 0.0;
    r.update = all_better;
    r.p = all_better ? 0.0 : 1.0;
    r.t = all_better ? std::numeric_limits<double>::infinity() : 0.0;
    return r;
  }
  r.t = r.mean_diff / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  r.p = boost::math::cdf(boost::math::complement(dist, r.t));
  r.update = r.p < significance;
  return r;
}

TTestResult baseline_update(const std::vector<double>& policy_rewards, const std::vector<double>& baseline_rewards,
                            const PolicyParams& params, PolicyParams& baseline, double significance) {
  const TTestResult r = one_sided_paired_ttest(policy_rewards, baseline_rewards, significance);
  if (r.update) baseline = params;
  return r;
}

AdamState make_adam(const PolicyParams& p) {
  AdamState s;
  s.m = zeros_like(p);
  s.v = zeros_like(p);
  return s;
}

void adam_ascent(PolicyParams& p, const Gradients& g, AdamState& s, double lr) {
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  Gradients grad = g;
  for_each_block(
      p.hyper,
      [&](const std::string&, Tensor& theta, Tensor& gr, Tensor& m, Tensor& v) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
          m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gr[i];
          v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gr[i] * gr[i];
          theta[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
        }
      },
      p.w, grad, s.m, s.v);
}

void sgd_ascent(PolicyParams& p, const Gradients& g, double lr) {
  Gradients grad = g;
  for_each_block(
      p.hyper, [&](const std::string&, Tensor& theta, Tensor& gr) { theta.axpy(lr, gr); }, p.w, grad);
}

void update_running_stats(PolicyParams& p, const std::vector<BnStats>& batch, int rows) {
  if (batch.size() != p.running.size()) throw Error(ErrorCode::kShapeMismatch, "batch statistics count");
  const double m = p.hyper.bn_momentum;
  const double unbias = rows > 1 ? static_cast<double>(rows) / (rows - 1) : 1.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    for (std::size_t j = 0; j < batch[k].mean.size(); ++j) {
      p.running[k].mean[j] = (1.0 - m) * p.running[k].mean[j] + m * batch[k].mean[j];
      p.running[k].var[j] = (1.0 - m) * p.running[k].var[j] + m * batch[k].var[j] * unbias;
    }
  }
}

TrainerState start_training(const TrainConfig& cfg) {
  validate(cfg);
  TrainerState s;
  s.policy = init_params(cfg.seed, cfg.hyper);
  s.baseline = s.policy;
  s.adam = make_adam(s.policy);
  return s;
}

std::string batch_record_json(const BatchRecord& r, const TTestResult* test) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["batch"] = r.batch;
  j["mean_reward"] = r.mean_reward;
  j["baseline_reward"] = r.baseline_reward;
  j["lr"] = r.lr;
  j["p_value"] = test ? nlohmann::ordered_json(test->p) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

EpochStats train_epoch(TrainerState& state, const TrainConfig& cfg, std::ostream* metrics) {
  validate(cfg);
  EpochStats st;
  st.epoch = state.next_epoch;
  st.lr = lr_decay(cfg.lr, cfg.decay, st.epoch);
  std::vector<double> rewards, baselines;
  for (int batch = 0; batch < cfg.batches; ++batch) {
    try {
      const auto envs = make_envs(cfg, st.epoch, batch, cfg.batch_size);
      const std::vector<const Environment*> ptrs = pointers(envs);
      const std::vector<double> base = greedy_rewards(state.baseline, ptrs, cfg.terminal_gap_reward);
      Rng rng(instance_seed(cfg.seed ^ 0x5A5A5A5AULL, st.epoch, batch, 0));
      const LossGrad lg = compute_loss_grad(state.policy, ptrs, base, rng, cfg.terminal_gap_reward);
      int rows = 0;
      for (const Environment* e : ptrs) rows += static_cast<int>(e->scenario().points.size());
      update_running_stats(state.policy, lg.batch_stats, rows);
      if (cfg.adam) {
        adam_ascent(state.policy, lg.grad, state.adam, st.lr);
      } else {
        sgd_ascent(state.policy, lg.grad, st.lr);
      }
      BatchRecord rec{st.epoch, batch, mean(lg.rewards), mean(base), st.lr};
      rewards.insert(rewards.end(), lg.rewards.begin(), lg.rewards.end());
      baselines.insert(baselines.end(), base.begin(), base.end());
      st.batches.push_back(rec);
      if (metrics && batch + 1 < cfg.batches) *metrics << batch_record_json(rec, nullptr) << '\n';
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFiniteGradient) throw;
      throw Error(ErrorCode::kNonFiniteGradient,
                  "epoch " + std::to_string(st.epoch) + " batch " + std::to_string(batch) + ": " + e.what());
    }
  }
  st.mean_reward = mean(rewards);
  st.mean_baseline_reward = mean(baselines);

  const auto probe = make_envs(cfg, st.epoch, -1, cfg.probe_size);
  const std::vector<const Environment*> ptrs = pointers(probe);
  st.test = baseline_update(greedy_rewards(state.policy, ptrs, cfg.terminal_gap_reward),
                            greedy_rewards(state.baseline, ptrs, cfg.terminal_gap_reward), state.policy, state.baseline,
                            cfg.significance);
  if (metrics) *metrics << batch_record_json(st.batches.back(), &st.test) << '\n' << std::flush;
  ++state.next_epoch;
  return st;
}

void save_checkpoint(const TrainerState& state, const std::filesystem::path& dir) {
  save_params(state.policy, dir / "policy.bin");
  save_params(state.baseline, dir / "baseline.bin");
  PolicyParams m = state.policy, v = state.policy;
  m.w = state.adam.m;
  v.w = state.adam.v;
  save_params(m, dir / "adam_m.bin");
  save_params(v, dir / "adam_v.bin");
  nlohmann::ordered_json j;
  j["next_epoch"] = state.next_epoch;
  j["adam_step"] = state.adam.step;
  j["beta1"] = state.adam.beta1;
  j["beta2"] = state.adam.beta2;
  j["eps"] = state.adam.eps;
  write_file_atomic(dir / "state.json", j.dump(2) + "\n");
}

TrainerState load_checkpoint(const std::filesystem::path& dir, const PolicyHyper* expect) {
  TrainerState s;
  s.policy = load_params(dir / "policy.bin", expect);
  s.baseline = load_params(dir / "baseline.bin", &s.policy.hyper);
  s.adam.m = load_params(dir / "adam_m.bin", &s.policy.hyper).w;
  s.adam.v = load_params(dir / "adam_v.bin", &s.policy.hyper).w;
  try {
    const auto j = nlohmann::json::parse(read_file(dir / "state.json"));
    s.next_epoch = j.at("next_epoch").get<int>();
    s.adam.step = j.at("adam_step").get<long>();
    s.adam.beta1 = j.at("beta1").get<double>();
    s.adam.beta2 = j.at("beta2").get<double>();
    s.adam.eps = j.at("eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptFile, std::string("checkpoint state: ") + e.what());
  }
  return s;
}

GradCheckReport grad_check(const PolicyHyper& hyper, std::uint64_t seed, double eps, double advantage, int points,
                           int max_steps) {
  TrainConfig cfg;
  cfg.dist.n_ground = std::max(1, points / 3);
  cfg.dist.n_aerial = points - cfg.dist.n_ground;
  cfg.mission_period = 6000.0;
  const Environment env(sample_training_instance(cfg, seed));
  const PolicyParams p = init_params(seed, hyper);

  // A sampled trajectory, truncated and then replayed so the surrogate is a
  // deterministic function of the parameters.
  Rng rng(seed);
  Trajectory t = rollout(p, env, RolloutMode::kSample, rng);
  if (static_cast<int>(t.actions.size()) > max_steps) t.actions.resize(static_cast<std::size_t>(max_steps));
  const std::vector<std::vector<std::size_t>> replay{t.actions};
  const Environment* e = &env;
  const std::span<const Environment* const> envs(&e, 1);

  const Gradients analytic = policy_gradient(p, envs, replay, {advantage});
  const auto value = [&](const PolicyParams& q) {
    ad::NoGradGuard guard;
    const WeightVars w = as_vars(q, false);
    const PolicyRun run = run_policy(q, w, envs, DecodeMode::kReplay, BnMode::kTrain, nullptr, &replay);
    return advantage * run.log_prob_sums.front().value()[0];
  };

  GradCheckReport report;
  report.steps = t.actions.size();
  PolicyParams probe = p;
  Gradients grads = analytic;
  double largest = 0.0;
  for_each_block(
      hyper,
      [&](const std::string& name, Tensor& theta, Tensor& g) {
        Tensor numeric(theta.rows(), theta.cols());
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double keep = theta[i];
          theta[i] = keep + eps;
          const double up = value(probe);
          theta[i] = keep - eps;
          const double down = value(probe);
          theta[i] = keep;
          numeric[i] = (up - down) / (2.0 * eps);
        }
        GradCheckReport::Block b;
        b.name = name;
        b.scale = std::max(max_abs(g), max_abs(numeric));
        for (std::size_t i = 0; i < theta.size(); ++i) b.max_abs_error = std::max(b.max_abs_error, std::abs(g[i] - numeric[i]));
        largest = std::max(largest, b.scale);
        report.blocks.push_back(std::move(b));
      },
      probe.w, grads);
  // Blocks far below the largest gradient entry (b0 is exactly zero: the
  // batch norm after the first residual cancels any shift) are measured
  // against a floor instead of their own round-off.
  const double floor = std::max(kGradCheckFloor * largest, 1e-12);
  for (auto& b : report.blocks) {
    b.max_rel_error = b.max_abs_error / std::max(b.scale, floor);
    report.max_rel_error = std::max(report.max_rel_error, b.max_rel_error);
  }
  return report;
}

}  // namespace persurv
