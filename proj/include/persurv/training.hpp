#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "persurv/policy.hpp"
#include "persurv/scenario.hpp"

namespace persurv {

struct TrainConfig {
  int epochs = 100;
  int batches = 200;     // N
  int batch_size = 256;  // B
  double lr = 1e-4;
  double decay = 0.995;  // alpha in lr0 * alpha^epoch
  std::uint64_t seed = 0;
  DistributionConfig dist;  // per-instance seeds are derived; dist.seed is ignored
  double mission_period = 24000.0;
  PolicyHyper hyper;
  bool toy = false;
  bool adam = true;  // false: plain gradient ascent
  // Fresh instances per epoch for the baseline's paired t-test.
  int probe_size = 64;
  double significance = 0.05;
  // Also charge every point's final unvisited stretch up to T_m. Off by
  // default; without it a policy pays nothing for points it never visits.
  bool terminal_gap_reward = false;
};

void validate(const TrainConfig& cfg);

// U6G3, T_m = 100 min, d_h = 16, M = 2, L = 1.
TrainConfig toy_train_config();

double lr_decay(double lr0, double alpha, int epoch);

using Gradients = PolicyWeights<Tensor>;

// Seed of instance `index` in batch `batch` of `epoch`; batch -1 is the
// epoch's probe set.
std::uint64_t instance_seed(std::uint64_t seed, int epoch, int batch, int index);
ScenarioInstance sample_training_instance(const TrainConfig& cfg, std::uint64_t seed);

// Training reward of a trajectory: its episode reward, optionally with the
// terminal gap.
double training_reward(const Trajectory& t, bool terminal_gap);

// Training reward of a greedy rollout per environment (BN in evaluation mode).
std::vector<double> greedy_rewards(const PolicyParams& p, std::span<const Environment* const> envs,
                                   bool terminal_gap = false);

struct LossGrad {
  Gradients grad;  // ascent direction of J
  std::vector<double> rewards;
  std::vector<std::vector<std::size_t>> actions;
  std::vector<BnStats> batch_stats;
};

// Samples one trajectory per environment and returns
// (1/B) sum_b (R_b - R^phi_b) grad log pi. Throws kNonFiniteGradient.
LossGrad compute_loss_grad(const PolicyParams& p, std::span<const Environment* const> envs,
                           const std::vector<double>& baseline_rewards, Rng& rng, bool terminal_gap = false);

// Same surrogate over fixed action sequences with explicit advantages.
Gradients policy_gradient(const PolicyParams& p, std::span<const Environment* const> envs,
                          const std::vector<std::vector<std::size_t>>& actions,
                          const std::vector<double>& advantages, BnMode bn = BnMode::kTrain);

struct TTestResult {
  double mean_diff = 0.0;
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero variance of the differences
  bool update = false;
};

// One-sided paired t-test of policy > baseline. A zero-variance sample
// updates only if the policy is strictly better on every pair.
TTestResult one_sided_paired_ttest(const std::vector<double>& policy, const std::vector<double>& baseline,
                                   double significance = 0.05);

// Copies `params` into `baseline` when the test favours the policy.
TTestResult baseline_update(const std::vector<double>& policy_rewards, const std::vector<double>& baseline_rewards,
                            const PolicyParams& params, PolicyParams& baseline, double significance = 0.05);

struct AdamState {
  Gradients m;
  Gradients v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(const PolicyParams& p);
// theta += lr * m_hat / (sqrt(v_hat) + eps)
void adam_ascent(PolicyParams& p, const Gradients& g, AdamState& s, double lr);
void sgd_ascent(PolicyParams& p, const Gradients& g, double lr);
void update_running_stats(PolicyParams& p, const std::vector<BnStats>& batch, int rows);

struct BatchRecord {
  int epoch = 0;
  int batch = 0;
  double mean_reward = 0.0;
  double baseline_reward = 0.0;
  double lr = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double mean_reward = 0.0;
  double mean_baseline_reward = 0.0;
  TTestResult test;
  std::vector<BatchRecord> batches;
};

struct TrainerState {
  PolicyParams policy;
  PolicyParams baseline;
  AdamState adam;
  int next_epoch = 0;
};

TrainerState start_training(const TrainConfig& cfg);

// One REINFORCE epoch: N batches, then the baseline test.
// When `metrics` is set, one JSON line per batch is written to it (the last
// line of the epoch carries the p-value).
EpochStats train_epoch(TrainerState& state, const TrainConfig& cfg, std::ostream* metrics = nullptr);

std::string batch_record_json(const BatchRecord& r, const TTestResult* test);

void save_checkpoint(const TrainerState& state, const std::filesystem::path& dir);
TrainerState load_checkpoint(const std::filesystem::path& dir, const PolicyHyper* expect = nullptr);

// Relative-error floor of the gradient check, as a fraction of the largest
// gradient entry over all blocks.
inline constexpr double kGradCheckFloor = 1e-4;

struct GradCheckReport {
  struct Block {
    std::string name;
    double max_abs_error = 0.0;
    // max_abs_error / max(scale, kGradCheckFloor * largest scale)
    double max_rel_error = 0.0;
    double scale = 0.0;  // max |gradient| in the block, either estimate
  };
  std::vector<Block> blocks;
  double max_rel_error = 0.0;
  std::size_t steps = 0;
};

// Compares the analytic gradient of a replayed trajectory's surrogate with
// central differences. The scenario has `points` points (2/3 aerial) and the
// trajectory at most `max_steps` actions.
GradCheckReport grad_check(const PolicyHyper& hyper, std::uint64_t seed, double eps, double advantage = 1.0,
                           int points = 6, int max_steps = 8);

}  // namespace persurv
