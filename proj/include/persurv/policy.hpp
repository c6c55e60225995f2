#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "persurv/autodiff.hpp"
#include "persurv/environment.hpp"
#include "persurv/episode.hpp"
#include "persurv/rng.hpp"
#include "persurv/tensor.hpp"

namespace persurv {

struct PolicyHyper {
  int d_h = 128;
  int heads = 8;
  int layers = 3;
  int d_ff = 512;
  double clip = 10.0;  // C_p
  // Encoder attention: project the concatenated heads (off = plain concat).
  bool head_projection = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  int head_dim() const { return d_h / heads; }
  friend bool operator==(const PolicyHyper&, const PolicyHyper&) = default;
};

void validate(const PolicyHyper& h);

// d_h = 16, M = 2, L = 1, d_ff = 64.
PolicyHyper toy_hyper();

template <class T>
struct LayerWeights {
  T Wq, Wk, Wv, Wo;
  T bn1_gamma, bn1_beta;
  T W1, b1, W2, b2;
  T bn2_gamma, bn2_beta;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

template <class T>
struct PolicyWeights {
  T W0, b0;
  std::vector<LayerWeights<T>> layers;
  T Wg, Wc;       // context projection
  T Wa;           // age embedding, 1 x d_h
  T Wkg, Wvg, Wog;  // glimpse
  T Wq, Wk;       // compatibility
  T start_embed;     // stands in for h_current before the first action
  T recharge_embed;  // key offset separating recharge tokens from visits

  friend bool operator==(const PolicyWeights&, const PolicyWeights&) = default;
};

// Calls f(name, block...) for every trainable block in file order, zipping
// any number of PolicyWeights of the same layout.
template <class F, class W0, class... W>
void for_each_block(const PolicyHyper& h, F&& f, W0& first, W&... rest) {
  f("W0", first.W0, rest.W0...);
  f("b0", first.b0, rest.b0...);
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto& L = first.layers[l];
    f(p + "Wq", L.Wq, rest.layers[l].Wq...);
    f(p + "Wk", L.Wk, rest.layers[l].Wk...);
    f(p + "Wv", L.Wv, rest.layers[l].Wv...);
    if (h.head_projection) f(p + "Wo", L.Wo, rest.layers[l].Wo...);
    f(p + "bn1_gamma", L.bn1_gamma, rest.layers[l].bn1_gamma...);
    f(p + "bn1_beta", L.bn1_beta, rest.layers[l].bn1_beta...);
    f(p + "W1", L.W1, rest.layers[l].W1...);
    f(p + "b1", L.b1, rest.layers[l].b1...);
    f(p + "W2", L.W2, rest.layers[l].W2...);
    f(p + "b2", L.b2, rest.layers[l].b2...);
    f(p + "bn2_gamma", L.bn2_gamma, rest.layers[l].bn2_gamma...);
    f(p + "bn2_beta", L.bn2_beta, rest.layers[l].bn2_beta...);
  }
  f("Wg", first.Wg, rest.Wg...);
  f("Wc", first.Wc, rest.Wc...);
  f("Wa", first.Wa, rest.Wa...);
  f("Wkg", first.Wkg, rest.Wkg...);
  f("Wvg", first.Wvg, rest.Wvg...);
  f("Wog", first.Wog, rest.Wog...);
  f("Wq", first.Wq, rest.Wq...);
  f("Wk", first.Wk, rest.Wk...);
  f("start_embed", first.start_embed, rest.start_embed...);
  f("recharge_embed", first.recharge_embed, rest.recharge_embed...);
}

struct BnStats {
  Tensor mean;  // 1 x d_h
  Tensor var;   // 1 x d_h

  friend bool operator==(const BnStats&, const BnStats&) = default;
};

struct PolicyParams {
  PolicyHyper hyper;
  PolicyWeights<Tensor> w;
  // Running statistics, two per encoder layer (after attention, after FF).
  std::vector<BnStats> running;

  std::vector<std::string> block_names() const;
  std::size_t parameter_count() const;
  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

PolicyParams init_params(std::uint64_t seed, const PolicyHyper& hyper);

// Zero tensors with the shapes of every block of `p`.
PolicyWeights<Tensor> zeros_like(const PolicyParams& p);

using WeightVars = PolicyWeights<ad::Var>;
WeightVars as_vars(const PolicyParams& p, bool requires_grad);

// o_i = (x / 20 km, y / 20 km, b_i), one row per mission point.
Tensor node_features(const ScenarioInstance& s);

enum class BnMode { kTrain, kEval };

struct EncoderOutput {
  ad::Var node_embeddings;  // n x d_h
  ad::Var graph_mean;       // 1 x d_h
};

// Encodes several instances jointly; with BnMode::kTrain the statistics are
// taken over the node rows of the whole batch and returned in `batch_stats`.
std::vector<EncoderOutput> encode_batch(const PolicyParams& p, const WeightVars& w,
                                        const std::vector<Tensor>& features, BnMode mode,
                                        std::vector<BnStats>* batch_stats = nullptr);

EncoderOutput encode(const PolicyParams& p, const Tensor& features, BnMode mode = BnMode::kEval);

// Per-instance decoder state computed once per episode.
class DecoderContext {
 public:
  DecoderContext(const PolicyParams& p, const WeightVars& w, const Environment& env, EncoderOutput enc);

  // 1 x |actions| log-probabilities; masked entries are -infinity.
  // Throws kAllMasked when the mask is empty.
  ad::Var log_probs(const EnvState& st, const std::vector<char>& mask) const;

  const EncoderOutput& encoder() const { return enc_; }

 private:
  const PolicyParams* p_;
  const WeightVars* w_;
  const Environment* env_;
  EncoderOutput enc_;
  ad::Var graph_ctx_;     // h_bar W_g
  ad::Var recharge_key_;  // recharge_embed W_k
  ad::Var hk_, hkg_, hvg_;  // h^L projected by W_k, W_k^g, W_v^g
  ad::Var ak_, akg_, avg_;  // W_a projected likewise
  std::vector<int> ground_rows_;
  std::vector<int> visit_rows_;
  std::vector<int> action_node_;
};

// Probability vector for one decision (exact zeros on masked entries).
std::vector<double> decode_step(const PolicyParams& p, const Environment& env, const EnvState& st,
                                const std::vector<char>& mask);

struct Trajectory {
  std::vector<std::size_t> actions;
  std::vector<double> log_probs;
  EpisodeLog log;
  double reward = 0.0;  // episode_reward(log)
};

enum class DecodeMode { kGreedy, kSample, kReplay };

std::size_t greedy_choice(const std::vector<double>& log_probs);
std::size_t sample_choice(const std::vector<double>& log_probs, Rng& rng);

struct PolicyRun {
  std::vector<Trajectory> trajectories;
  // Sum of chosen-action log-probabilities per episode (differentiable when
  // the weights require gradients).
  std::vector<ad::Var> log_prob_sums;
  std::vector<BnStats> batch_stats;
};

// Runs one episode per environment against shared weights. kReplay follows
// `replay[b]` and stops when it is exhausted or the mission ends.
PolicyRun run_policy(const PolicyParams& p, const WeightVars& w, std::span<const Environment* const> envs,
                     DecodeMode mode, BnMode bn, Rng* rng = nullptr,
                     const std::vector<std::vector<std::size_t>>* replay = nullptr);

enum class RolloutMode { kGreedy, kSample };

Trajectory rollout(const PolicyParams& p, const Environment& env, RolloutMode mode, Rng& rng);

// Best of n sampled rollouts by reward; earliest wins ties.
Trajectory sample_best(const PolicyParams& p, const Environment& env, int n, Rng& rng);

void save_params(const PolicyParams& p, const std::filesystem::path& path);
std::string params_to_bytes(const PolicyParams& p);
// `expect`, when given, must match the stored hyperparameters.
PolicyParams params_from_bytes(const std::string& bytes, const PolicyHyper* expect = nullptr);
PolicyParams load_params(const std::filesystem::path& path, const PolicyHyper* expect = nullptr);

}  // namespace persurv
