#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>

#include "fixtures.hpp"
#include "persurv/autodiff.hpp"
#include "persurv/error.hpp"
#include "persurv/io.hpp"
#include "persurv/policy.hpp"

namespace persurv {
namespace {

Tensor random_tensor(int r, int c, Rng& rng) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

// Central-difference check of d f / d x for a scalar-valued graph builder.
double max_grad_error(const std::function<ad::Var(const ad::Var&)>& f, Tensor x) {
  const ad::Var leaf = ad::leaf(x);
  ad::backward(f(leaf));
  const Tensor analytic = leaf.grad();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + 1e-6;
    const double up = f(ad::constant(x)).value()[0];
    x[i] = keep - 1e-6;
    const double down = f(ad::constant(x)).value()[0];
    x[i] = keep;
    worst = std::max(worst, std::abs((up - down) / 2e-6 - analytic[i]));
  }
  return worst;
}

// Reduces any matrix to a scalar with non-uniform weights.
ad::Var probe(const ad::Var& y) {
  Tensor w(y.rows(), y.cols());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  std::vector<ad::Var> terms;
  for (int r = 0; r < y.rows(); ++r) {
    const ad::Var row = ad::slice_rows(y, r, r + 1);
    const ad::Var wr = ad::constant(Tensor(1, y.cols(), std::vector<double>(w.data() + r * y.cols(),
                                                                           w.data() + (r + 1) * y.cols())));
    terms.push_back(ad::matmul_nt(row, wr));
  }
  return ad::sum_scalars(terms);
}

TEST(Autodiff, OpsMatchFiniteDifferences) {
  Rng rng(3);
  const Tensor b = random_tensor(4, 3, rng);
  const Tensor row = random_tensor(1, 3, rng);
  const Tensor gamma = random_tensor(1, 3, rng);
  const Tensor x = random_tensor(5, 4, rng);
  const std::vector<char> mask{1, 0, 1, 1};
  EXPECT_LT(max_grad_error([&](const ad::Var& v) { return probe(ad::matmul(v, ad::constant(b))); }, x), 1e-8);
  EXPECT_LT(max_grad_error([&](const ad::Var& v) { return probe(ad::matmul_nt(v, v)); }, x), 1e-8);
  EXPECT_LT(max_grad_error([&](const ad::Var& v) { return probe(ad::tanh(ad::relu(v))); }, x), 1e-8);
  EXPECT_LT(max_grad_error([&](const ad::Var& v) { return probe(ad::softmax_rows(v, mask)); }, x), 1e-8);
  EXPECT_LT(max_grad_error(
                [&](const ad::Var& v) {
                  const ad::Var y = ad::matmul(v, ad::constant(b));
                  return probe(ad::batchnorm_train(ad::add_row(y, ad::constant(row)), ad::constant(gamma),
                                                   ad::constant(row), 1e-5));
                },
                x),
            1e-7);
  EXPECT_LT(max_grad_error(
                [&](const ad::Var& v) {
                  const ad::Var r = ad::slice_rows(v, 1, 2);
                  return ad::pick(ad::log_softmax_row(r, mask), 0, 2);
                },
                x),
            1e-8);
  EXPECT_LT(max_grad_error(
                [&](const ad::Var& v) {
                  return probe(ad::concat_cols(ad::mean_rows(v), ad::gather_rows(ad::slice_cols(v, 1, 3), {2})));
                },
                x),
            1e-8);
}

TEST(Autodiff, GammaAndBetaGradients) {
  Rng rng(4);
  const Tensor x = random_tensor(6, 3, rng);
  const Tensor beta = random_tensor(1, 3, rng);
  const Tensor mean = random_tensor(1, 3, rng);
  const Tensor var(1, 3, 0.5);
  EXPECT_LT(max_grad_error(
                [&](const ad::Var& g) {
                  return probe(ad::batchnorm_train(ad::constant(x), g, ad::constant(beta), 1e-5));
                },
                random_tensor(1, 3, rng)),
            1e-8);
  EXPECT_LT(max_grad_error(
                [&](const ad::Var& v) {
                  return probe(ad::batchnorm_eval(v, ad::constant(beta), ad::constant(beta), mean, var, 1e-5));
                },
                x),
            1e-8);
}

TEST(Autodiff, NoGradGuardDropsTape) {
  const ad::Var a = ad::leaf(Tensor(1, 1, 2.0));
  {
    ad::NoGradGuard g;
    EXPECT_FALSE(ad::scale(a, 3.0).requires_grad());
  }
  EXPECT_TRUE(ad::scale(a, 3.0).requires_grad());
}

TEST(Autodiff, SharedSubgraphAccumulates) {
  const ad::Var a = ad::leaf(Tensor(1, 1, 2.0));
  const ad::Var b = ad::scale(a, 3.0);
  ad::backward(ad::sum_scalars({b, b, a}));
  EXPECT_EQ(a.grad()[0], 7.0);
}

TEST(Tensor, ShapeMismatchThrows) {
  try {
    matmul(Tensor(2, 3), Tensor(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(InitParams, DeterministicAndBounded) {
  const PolicyParams a = init_params(11, toy_hyper());
  const PolicyParams b = init_params(11, toy_hyper());
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params(12, toy_hyper()));
  const double bound = 1.0 / std::sqrt(16.0);
  for_each_block(
      a.hyper,
      [&](const std::string& name, const Tensor& t) {
        EXPECT_GT(t.size(), 0u) << name;
        EXPECT_LE(max_abs(t), bound) << name;
      },
      a.w);
}

TEST(InitParams, HeadDimension) {
  PolicyHyper h;
  h.d_h = 8;
  h.heads = 2;
  EXPECT_EQ(h.head_dim(), 4);
  h.heads = 3;
  EXPECT_THROW(validate(h), Error);
}

TEST(InitParams, HeadProjectionToggleRemovesBlock) {
  PolicyHyper h = toy_hyper();
  const auto with = init_params(1, h).block_names();
  h.head_projection = false;
  const auto without = init_params(1, h).block_names();
  EXPECT_EQ(with.size(), without.size() + 1);
  EXPECT_EQ(std::count(without.begin(), without.end(), "layer0.Wo"), 0);
}

TEST(Encoder, SingleNodeAttendsToItself) {
  const PolicyParams p = init_params(2, toy_hyper());
  const EncoderOutput out = encode(p, Tensor(1, 3, std::vector<double>{0.2, 0.4, 1.0}));
  ASSERT_EQ(out.node_embeddings.rows(), 1);
  for (int j = 0; j < 16; ++j) EXPECT_EQ(out.node_embeddings.value()(0, j), out.graph_mean.value()(0, j));
  ad::NoGradGuard g;
  const ad::Var s = ad::softmax_rows(ad::constant(Tensor(1, 1, -3.7)));
  EXPECT_EQ(s.value()[0], 1.0);
}

TEST(Encoder, FullSizeShape) {
  const PolicyParams p = init_params(3, PolicyHyper{});
  const ScenarioInstance s = testing::random_scenario(15, 5, 3);
  const EncoderOutput out = encode(p, node_features(s));
  EXPECT_EQ(out.node_embeddings.value().shape(), (std::vector<int>{20, 128}));
  EXPECT_EQ(out.graph_mean.value().shape(), (std::vector<int>{1, 128}));
}

TEST(Encoder, PermutationEquivariance) {
  const PolicyParams p = init_params(4, toy_hyper());
  const ScenarioInstance s = testing::random_scenario(6, 3, 4);
  const Tensor f = node_features(s);
  std::vector<int> perm(static_cast<std::size_t>(f.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[3]);
  Tensor g(f.rows(), 3);
  for (int i = 0; i < f.rows(); ++i)
    for (int j = 0; j < 3; ++j) g(i, j) = f(perm[static_cast<std::size_t>(i)], j);
  for (BnMode mode : {BnMode::kEval, BnMode::kTrain}) {
    ad::NoGradGuard guard;
    const WeightVars w = as_vars(p, false);
    const EncoderOutput a = encode_batch(p, w, {f}, mode).front();
    const EncoderOutput b = encode_batch(p, w, {g}, mode).front();
    for (int i = 0; i < f.rows(); ++i)
      for (int j = 0; j < 16; ++j)
        EXPECT_NEAR(b.node_embeddings.value()(i, j), a.node_embeddings.value()(perm[static_cast<std::size_t>(i)], j),
                    1e-12);
    for (int j = 0; j < 16; ++j) EXPECT_NEAR(a.graph_mean.value()(0, j), b.graph_mean.value()(0, j), 1e-12);
  }
}

TEST(Encoder, EvalModeIgnoresBatchComposition) {
  const PolicyParams p = init_params(5, toy_hyper());
  const Tensor f1 = node_features(testing::random_scenario(6, 3, 1));
  const Tensor f2 = node_features(testing::random_scenario(6, 3, 2));
  ad::NoGradGuard guard;
  const WeightVars w = as_vars(p, false);
  const auto alone = encode_batch(p, w, {f1}, BnMode::kEval);
  const auto paired = encode_batch(p, w, {f1, f2}, BnMode::kEval);
  EXPECT_EQ(alone[0].node_embeddings.value(), paired[0].node_embeddings.value());
  const auto train_alone = encode_batch(p, w, {f1}, BnMode::kTrain);
  const auto train_paired = encode_batch(p, w, {f1, f2}, BnMode::kTrain);
  EXPECT_NE(train_alone[0].node_embeddings.value(), train_paired[0].node_embeddings.value());
}

TEST(Encoder, RejectsBadFeatures) {
  const PolicyParams p = init_params(5, toy_hyper());
  try {
    encode(p, Tensor(4, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

class DecodeTest : public ::testing::Test {
 protected:
  DecodeTest() : p(init_params(6, toy_hyper())), env(testing::random_scenario(6, 3, 6)) {}
  PolicyParams p;
  Environment env;
};

TEST_F(DecodeTest, ValidDistributionOnRandomStates) {
  Rng rng(6);
  EnvState st = env.initial_state();
  for (int k = 0; k < 30 && st.clock < env.scenario().mission_period; ++k) {
    const std::vector<char> mask = env.feasible_actions(st);
    const std::vector<double> probs = decode_step(p, env, st, mask);
    ASSERT_EQ(probs.size(), mask.size());
    double sum = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
      EXPECT_GE(probs[a], 0.0);
      if (!mask[a]) EXPECT_EQ(probs[a], 0.0);
      sum += probs[a];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    std::vector<std::size_t> ok;
    for (std::size_t a = 0; a < mask.size(); ++a)
      if (mask[a]) ok.push_back(a);
    st = env.step(st, ok[rng.index(ok.size())]).next;
  }
}

TEST_F(DecodeTest, SingleUnmaskedActionIsCertain) {
  const EnvState st = env.initial_state();
  std::vector<char> mask(env.actions().size(), 0);
  mask[4] = 1;
  const std::vector<double> probs = decode_step(p, env, st, mask);
  EXPECT_EQ(probs[4], 1.0);
  for (std::size_t a = 0; a < probs.size(); ++a)
    if (a != 4) EXPECT_EQ(probs[a], 0.0);
}

TEST_F(DecodeTest, AllMaskedThrows) {
  const std::vector<char> mask(env.actions().size(), 0);
  try {
    decode_step(p, env, env.initial_state(), mask);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAllMasked);
  }
}

TEST_F(DecodeTest, EqualAgesCarryNoInformation) {
  EnvState st = env.initial_state();
  const std::vector<char> mask = env.feasible_actions(st);
  std::fill(st.ages.begin(), st.ages.end(), 100.0);
  const auto a = decode_step(p, env, st, mask);
  std::fill(st.ages.begin(), st.ages.end(), 2500.0);
  const auto b = decode_step(p, env, st, mask);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  st.ages[2] = 9000.0;
  const auto c = decode_step(p, env, st, mask);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(c[i] - b[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Decode, GreedyIgnoresPositiveRescaling) {
  Rng rng(8);
  const std::vector<char> mask{1, 1, 0, 1, 1, 1};
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = random_tensor(1, 6, rng);
    ad::NoGradGuard g;
    const auto a = ad::log_softmax_row(ad::constant(logits), mask).value().values();
    const auto b = ad::log_softmax_row(ad::scale(ad::constant(logits), 3.5), mask).value().values();
    EXPECT_EQ(greedy_choice(a), greedy_choice(b));
  }
}

TEST(Decode, GreedyTieBreaksLow) {
  const double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_EQ(greedy_choice({ninf, -0.5, -0.5, -2.0}), 1u);
}

TEST(Decode, InverseCdfSampling) {
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> lp{std::log(0.25), ninf, std::log(0.75)};
  Rng rng(9);
  int first = 0;
  for (int i = 0; i < 4000; ++i) {
    const std::size_t a = sample_choice(lp, rng);
    ASSERT_NE(a, 1u);
    first += a == 0;
  }
  EXPECT_NEAR(first / 4000.0, 0.25, 0.03);
}

TEST_F(DecodeTest, GreedyRolloutIsDeterministic) {
  Rng r1(1), r2(2);
  const Trajectory a = rollout(p, env, RolloutMode::kGreedy, r1);
  const Trajectory b = rollout(p, env, RolloutMode::kGreedy, r2);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.log_probs, b.log_probs);
  EXPECT_EQ(a.reward, b.reward);
}

TEST_F(DecodeTest, SampledRolloutsReplayThroughTheEnvironment) {
  Rng rng(10);
  for (int k = 0; k < 10; ++k) {
    const Trajectory t = rollout(p, env, RolloutMode::kSample, rng);
    EpisodeLog log = EpisodeLog::start(env.scenario());
    EnvState st = env.initial_state();
    for (std::size_t i = 0; i < t.actions.size(); ++i) {
      EXPECT_TRUE(std::isfinite(t.log_probs[i]));
      ASSERT_TRUE(env.feasible_actions(st)[t.actions[i]]);
      StepOutcome out = env.step(st, t.actions[i]);
      log.record(out);
      st = out.next;
    }
    EXPECT_GE(st.clock, env.scenario().mission_period);
    EXPECT_EQ(t.reward, episode_reward(log));
  }
}

TEST_F(DecodeTest, SampleBestOfOneIsASingleSample) {
  Rng r1(12), r2(12);
  const Trajectory a = sample_best(p, env, 1, r1);
  const Trajectory b = rollout(p, env, RolloutMode::kSample, r2);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.reward, b.reward);
}

TEST_F(DecodeTest, SampleBestBeatsPoolMedian) {
  Rng r1(13), r2(13);
  const Trajectory best = sample_best(p, env, 15, r1);
  std::vector<double> pool;
  for (int i = 0; i < 15; ++i) pool.push_back(rollout(p, env, RolloutMode::kSample, r2).reward);
  std::sort(pool.begin(), pool.end());
  EXPECT_GE(best.reward, pool[7]);
  EXPECT_EQ(best.reward, pool.back());
  EXPECT_THROW(sample_best(p, env, 0, r1), Error);
}

TEST(ParamsFile, RoundTripIsBitExact) {
  PolicyParams p = init_params(14, toy_hyper());
  p.running[1].mean[3] = 0.123456789;
  const auto path = std::filesystem::temp_directory_path() / "persurv_params_test.bin";
  save_params(p, path);
  const PolicyParams q = load_params(path);
  EXPECT_TRUE(p == q);
  EXPECT_EQ(params_to_bytes(q), read_file(path));
  std::filesystem::remove(path);
}

TEST(ParamsFile, TruncationIsCorrupt) {
  const std::string bytes = params_to_bytes(init_params(15, toy_hyper()));
  for (std::size_t cut : {std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      params_from_bytes(bytes.substr(0, cut));
      FAIL() << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kCorruptFile);
    }
  }
}

TEST(ParamsFile, HyperMismatchAndVersion) {
  const std::string bytes = params_to_bytes(init_params(16, toy_hyper()));
  PolicyHyper other = toy_hyper();
  other.d_h = 32;
  try {
    params_from_bytes(bytes, &other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormatVersionMismatch);
  }
  // Bump the version and re-seal the checksum.
  std::string bumped = bytes.substr(0, bytes.size() - 4);
  bumped[8] = 2;
  const std::uint32_t crc = crc32_of(bumped);
  bumped.append(reinterpret_cast<const char*>(&crc), 4);
  try {
    params_from_bytes(bumped);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormatVersionMismatch);
  }
}

}  // namespace
}  // namespace persurv
