#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "persurv/episode.hpp"
#include "persurv/error.hpp"
#include "persurv/rng.hpp"

namespace persurv {
namespace {

EpisodeLog one_point_log(std::vector<double> visits, double weight = 1.0) {
  EpisodeLog log;
  log.point_ids = {7};
  log.weights = {weight};
  log.origin_times = {0.0};
  log.mission_period = 1000.0;
  double last = 0.0;
  for (double t : visits) {
    log.events.push_back({t, 0, Visitor::kUav, EventKind::kVisit});
    log.reward_terms.push_back((t - last) * (t - last));
    last = t;
  }
  log.terminal_clock = visits.empty() ? 0.0 : visits.back();
  return log;
}

TEST(Score, HandExample) {
  const EpisodeLog log = one_point_log({500, 1000});
  EXPECT_DOUBLE_EQ(episode_score(log, false), 0.5);
  EXPECT_DOUBLE_EQ(episode_reward(log), -0.5);
}

TEST(Score, NoVisitsIsZero) {
  const EpisodeLog log = one_point_log({});
  EXPECT_EQ(episode_score(log, false), 0.0);
  EXPECT_EQ(episode_reward(log), 0.0);
}

TEST(Score, WeightedExample) {
  const EpisodeLog log = one_point_log({500, 1000}, 1.5);
  EXPECT_DOUBLE_EQ(episode_score(log, true), 0.75);
  EXPECT_DOUBLE_EQ(episode_score(log, false), 0.5);
}

TEST(Score, TerminalGapFlag) {
  const EpisodeLog log = one_point_log({400});
  EXPECT_DOUBLE_EQ(episode_score(log, ScoreOptions{false, false}), 0.16);
  EXPECT_DOUBLE_EQ(episode_score(log, ScoreOptions{false, true}), 0.16 + 0.36);
}

TEST(Score, RewardIsNonPositive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Environment env(testing::random_scenario(6, 3, seed));
    Rng rng(seed);
    EXPECT_LE(episode_reward(random_policy_episode(env, rng)), 0.0);
  }
}

TEST(AgeStatistics, Examples) {
  EpisodeLog log;
  log.point_ids = {1, 2};
  log.weights = {1.0, 1.0};
  log.origin_times = {0.0, 0.0};
  log.mission_period = 1000.0;
  EXPECT_EQ(age_statistics(log, 0.0).max_age, 0.0);
  EXPECT_EQ(age_statistics(log, 0.0).avg_age, 0.0);
  log.events = {{100, 0, Visitor::kUav, EventKind::kVisit}, {300, 1, Visitor::kUav, EventKind::kVisit}};
  const AgeStatistics st = age_statistics(log, 400.0);
  EXPECT_DOUBLE_EQ(st.max_age, 300.0);
  EXPECT_DOUBLE_EQ(st.avg_age, 200.0);
  EXPECT_GE(st.max_age, st.avg_age);
}

TEST(AgeStatistics, MaxAgePerPoint) {
  const EpisodeLog log = one_point_log({100, 700, 800});
  EXPECT_DOUBLE_EQ(max_age_per_point(log, 1000.0)[0], 600.0);
  EXPECT_DOUBLE_EQ(max_age_per_point(log, 2000.0)[0], 1200.0);
}

TEST(EpisodeJsonl, RoundTrip) {
  const Environment env(testing::random_scenario(6, 3, 9));
  Rng rng(9);
  const EpisodeLog log = random_policy_episode(env, rng);
  const std::string text = episode_to_jsonl(log);
  const EpisodeLog back = episode_from_jsonl(text);
  EXPECT_EQ(episode_to_jsonl(back), text);
  EXPECT_EQ(episode_score(back, false), episode_score(log, false));
  EXPECT_EQ(back.events.size(), log.events.size());
  EXPECT_EQ(back.rendezvous.size(), log.rendezvous.size());
}

TEST(EpisodeJsonl, EventLineShape) {
  const std::string text = episode_to_jsonl(one_point_log({500}));
  EXPECT_EQ(text.substr(0, text.find('\n')), R"({"t":500.0,"point_id":7,"visitor":"uav","kind":"visit"})");
}

TEST(EpisodeJsonl, RejectsMissingSummary) {
  EXPECT_THROW(episode_from_jsonl(R"({"t":1.0,"point_id":7,"visitor":"uav","kind":"visit"})"), Error);
}

}  // namespace
}  // namespace persurv
