#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "persurv/environment.hpp"
#include "persurv/episode.hpp"
#include "persurv/error.hpp"
#include "persurv/rng.hpp"

namespace persurv {
namespace {

using testing::line_scenario;

// Depot at x=0; ground points at 1000 and 5000 on the road, one aerial point.
ScenarioInstance small_line() {
  return line_scenario({{1, {1000, 0}, PointKind::kGround, 1.0},
                        {2, {5000, 0}, PointKind::kGround, 1.0},
                        {3, {0, 3000}, PointKind::kAerial, 1.0}});
}

std::size_t action_of(const Environment& env, ActionKind kind, int point) {
  return env.actions().index({kind, point});
}

TEST(Environment, InitialState) {
  const Environment env(small_line());
  const EnvState st = env.initial_state();
  EXPECT_EQ(st.uav_pos, env.scenario().depot);
  EXPECT_EQ(st.ugv_pos, env.scenario().depot);
  EXPECT_EQ(st.fuel, 287700.0);
  EXPECT_EQ(st.clock, 0.0);
  for (double a : st.ages) EXPECT_EQ(a, 0.0);
  for (double t : st.last_visit) EXPECT_EQ(t, 0.0);
  EXPECT_FALSE(st.last_action.has_value());
}

TEST(Environment, ActionLayout) {
  const Environment env(small_line());
  const ActionSpace& a = env.actions();
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a.token(0), (ActionToken{ActionKind::kRecharge, 0}));
  EXPECT_EQ(a.token(1), (ActionToken{ActionKind::kRecharge, 1}));
  EXPECT_EQ(a.token(2), (ActionToken{ActionKind::kVisitGround, 0}));
  EXPECT_EQ(a.token(4), (ActionToken{ActionKind::kVisitAerial, 2}));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.index(a.token(i)), i);
}

TEST(Masking, FullFuelEverythingFeasible) {
  const Environment env(small_line());
  const std::vector<char> mask = env.feasible_actions(env.initial_state());
  for (char m : mask) EXPECT_TRUE(m);
}

TEST(Masking, FuelExactlyToNearestGroundPoint) {
  const Environment env(small_line());
  EnvState st = env.initial_state();
  st.fuel = edge_energy(1000.0, env.scenario().vehicle);
  const std::vector<char> mask = env.feasible_actions(st);
  EXPECT_TRUE(mask[action_of(env, ActionKind::kRecharge, 0)]);
  EXPECT_TRUE(mask[action_of(env, ActionKind::kVisitGround, 0)]);
  EXPECT_FALSE(mask[action_of(env, ActionKind::kRecharge, 1)]);
  EXPECT_FALSE(mask[action_of(env, ActionKind::kVisitGround, 1)]);
  EXPECT_FALSE(mask[action_of(env, ActionKind::kVisitAerial, 2)]);
}

TEST(Masking, VisitMustLeaveFuelForAGroundPoint) {
  // The aerial point is reachable but stranded: nothing on the road is within
  // the leftover fuel.
  const Environment env(small_line());
  EnvState st = env.initial_state();
  st.fuel = edge_energy(3100.0, env.scenario().vehicle);
  EXPECT_FALSE(env.is_feasible(st, {ActionKind::kVisitAerial, 2}));
  st.fuel = edge_energy(3000.0 + std::hypot(1000.0, 3000.0), env.scenario().vehicle);
  EXPECT_TRUE(env.is_feasible(st, {ActionKind::kVisitAerial, 2}));
}

TEST(Masking, NoRepeatAndNoDoubleRecharge) {
  const Environment env(small_line());
  EnvState st = env.initial_state();
  st = env.step(st, action_of(env, ActionKind::kVisitAerial, 2)).next;
  EXPECT_FALSE(env.is_feasible(st, {ActionKind::kVisitAerial, 2}));
  st = env.step(st, action_of(env, ActionKind::kRecharge, 0)).next;
  EXPECT_FALSE(env.is_feasible(st, {ActionKind::kRecharge, 0}));
  EXPECT_FALSE(env.is_feasible(st, {ActionKind::kRecharge, 1}));
  EXPECT_TRUE(env.is_feasible(st, {ActionKind::kVisitAerial, 2}));
}

TEST(Masking, DeadlockWhenNothingReachable) {
  const Environment env(small_line());
  EnvState st = env.initial_state();
  st.uav_pos = {0, 19000};
  st.fuel = 1000.0;
  try {
    env.feasible_actions(st);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDeadlock);
  }
}

TEST(Step, VisitThousandMeters) {
  const Environment env(small_line());
  const EnvState st = env.initial_state();
  const StepOutcome out = env.step(st, {ActionKind::kVisitGround, 0});
  EXPECT_DOUBLE_EQ(out.elapsed, 100.0);
  EXPECT_NEAR(st.fuel - out.next.fuel, 19859.9, 1e-6);
  EXPECT_EQ(out.next.last_visit[0], 100.0);
  EXPECT_EQ(out.next.ages[0], 0.0);
  EXPECT_EQ(out.next.ages[1], 100.0);
}

TEST(Step, RechargeWaitsForSlowerVehicle) {
  // Ground point 4050 m down the road: the UGV needs 900 s, the UAV 100 s.
  const Environment env(line_scenario({{1, {4050, 0}, PointKind::kGround, 1.0}}));
  EnvState st = env.initial_state();
  st.uav_pos = {4050, 1000};
  st.fuel = 100000.0;
  const StepOutcome out = env.step(st, {ActionKind::kRecharge, 0});
  EXPECT_DOUBLE_EQ(out.elapsed, 1200.0);
  EXPECT_EQ(out.next.fuel, env.scenario().vehicle.F_a);
  ASSERT_TRUE(out.rendezvous.has_value());
  EXPECT_DOUBLE_EQ(out.rendezvous->t, 900.0);
  EXPECT_DOUBLE_EQ(out.next.last_visit[0], 900.0);
  EXPECT_EQ(out.next.ugv_pos, (Point2D{4050, 0}));
}

TEST(Step, RewardIsSquaredAge) {
  const Environment env(small_line());
  EnvState st = env.initial_state();
  st.clock = 100.0;
  for (double& a : st.ages) a = 100.0;
  const StepOutcome out = env.step(st, {ActionKind::kVisitGround, 0});
  EXPECT_DOUBLE_EQ(out.reward_term, 40000.0);
}

TEST(Step, PassThroughResetsIntermediateGroundPoints) {
  const Environment env(small_line());
  EnvState st = env.initial_state();
  const StepOutcome out = env.step(st, {ActionKind::kRecharge, 1});
  ASSERT_EQ(out.events.size(), 2u);
  EXPECT_EQ(out.events[0].kind, EventKind::kPassThrough);
  EXPECT_EQ(out.events[0].point, 0);
  EXPECT_NEAR(out.events[0].t, 1000.0 / 4.5, 1e-9);
  EXPECT_EQ(out.events[1].kind, EventKind::kRecharge);
  EXPECT_NEAR(out.next.last_visit[0], 1000.0 / 4.5, 1e-9);
}

TEST(Step, MaskedActionThrows) {
  const Environment env(small_line());
  EnvState st = env.step(env.initial_state(), {ActionKind::kRecharge, 0}).next;
  try {
    env.step(st, {ActionKind::kRecharge, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInfeasibleAction);
  }
}

TEST(WeightedAge, Examples) {
  EXPECT_EQ(weighted_age_update(100.0, 60.0, 1.0, 0.75), 160.0);
  EXPECT_DOUBLE_EQ(weighted_age_update(100.0, 60.0, 1.5, 0.75), 182.5);
  EXPECT_DOUBLE_EQ(weighted_age_update(100.0, 60.0, 0.5, 0.75), 137.5);
}

TEST(WeightedAge, UnitWeightIsBitIdentical) {
  Rng rng(5);
  double weighted = 0.0, plain = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double dt = rng.uniform(0.0, 500.0);
    weighted = weighted_age_update(weighted, dt, 1.0, 0.75);
    plain = plain + dt;
  }
  EXPECT_EQ(weighted, plain);
}

TEST(Properties, RandomRolloutsAreSafe) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Environment env(testing::random_scenario(6, 3, seed, 6000.0));
    Rng rng(seed);
    std::vector<EnvState> trace;
    const EpisodeLog log = random_policy_episode(env, rng, &trace);
    for (std::size_t k = 1; k < trace.size(); ++k) {
      const EnvState& prev = trace[k - 1];
      const EnvState& cur = trace[k];
      EXPECT_GE(cur.fuel, 0.0);
      EXPECT_GT(cur.clock, prev.clock);
      ASSERT_TRUE(cur.last_action.has_value());
      if (!cur.last_action->is_visit()) EXPECT_EQ(cur.fuel, env.scenario().vehicle.F_a);
      if (prev.last_action) {
        EXPECT_FALSE(!prev.last_action->is_visit() && !cur.last_action->is_visit());
        EXPECT_FALSE(cur.last_action->is_visit() && prev.last_action->point == cur.last_action->point);
      }
      // Ages rebuilt from the log match the incrementally maintained ones.
      const std::vector<double> ages = ages_at(log, cur.clock);
      for (std::size_t p = 0; p < ages.size(); ++p) EXPECT_NEAR(ages[p], cur.ages[p], 1e-9);
    }
    EXPECT_NEAR(-episode_reward(log), episode_score(log, false), 1e-9);
  }
}

}  // namespace
}  // namespace persurv
