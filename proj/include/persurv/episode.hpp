#pragma once

#include <string>
#include <vector>

#include "persurv/environment.hpp"

namespace persurv {

// Everything needed to recompute the mission metrics from scratch.
struct EpisodeLog {
  std::vector<int> point_ids;
  std::vector<double> weights;
  // Virtual first visit per point: 0 for original points, the injection time
  // for points added during a mission.
  std::vector<double> origin_times;
  double mission_period = 0.0;
  double terminal_clock = 0.0;
  std::vector<VisitEvent> events;
  std::vector<RendezvousRecord> rendezvous;
  // One entry per policy-selected action (empty for planner-driven runs).
  std::vector<double> reward_terms;

  static EpisodeLog start(const ScenarioInstance& s);
  // Appends a point added mid-mission.
  void add_point(const MissionPoint& p, double origin_time);
  void record(const StepOutcome& step);
};

struct ScoreOptions {
  bool weighted = false;
  // Also penalize the stretch from the last visit to T_m.
  bool include_terminal_gap = false;
};

// (1/T_m^2) sum_k sum_q w_k (t_q - t_{q-1})^2 with t_0 = origin time.
double episode_score(const EpisodeLog& log, ScoreOptions opts = {});
inline double episode_score(const EpisodeLog& log, bool weighted) {
  return episode_score(log, ScoreOptions{weighted, false});
}

// -(1/T_m^2) sum_t r_t over the recorded action rewards.
double episode_reward(const EpisodeLog& log);

struct AgeStatistics {
  double max_age = 0.0;
  double avg_age = 0.0;
};

AgeStatistics age_statistics(const EpisodeLog& log, double t);

// Unweighted age of every point at time t reconstructed from the events.
std::vector<double> ages_at(const EpisodeLog& log, double t);

// Largest gap between consecutive visits (from the origin time up to
// `until`) for every point.
std::vector<double> max_age_per_point(const EpisodeLog& log, double until);

class Rng;

// Uniformly random feasible actions until the clock reaches T_m. `trace`, if
// given, receives every visited state including the initial one.
EpisodeLog random_policy_episode(const Environment& env, Rng& rng,
                                 std::vector<EnvState>* trace = nullptr);

// JSON-lines: one {t, point_id, visitor, kind} line per event, then a
// summary record carrying everything else in the log.
std::string episode_to_jsonl(const EpisodeLog& log);
EpisodeLog episode_from_jsonl(const std::string& text);

}  // namespace persurv
