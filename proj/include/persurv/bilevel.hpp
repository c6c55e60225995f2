#pragma once

#include <vector>

#include "persurv/environment.hpp"
#include "persurv/episode.hpp"
#include "persurv/error.hpp"
#include "persurv/oevrptw.hpp"
#include "persurv/traversal.hpp"

namespace persurv {

// Stops reachable by the UGV within T_f, `spacing` meters apart along the
// route ahead of arclength `ugv_offset`, plus every ground point in range.
// `ground` pairs a mission point index with its position.
RefuelStopSet candidate_refuel_stops(const TraversalRoute& route, double ugv_offset, double T_f,
                                     double v_g, const std::vector<std::pair<int, Point2D>>& ground,
                                     double spacing = 500.0);
// Resolves the UGV position to its first arclength on the route; throws
// kOffRoad if the position is not on the route.
RefuelStopSet candidate_refuel_stops(Point2D ugv_pos, const TraversalRoute& route, double T_f, double v_g,
                                     double spacing = 500.0);

struct Waypoint {
  Point2D pos;
  double t = 0.0;
  int point = -1;  // mission point index, if the waypoint is one
};

struct UavSortie {
  std::vector<Waypoint> waypoints;  // start, visited nodes, terminal stop arrival
  RefuelStop terminal;
  OevrptwSolution solution;
};

struct UgvSortie {
  // Road vertices from the cycle start to the stop, then the wait until the
  // recharge completes.
  std::vector<Waypoint> waypoints;
};

struct HorizonPlan {
  UavSortie uav;
  UgvSortie ugv;
  RendezvousRecord rendezvous;
  std::vector<VisitEvent> events;  // sorted by time
  double ugv_offset_after = 0.0;
  double cycle_end = 0.0;  // rendezvous time + T_R
};

class BilevelPlanner {
 public:
  BilevelPlanner(const ScenarioInstance& s, PlannerConfig cfg);

  const TraversalRoute& route() const { return route_; }
  const PlannerConfig& config() const { return cfg_; }

  RefuelStopSet refuel_stops(double ugv_offset, double T_f) const;
  OevrptwInstance make_instance(const EnvState& st, RefuelStopSet stops) const;
  // `cycle` perturbs the seed of stochastic metaheuristics.
  HorizonPlan plan_horizon(const EnvState& st, double ugv_offset, int cycle = 0) const;

 private:
  const ScenarioInstance& s_;
  PlannerConfig cfg_;
  TraversalRoute route_;
  std::vector<std::pair<int, Point2D>> ground_;
  std::vector<std::vector<double>> ground_hits_;  // arclengths on the route per ground point
};

struct RecedingResult {
  EpisodeLog log;
  std::vector<HorizonPlan> cycles;
};

// Planner failure mid-run; carries the log up to the last completed cycle.
class PlannerRunError : public Error {
 public:
  PlannerRunError(const Error& cause, RecedingResult partial)
      : Error(cause.code(), cause.what()), partial_(std::move(partial)) {}
  const RecedingResult& partial() const { return partial_; }

 private:
  RecedingResult partial_;
};

RecedingResult run_receding_horizon(const ScenarioInstance& s, const PlannerConfig& cfg,
                                    double priority_scale = 0.0);

// Shared sortie document: one entry per cycle with timestamped waypoints.
std::string sorties_to_json(const ScenarioInstance& s, const std::vector<HorizonPlan>& cycles);

}  // namespace persurv
