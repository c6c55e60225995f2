#pragma once

#include <cstdint>
#include <vector>

#include "persurv/scenario.hpp"

namespace persurv::testing {

inline RoadNetwork line_road(double x0 = 0.0, double x1 = 10000.0) {
  const std::vector<Polyline> lines{{{x0, 0.0}, {x1, 0.0}}};
  return RoadNetwork::build(lines);
}

// Straight road along the x-axis with caller-supplied points.
inline ScenarioInstance line_scenario(std::vector<MissionPoint> points, double T_m = 3600.0) {
  ScenarioInstance s;
  s.road = line_road();
  s.depot = {0.0, 0.0};
  s.points = std::move(points);
  s.mission_period = T_m;
  return s;
}

inline ScenarioInstance random_scenario(int n_aerial, int n_ground, std::uint64_t seed,
                                        double T_m = 6000.0,
                                        SpatialDistribution kind = SpatialDistribution::kUniform) {
  DistributionConfig cfg;
  cfg.kind = kind;
  cfg.n_aerial = n_aerial;
  cfg.n_ground = n_ground;
  cfg.seed = seed;
  return sample_scenario(cfg, build_road_network(default_road_polylines()), VehicleParams{}, T_m);
}

}  // namespace persurv::testing
