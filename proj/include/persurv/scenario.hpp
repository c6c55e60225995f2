#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "persurv/road_network.hpp"

namespace persurv {

enum class PointKind { kGround, kAerial };

struct MissionPoint {
  int id = 0;
  Point2D pos;
  PointKind kind = PointKind::kAerial;
  double weight = 1.0;
};

struct VehicleParams {
  double v_a = 10.0;   // UAV cruise speed, m/s
  double v_g = 4.5;    // UGV speed, m/s
  double F_a = 287700.0;  // UAV energy capacity, J
  // Power polynomial P(v) = c0 v^3 + c1 v^2 + c2 v + c3, watts.
  std::array<double, 4> power_coeffs{0.0461, -0.5834, -1.8761, 229.6};
  double T_R = 300.0;  // recharge service time, s
};

double fuel_power(double v, const VehicleParams& vehicle);
// Energy for a straight cruise of `distance` meters at v_a.
double edge_energy(double distance, const VehicleParams& vehicle);
double max_flight_time(const VehicleParams& vehicle);
// Straight-line distance coverable on a full charge.
double max_range(const VehicleParams& vehicle);

struct ScenarioInstance {
  Point2D depot;
  RoadNetwork road;
  std::vector<MissionPoint> points;
  VehicleParams vehicle;
  double mission_period = 0.0;  // T_m, seconds

  std::size_t ground_count() const;
  std::size_t aerial_count() const;
};

// Throws kValidation naming the offending field path (e.g. "vehicle.v_a").
void validate(const ScenarioInstance& s);

enum class SpatialDistribution { kUniform, kGaussian, kRayleigh, kExponential };

std::string to_string(SpatialDistribution d);
SpatialDistribution distribution_from_string(const std::string& name);

struct DistributionConfig {
  SpatialDistribution kind = SpatialDistribution::kUniform;
  double radius = 4000.0;
  int n_aerial = 15;
  int n_ground = 5;
  std::uint64_t seed = 0;
};

// Ground points (and the depot) are uniform by arclength over the road;
// aerial points are offset from uniformly chosen ground anchors by the radial
// law of `cfg.kind`. Deterministic in (cfg, road, vehicle, T_m).
ScenarioInstance sample_scenario(const DistributionConfig& cfg, const RoadNetwork& road,
                                 const VehicleParams& vehicle, double mission_period);

// JSON scenario file (canonical key order, UTF-8).
std::string scenario_to_json(const ScenarioInstance& s);
ScenarioInstance scenario_from_json(const std::string& text);
ScenarioInstance load_scenario(const std::filesystem::path& path);
void save_scenario(const ScenarioInstance& s, const std::filesystem::path& path);

}  // namespace persurv
