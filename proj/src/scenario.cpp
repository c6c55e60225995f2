#include "persurv/scenario.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include <json.hpp>

#include "persurv/error.hpp"
#include "persurv/io.hpp"
#include "persurv/rng.hpp"

namespace persurv {

using ojson = nlohmann::ordered_json;

double fuel_power(double v, const VehicleParams& vehicle) {
  const auto& c = vehicle.power_coeffs;
  return ((c[0] * v + c[1]) * v + c[2]) * v + c[3];
}

double edge_energy(double distance, const VehicleParams& vehicle) {
  return fuel_power(vehicle.v_a, vehicle) * (distance / vehicle.v_a);
}

double max_flight_time(const VehicleParams& vehicle) {
  return vehicle.F_a / fuel_power(vehicle.v_a, vehicle);
}

double max_range(const VehicleParams& vehicle) { return max_flight_time(vehicle) * vehicle.v_a; }

std::size_t ScenarioInstance::ground_count() const {
  std::size_t n = 0;
  for (const auto& p : points) n += p.kind == PointKind::kGround;
  return n;
}

std::size_t ScenarioInstance::aerial_count() const { return points.size() - ground_count(); }

void validate(const ScenarioInstance& s) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::kValidation, field + ": " + why);
  };
  const VehicleParams& v = s.vehicle;
  if (!(v.v_g > 0.0)) fail("vehicle.v_g", "must be positive");
  if (!(v.v_a > v.v_g)) fail("vehicle.v_a", "must exceed v_g");
  if (!(v.F_a > 0.0)) fail("vehicle.F_a", "must be positive");
  if (!(fuel_power(v.v_a, v) > 0.0)) fail("vehicle.power_coeffs", "power at v_a must be positive");
  if (!(v.T_R >= 0.0)) fail("vehicle.T_R", "must be non-negative");
  if (!(s.mission_period > 0.0)) fail("mission_period_s", "must be positive");
  if (s.road.edges().empty()) fail("road.polylines", "empty road network");
  if (!s.road.on_road(s.depot)) fail("depot", "not on the road network");
  std::set<int> ids;
  bool any_ground = false;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const MissionPoint& p = s.points[i];
    const std::string path = "points[" + std::to_string(i) + "]";
    if (!std::isfinite(p.pos.x) || !std::isfinite(p.pos.y)) fail(path, "non-finite position");
    if (!(p.weight > 0.0)) fail(path + ".weight", "must be positive");
    if (!ids.insert(p.id).second) fail(path + ".id", "duplicate id");
    if (p.kind == PointKind::kGround) {
      any_ground = true;
      if (!s.road.on_road(p.pos)) fail(path, "ground point farther than 1 m from the road");
    }
  }
  if (!any_ground) fail("points", "at least one ground point is required");
}

std::string to_string(SpatialDistribution d) {
  switch (d) {
    case SpatialDistribution::kUniform: return "uniform";
    case SpatialDistribution::kGaussian: return "gaussian";
    case SpatialDistribution::kRayleigh: return "rayleigh";
    case SpatialDistribution::kExponential: return "exponential";
  }
  return "uniform";
}

SpatialDistribution distribution_from_string(const std::string& name) {
  if (name == "uniform") return SpatialDistribution::kUniform;
  if (name == "gaussian") return SpatialDistribution::kGaussian;
  if (name == "rayleigh") return SpatialDistribution::kRayleigh;
  if (name == "exponential") return SpatialDistribution::kExponential;
  throw Error(ErrorCode::kValidation, "unknown distribution '" + name + "'");
}

namespace {

constexpr int kMaxRejections = 10000;

// Radial offset from an anchor; the caller applies the truncation.
double draw_radius(SpatialDistribution kind, double radius, Rng& rng) {
  switch (kind) {
    case SpatialDistribution::kUniform: return radius * std::sqrt(rng.uniform());
    case SpatialDistribution::kGaussian: return std::abs(rng.normal()) * radius / 2.0;
    case SpatialDistribution::kRayleigh: return rng.rayleigh(radius / 2.0);
    case SpatialDistribution::kExponential: return rng.exponential(2.0 / radius);
  }
  return 0.0;
}

}  // namespace

ScenarioInstance sample_scenario(const DistributionConfig& cfg, const RoadNetwork& road,
                                 const VehicleParams& vehicle, double mission_period) {
  if (!(cfg.radius > 0.0)) throw Error(ErrorCode::kValidation, "radius must be positive");
  if (cfg.n_aerial < 0 || cfg.n_ground < 1) {
    throw Error(ErrorCode::kValidation, "need n_ground >= 1 and n_aerial >= 0");
  }
  Rng rng(cfg.seed);
  const double total = road.total_length();

  ScenarioInstance s;
  s.road = road;
  s.vehicle = vehicle;
  s.mission_period = mission_period;
  s.depot = road.point_at_network_arclength(rng.uniform() * total);

  int next_id = 0;
  for (int i = 0; i < cfg.n_ground; ++i) {
    s.points.push_back({next_id++, road.point_at_network_arclength(rng.uniform() * total),
                        PointKind::kGround, 1.0});
  }
  const double truncation = 2.5 * cfg.radius;
  for (int i = 0; i < cfg.n_aerial; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRejections && !placed; ++attempt) {
      const Point2D anchor = s.points[rng.index(static_cast<std::size_t>(cfg.n_ground))].pos;
      const double r = draw_radius(cfg.kind, cfg.radius, rng);
      const double theta = 2.0 * std::numbers::pi * rng.uniform();
      if (r > truncation) continue;
      const Point2D p{anchor.x + r * std::cos(theta), anchor.y + r * std::sin(theta)};
      if (!inside_frame(p)) continue;
      s.points.push_back({next_id++, p, PointKind::kAerial, 1.0});
      placed = true;
    }
    if (!placed) {
      throw Error(ErrorCode::kExhaustedRejection,
                  "aerial point " + std::to_string(i) + " rejected 10000 times");
    }
  }
  return s;
}

std::string scenario_to_json(const ScenarioInstance& s) {
  ojson doc;
  ojson lines = ojson::array();
  for (const Polyline& line : s.road.source_polylines()) {
    ojson pts = ojson::array();
    for (const Point2D& p : line) pts.push_back({p.x, p.y});
    lines.push_back(std::move(pts));
  }
  doc["road"]["polylines"] = std::move(lines);
  ojson points = ojson::array();
  for (const MissionPoint& p : s.points) {
    ojson jp;
    jp["id"] = p.id;
    jp["x"] = p.pos.x;
    jp["y"] = p.pos.y;
    jp["kind"] = p.kind == PointKind::kGround ? "ground" : "aerial";
    jp["weight"] = p.weight;
    points.push_back(std::move(jp));
  }
  doc["points"] = std::move(points);
  doc["depot"] = {s.depot.x, s.depot.y};
  ojson veh;
  veh["v_a"] = s.vehicle.v_a;
  veh["v_g"] = s.vehicle.v_g;
  veh["F_a"] = s.vehicle.F_a;
  veh["power_coeffs"] = s.vehicle.power_coeffs;
  veh["T_R"] = s.vehicle.T_R;
  doc["vehicle"] = std::move(veh);
  doc["mission_period_s"] = s.mission_period;
  return doc.dump(1) + "\n";
}

namespace {

const ojson& require(const ojson& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::kValidation, path + (path.empty() ? "" : ".") + key + ": missing");
  }
  return j.at(key);
}

double number(const ojson& j, const std::string& path) {
  if (!j.is_number()) throw Error(ErrorCode::kValidation, path + ": expected a number");
  return j.get<double>();
}

Point2D pair(const ojson& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) {
    throw Error(ErrorCode::kValidation, path + ": expected [x, y]");
  }
  return {number(j[0], path + "[0]"), number(j[1], path + "[1]")};
}

}  // namespace

ScenarioInstance scenario_from_json(const std::string& text) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("malformed JSON: ") + e.what());
  }
  ScenarioInstance s;

  const ojson& lines = require(require(doc, "road", ""), "polylines", "road");
  if (!lines.is_array()) throw Error(ErrorCode::kValidation, "road.polylines: expected an array");
  std::vector<Polyline> polylines;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string path = "road.polylines[" + std::to_string(i) + "]";
    if (!lines[i].is_array()) throw Error(ErrorCode::kValidation, path + ": expected an array");
    Polyline line;
    for (std::size_t k = 0; k < lines[i].size(); ++k) {
      line.push_back(pair(lines[i][k], path + "[" + std::to_string(k) + "]"));
    }
    polylines.push_back(std::move(line));
  }
  s.road = RoadNetwork::build(polylines);

  const ojson& points = require(doc, "points", "");
  if (!points.is_array()) throw Error(ErrorCode::kValidation, "points: expected an array");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string path = "points[" + std::to_string(i) + "]";
    const ojson& jp = points[i];
    MissionPoint p;
    p.id = static_cast<int>(number(require(jp, "id", path), path + ".id"));
    p.pos = {number(require(jp, "x", path), path + ".x"), number(require(jp, "y", path), path + ".y")};
    const ojson& kind = require(jp, "kind", path);
    if (kind == "ground") {
      p.kind = PointKind::kGround;
    } else if (kind == "aerial") {
      p.kind = PointKind::kAerial;
    } else {
      throw Error(ErrorCode::kValidation, path + ".kind: expected \"ground\" or \"aerial\"");
    }
    p.weight = jp.contains("weight") ? number(jp["weight"], path + ".weight") : 1.0;
    s.points.push_back(p);
  }
  s.depot = pair(require(doc, "depot", ""), "depot");

  const ojson& veh = require(doc, "vehicle", "");
  s.vehicle.v_a = number(require(veh, "v_a", "vehicle"), "vehicle.v_a");
  s.vehicle.v_g = number(require(veh, "v_g", "vehicle"), "vehicle.v_g");
  s.vehicle.F_a = number(require(veh, "F_a", "vehicle"), "vehicle.F_a");
  const ojson& coeffs = require(veh, "power_coeffs", "vehicle");
  if (!coeffs.is_array() || coeffs.size() != 4) {
    throw Error(ErrorCode::kValidation, "vehicle.power_coeffs: expected four numbers");
  }
  for (std::size_t k = 0; k < 4; ++k) {
    s.vehicle.power_coeffs[k] = number(coeffs[k], "vehicle.power_coeffs[" + std::to_string(k) + "]");
  }
  s.vehicle.T_R = veh.contains("T_R") ? number(veh["T_R"], "vehicle.T_R") : 300.0;
  s.mission_period = number(require(doc, "mission_period_s", ""), "mission_period_s");
  validate(s);
  return s;
}

ScenarioInstance load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_file(path));
}

void save_scenario(const ScenarioInstance& s, const std::filesystem::path& path) {
  write_file_atomic(path, scenario_to_json(s));
}

}  // namespace persurv
