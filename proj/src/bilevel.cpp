#include "persurv/bilevel.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace persurv {

namespace {

std::vector<double> cumulative(const Polyline& path) {
  std::vector<double> cum(path.size(), 0.0);
  for (std::size_t i = 1; i < path.size(); ++i) cum[i] = cum[i - 1] + distance(path[i - 1], path[i]);
  return cum;
}

// Smallest non-negative distance ahead of `from` at which arclength `s` is
// reached; negative when it lies behind on an open route.
double ahead_of(const TraversalRoute& route, double from, double s) {
  double d = s - from;
  if (route.closed && route.length > 0.0) {
    d = std::fmod(d, route.length);
    if (d < 0.0) d += route.length;
  }
  return d;
}

// Stop range along the route, never wrapping onto the start again.
double reach(const TraversalRoute& route, double ugv_offset, double range) {
  if (route.closed) return std::min(range, std::nextafter(route.length, 0.0));
  return std::min(range, route.length - ugv_offset);
}

RefuelStopSet build_stops(const TraversalRoute& route, double ugv_offset, double range, double v_g,
                          const std::vector<std::pair<int, Point2D>>& ground,
                          const std::vector<std::vector<double>>& hits, double spacing) {
  const double limit = reach(route, ugv_offset, range);
  RefuelStopSet out;
  for (std::size_t g = 0; g < ground.size(); ++g) {
    double best = -1.0;
    for (double h : hits[g]) {
      const double d = ahead_of(route, ugv_offset, h);
      if (d >= 0.0 && d <= limit && (best < 0.0 || d < best)) best = d;
    }
    if (best >= 0.0) out.push_back({ground[g].second, best / v_g, best, ground[g].first});
  }
  const std::size_t n_ground = out.size();
  for (int k = 0;; ++k) {
    const double d = k * spacing;
    if (d > limit) break;
    const Point2D p = route_point(route, ugv_offset + d);
    bool dup = false;
    for (std::size_t g = 0; g < n_ground; ++g) dup = dup || distance(out[g].pos, p) <= kSnapTolerance;
    if (!dup) out.push_back({p, d / v_g, d, -1});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RefuelStop& a, const RefuelStop& b) { return a.route_offset < b.route_offset; });
  return out;
}

}  // namespace

RefuelStopSet candidate_refuel_stops(const TraversalRoute& route, double ugv_offset, double T_f,
                                     double v_g, const std::vector<std::pair<int, Point2D>>& ground,
                                     double spacing) {
  std::vector<std::vector<double>> hits;
  for (const auto& g : ground) hits.push_back(arclength_hits(route.path, g.second));
  return build_stops(route, ugv_offset, v_g * T_f, v_g, ground, hits, spacing);
}

RefuelStopSet candidate_refuel_stops(Point2D ugv_pos, const TraversalRoute& route, double T_f, double v_g,
                                     double spacing) {
  const std::vector<double> at = arclength_hits(route.path, ugv_pos);
  if (at.empty()) throw Error(ErrorCode::kOffRoad, "UGV position is not on the traversal route");
  return candidate_refuel_stops(route, at.front(), T_f, v_g, {}, spacing);
}

BilevelPlanner::BilevelPlanner(const ScenarioInstance& s, PlannerConfig cfg)
    : s_(s), cfg_(cfg), route_(ugv_traversal_direction(s)) {
  validate(cfg_);
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (s.points[i].kind != PointKind::kGround) continue;
    ground_.emplace_back(static_cast<int>(i), s.points[i].pos);
    ground_hits_.push_back(arclength_hits(route_.path, s.points[i].pos));
  }
}

RefuelStopSet BilevelPlanner::refuel_stops(double ugv_offset, double T_f) const {
  return build_stops(route_, ugv_offset, s_.vehicle.v_g * T_f, s_.vehicle.v_g, ground_, ground_hits_,
                     cfg_.stop_spacing);
}

OevrptwInstance BilevelPlanner::make_instance(const EnvState& st, RefuelStopSet stops) const {
  OevrptwInstance inst;
  inst.start = st.uav_pos;
  inst.fuel = st.fuel;
  inst.vehicle = s_.vehicle;
  inst.stops = std::move(stops);
  for (std::size_t i = 0; i < s_.points.size(); ++i) {
    inst.nodes.push_back(s_.points[i].pos);
    inst.penalties.push_back(cfg_.penalty_scale * st.ages[i] * st.ages[i]);
  }
  inst.finalize();
  return inst;
}

HorizonPlan BilevelPlanner::plan_horizon(const EnvState& st, double ugv_offset, int cycle) const {
  const VehicleParams& veh = s_.vehicle;
  const double T_f = st.fuel / fuel_power(veh.v_a, veh);
  const OevrptwInstance inst = make_instance(st, refuel_stops(ugv_offset, T_f));
  PlannerConfig cfg = cfg_;
  cfg.seed = cfg_.seed + static_cast<std::uint64_t>(cycle) * 0x9E3779B97F4A7C15ULL;
  const OevrptwSolution sol = solve_oevrptw(inst, cfg);

  HorizonPlan plan;
  plan.uav.solution = sol;
  plan.uav.terminal = inst.stops[sol.stop];
  const RefuelStop& stop = plan.uav.terminal;

  double t = st.clock;
  Point2D pos = st.uav_pos;
  plan.uav.waypoints.push_back({pos, t, -1});
  for (int i : sol.route) {
    t += distance(pos, s_.points[i].pos) / veh.v_a;
    pos = s_.points[i].pos;
    plan.uav.waypoints.push_back({pos, t, i});
    plan.events.push_back({t, i, Visitor::kUav, EventKind::kVisit});
  }
  t += distance(pos, stop.pos) / veh.v_a;
  plan.uav.waypoints.push_back({stop.pos, t, stop.point});
  const double uav_arrival = t;
  const double ugv_arrival = st.clock + stop.window_open;
  const double meet = std::max(uav_arrival, ugv_arrival);

  // UGV leg: route vertices strictly between the start and the stop.
  const double d = stop.route_offset;
  plan.ugv.waypoints.push_back({route_point(route_, ugv_offset), st.clock, -1});
  const std::vector<double> cum = cumulative(route_.path);
  std::vector<std::pair<double, Point2D>> inner;
  for (std::size_t k = 0; k < cum.size(); ++k) {
    const double a = ahead_of(route_, ugv_offset, cum[k]);
    if (a > 1e-9 && a < d - 1e-9) inner.emplace_back(a, route_.path[k]);
  }
  std::sort(inner.begin(), inner.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (const auto& [a, p] : inner) plan.ugv.waypoints.push_back({p, st.clock + a / veh.v_g, -1});
  if (d > 0.0) plan.ugv.waypoints.push_back({stop.pos, ugv_arrival, stop.point});
  plan.ugv.waypoints.push_back({stop.pos, meet + veh.T_R, stop.point});

  for (std::size_t g = 0; g < ground_.size(); ++g) {
    const int point = ground_[g].first;
    if (point == stop.point) continue;
    for (double h : ground_hits_[g]) {
      for (double a = ahead_of(route_, ugv_offset, h); a >= 0.0 && a < d - kSnapTolerance;
           a += route_.length) {
        if (a > kSnapTolerance) {
          plan.events.push_back({st.clock + a / veh.v_g, point, Visitor::kUgv, EventKind::kPassThrough});
        }
        if (!route_.closed || route_.length <= 0.0) break;
      }
    }
  }
  if (stop.point >= 0) plan.events.push_back({meet, stop.point, Visitor::kUav, EventKind::kRecharge});
  std::stable_sort(plan.events.begin(), plan.events.end(),
                   [](const VisitEvent& a, const VisitEvent& b) { return a.t < b.t; });

  plan.rendezvous = {stop.pos, stop.pos, meet, stop.point};
  plan.ugv_offset_after = advance_along(route_, ugv_offset, d);
  plan.cycle_end = meet + veh.T_R;
  return plan;
}

RecedingResult run_receding_horizon(const ScenarioInstance& s, const PlannerConfig& cfg,
                                    double priority_scale) {
  const Environment env(s, priority_scale);
  const BilevelPlanner planner(env.scenario(), cfg);
  RecedingResult result;
  result.log = EpisodeLog::start(s);
  EnvState st = env.initial_state();
  double offset = 0.0;
  int cycle = 0;
  while (st.clock < s.mission_period) {
    HorizonPlan plan;
    try {
      plan = planner.plan_horizon(st, offset, cycle);
    } catch (const Error& e) {
      throw PlannerRunError(e, std::move(result));
    }
    st = env.apply_events(st, plan.events, plan.cycle_end);
    st.uav_pos = plan.rendezvous.uav_pos;
    st.ugv_pos = plan.rendezvous.ugv_pos;
    st.ugv_anchor = -1;
    st.fuel = s.vehicle.F_a;
    st.last_action.reset();
    offset = plan.ugv_offset_after;
    result.log.events.insert(result.log.events.end(), plan.events.begin(), plan.events.end());
    result.log.rendezvous.push_back(plan.rendezvous);
    result.log.terminal_clock = st.clock;
    result.cycles.push_back(std::move(plan));
    ++cycle;
  }
  return result;
}

std::string sorties_to_json(const ScenarioInstance& s, const std::vector<HorizonPlan>& cycles) {
  using ojson = nlohmann::ordered_json;
  auto waypoints = [&s](const std::vector<Waypoint>& wps) {
    ojson arr = ojson::array();
    for (const Waypoint& w : wps) {
      ojson j;
      j["t"] = w.t;
      j["pos"] = {w.pos.x, w.pos.y};
      j["point_id"] = w.point >= 0 ? ojson(s.points[w.point].id) : ojson(nullptr);
      arr.push_back(std::move(j));
    }
    return arr;
  };
  ojson doc;
  doc["sorties"] = ojson::array();
  for (std::size_t c = 0; c < cycles.size(); ++c) {
    const HorizonPlan& p = cycles[c];
    ojson j;
    j["cycle"] = c;
    j["uav"] = waypoints(p.uav.waypoints);
    j["ugv"] = waypoints(p.ugv.waypoints);
    j["rendezvous"] = {{"t", p.rendezvous.t}, {"pos", {p.rendezvous.uav_pos.x, p.rendezvous.uav_pos.y}}};
    j["objective"] = p.uav.solution.objective;
    doc["sorties"].push_back(std::move(j));
  }
  return doc.dump(1) + "\n";
}

}  // namespace persurv
