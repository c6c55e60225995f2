#include "persurv/environment.hpp"

#include <algorithm>

#include "persurv/error.hpp"

namespace persurv {

namespace {

// Slack for fuel comparisons; accumulated round-off on ~1e5 J budgets.
constexpr double kFuelSlack = 1e-6;

}  // namespace

ActionSpace::ActionSpace(const ScenarioInstance& s) {
  ground_slot_.assign(s.points.size(), -1);
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (s.points[i].kind == PointKind::kGround) {
      ground_slot_[i] = static_cast<int>(ground_.size());
      ground_.push_back(static_cast<int>(i));
    } else {
      aerial_.push_back(static_cast<int>(i));
    }
  }
}

ActionToken ActionSpace::token(std::size_t index) const {
  const std::size_t g = ground_.size();
  if (index < g) return {ActionKind::kRecharge, ground_[index]};
  if (index < 2 * g) return {ActionKind::kVisitGround, ground_[index - g]};
  return {ActionKind::kVisitAerial, aerial_.at(index - 2 * g)};
}

std::size_t ActionSpace::index(const ActionToken& token) const {
  const std::size_t g = ground_.size();
  switch (token.kind) {
    case ActionKind::kRecharge:
      return static_cast<std::size_t>(ground_slot_.at(token.point));
    case ActionKind::kVisitGround:
      return g + static_cast<std::size_t>(ground_slot_.at(token.point));
    case ActionKind::kVisitAerial: {
      const auto it = std::find(aerial_.begin(), aerial_.end(), token.point);
      if (it == aerial_.end()) throw Error(ErrorCode::kValidation, "not an aerial point");
      return 2 * g + static_cast<std::size_t>(it - aerial_.begin());
    }
  }
  return 0;
}

Environment::Environment(ScenarioInstance scenario, double priority_scale)
    : scenario_(std::move(scenario)), actions_(scenario_), priority_scale_(priority_scale) {
  validate(scenario_);
  const auto& grounds = actions_.ground_points();
  std::vector<Point2D> anchors{scenario_.depot};
  for (int g : grounds) anchors.push_back(scenario_.points[g].pos);
  legs_.resize(anchors.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (int g : grounds) {
      const RoadPath path = scenario_.road.shortest_path(anchors[a], scenario_.points[g].pos);
      legs_[a].push_back({path.length, pass_throughs(path.points, g)});
    }
  }
}

double Environment::increment_factor(int point) const {
  return 1.0 + (scenario_.points[point].weight - 1.0) * priority_scale_;
}

std::vector<std::pair<int, double>> Environment::pass_throughs(const Polyline& path,
                                                               int destination) const {
  std::vector<std::pair<int, double>> hits;
  const double total = polyline_length(path);
  for (int g : actions_.ground_points()) {
    if (g == destination) continue;
    for (double s : arclength_hits(path, scenario_.points[g].pos)) {
      // The start is the UGV's current stop and the end is the rendezvous.
      if (s > kSnapTolerance && s < total - kSnapTolerance) hits.emplace_back(g, s);
    }
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return a.second < b.second || (a.second == b.second && a.first < b.first);
  });
  return hits;
}

EnvState Environment::initial_state() const {
  EnvState st;
  st.uav_pos = scenario_.depot;
  st.ugv_pos = scenario_.depot;
  st.ugv_anchor = 0;
  st.fuel = scenario_.vehicle.F_a;
  st.clock = 0.0;
  st.last_visit.assign(scenario_.points.size(), 0.0);
  st.ages.assign(scenario_.points.size(), 0.0);
  return st;
}

bool Environment::is_feasible(const EnvState& st, const ActionToken& a) const {
  const VehicleParams& veh = scenario_.vehicle;
  const Point2D target = scenario_.points[a.point].pos;
  const double need = edge_energy(distance(st.uav_pos, target), veh);
  if (need > st.fuel + kFuelSlack) return false;
  if (st.last_action) {
    if (a.is_visit() && st.last_action->point == a.point) return false;
    if (!a.is_visit() && !st.last_action->is_visit()) return false;
  }
  if (a.is_visit()) {
    const double left = st.fuel - need;
    for (int g : actions_.ground_points()) {
      if (edge_energy(distance(target, scenario_.points[g].pos), veh) <= left + kFuelSlack) return true;
    }
    return false;
  }
  return true;
}

std::vector<char> Environment::feasible_actions(const EnvState& st) const {
  std::vector<char> mask(actions_.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = is_feasible(st, actions_.token(i)) ? 1 : 0;
    any = any || mask[i];
  }
  if (!any) throw Error(ErrorCode::kDeadlock, "no feasible action at t=" + std::to_string(st.clock));
  return mask;
}

Environment::UgvLeg Environment::leg_to(const EnvState& st, int ground_point) const {
  const int slot = actions_.ground_slot(ground_point);
  if (st.ugv_anchor >= 0 && st.ugv_anchor < static_cast<int>(legs_.size())) {
    return legs_[st.ugv_anchor][slot];
  }
  const RoadPath path = scenario_.road.shortest_path(st.ugv_pos, scenario_.points[ground_point].pos);
  return {path.length, pass_throughs(path.points, ground_point)};
}

EnvState Environment::apply_events(const EnvState& st, std::span<const VisitEvent> events,
                                   double t_end) const {
  EnvState next = st;
  const std::size_t n = scenario_.points.size();
  std::vector<double> reset_at(n, -1.0);
  for (const VisitEvent& e : events) {
    next.last_visit[e.point] = e.t;
    reset_at[e.point] = e.t;
  }
  const double elapsed = t_end - st.clock;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = scenario_.points[k].weight;
    next.ages[k] = reset_at[k] >= 0.0
                       ? weighted_age_update(0.0, t_end - reset_at[k], w, priority_scale_)
                       : weighted_age_update(st.ages[k], elapsed, w, priority_scale_);
  }
  next.clock = t_end;
  return next;
}

StepOutcome Environment::step(const EnvState& st, std::size_t action) const {
  return step(st, actions_.token(action));
}

StepOutcome Environment::step(const EnvState& st, const ActionToken& a) const {
  if (!is_feasible(st, a)) {
    throw Error(ErrorCode::kInfeasibleAction,
                "action on point " + std::to_string(scenario_.points[a.point].id) + " is masked");
  }
  const VehicleParams& veh = scenario_.vehicle;
  const Point2D target = scenario_.points[a.point].pos;
  const double d = distance(st.uav_pos, target);
  const double uav_arrival = st.clock + d / veh.v_a;

  StepOutcome out;
  EnvState next;
  if (a.is_visit()) {
    const double age = uav_arrival - st.last_visit[a.point];
    out.reward_term = age * age;
    out.events.push_back({uav_arrival, a.point, Visitor::kUav, EventKind::kVisit});
    next = apply_events(st, out.events, uav_arrival);
    next.fuel = std::max(0.0, st.fuel - edge_energy(d, veh));
  } else {
    const UgvLeg leg = leg_to(st, a.point);
    const double meet = std::max(uav_arrival, st.clock + leg.length / veh.v_g);
    std::vector<double> last = st.last_visit;
    double reward = 0.0;
    for (const auto& [point, s] : leg.pass) {
      const double t = st.clock + s / veh.v_g;
      reward += (t - last[point]) * (t - last[point]);
      last[point] = t;
      out.events.push_back({t, point, Visitor::kUgv, EventKind::kPassThrough});
    }
    const double age = meet - last[a.point];
    reward += age * age;
    out.reward_term = reward;
    out.events.push_back({meet, a.point, Visitor::kUav, EventKind::kRecharge});
    out.rendezvous = RendezvousRecord{target, target, meet, a.point};
    next = apply_events(st, out.events, meet + veh.T_R);
    next.fuel = veh.F_a;
    next.ugv_pos = target;
    next.ugv_anchor = 1 + actions_.ground_slot(a.point);
  }
  next.uav_pos = target;
  next.last_action = a;
  out.elapsed = next.clock - st.clock;
  out.next = std::move(next);
  return out;
}

void Environment::add_point(const MissionPoint& p, EnvState& st, double origin_time) {
  if (p.kind != PointKind::kAerial) {
    throw Error(ErrorCode::kValidation, "only aerial points can be added to a running mission");
  }
  scenario_.points.push_back(p);
  actions_ = ActionSpace(scenario_);
  st.last_visit.push_back(origin_time);
  st.ages.push_back((st.clock - origin_time) * increment_factor(static_cast<int>(st.ages.size())));
}

}  // namespace persurv
