#pragma once

#include <optional>
#include <span>
#include <vector>

#include "persurv/scenario.hpp"

namespace persurv {

enum class ActionKind { kRecharge, kVisitGround, kVisitAerial };

// `point` indexes ScenarioInstance::points (not the external id).
struct ActionToken {
  ActionKind kind = ActionKind::kVisitAerial;
  int point = 0;

  bool is_visit() const { return kind != ActionKind::kRecharge; }
  friend bool operator==(const ActionToken&, const ActionToken&) = default;
};

// Flat action indexing: [recharge on ground 0..G) [visit ground 0..G) [visit aerial 0..A).
class ActionSpace {
 public:
  ActionSpace() = default;
  explicit ActionSpace(const ScenarioInstance& s);

  std::size_t size() const { return 2 * ground_.size() + aerial_.size(); }
  ActionToken token(std::size_t index) const;
  std::size_t index(const ActionToken& token) const;

  const std::vector<int>& ground_points() const { return ground_; }
  const std::vector<int>& aerial_points() const { return aerial_; }
  // Position of a ground point within ground_points(), or -1.
  int ground_slot(int point) const { return ground_slot_[point]; }

 private:
  std::vector<int> ground_;
  std::vector<int> aerial_;
  std::vector<int> ground_slot_;
};

struct EnvState {
  Point2D uav_pos;
  double fuel = 0.0;   // joules
  double clock = 0.0;  // seconds
  Point2D ugv_pos;
  // Road anchor holding the UGV: 0 = depot, 1 + slot = ground point; -1 when
  // the UGV sits elsewhere on the road (bilevel planner).
  int ugv_anchor = 0;
  std::vector<double> last_visit;
  // Age status per point. Equals clock - last_visit unless priority weights
  // scale the accumulation.
  std::vector<double> ages;
  std::optional<ActionToken> last_action;
};

enum class Visitor { kUav, kUgv };
enum class EventKind { kVisit, kRecharge, kPassThrough };

struct VisitEvent {
  double t = 0.0;
  int point = 0;
  Visitor visitor = Visitor::kUav;
  EventKind kind = EventKind::kVisit;
};

struct RendezvousRecord {
  Point2D uav_pos;
  Point2D ugv_pos;
  double t = 0.0;  // meeting time; recharge completes at t + T_R
  int point = -1;  // mission point at the meeting location, if any
};

struct StepOutcome {
  double reward_term = 0.0;  // seconds^2
  double elapsed = 0.0;
  EnvState next;
  std::vector<VisitEvent> events;
  std::optional<RendezvousRecord> rendezvous;
};

// Increment factor F = 1 + (w - 1) S applied to elapsed time.
inline double weighted_age_update(double age, double elapsed, double w, double S) {
  return age + elapsed * (1.0 + (w - 1.0) * S);
}

// Continuous-time surveillance MDP over one scenario. Immutable apart from the
// session-facing mutators (add_point / set_weight / set_priority_scale).
class Environment {
 public:
  explicit Environment(ScenarioInstance scenario, double priority_scale = 0.0);

  const ScenarioInstance& scenario() const { return scenario_; }
  const ActionSpace& actions() const { return actions_; }
  double priority_scale() const { return priority_scale_; }
  double increment_factor(int point) const;

  EnvState initial_state() const;

  // Mask over actions().size(); throws kDeadlock when nothing is feasible.
  std::vector<char> feasible_actions(const EnvState& st) const;
  bool is_feasible(const EnvState& st, const ActionToken& a) const;

  StepOutcome step(const EnvState& st, std::size_t action) const;
  StepOutcome step(const EnvState& st, const ActionToken& a) const;

  // Applies externally scheduled visits (sorted by time, all within
  // [st.clock, t_end]) and moves the clock to t_end.
  EnvState apply_events(const EnvState& st, std::span<const VisitEvent> events, double t_end) const;

  // Ground mission points crossed along a road path, with arclength offsets.
  // The point at the path's end is excluded.
  std::vector<std::pair<int, double>> pass_throughs(const Polyline& path, int destination) const;

  // Session mutators. New points must be aerial; the state is extended with
  // last_visit = `origin_time`.
  void add_point(const MissionPoint& p, EnvState& st, double origin_time);
  void set_weight(int point, double w) { scenario_.points[point].weight = w; }
  void set_priority_scale(double S) { priority_scale_ = S; }

 private:
  struct UgvLeg {
    double length = 0.0;
    std::vector<std::pair<int, double>> pass;  // (point, arclength), ascending
  };

  UgvLeg leg_to(const EnvState& st, int ground_point) const;

  ScenarioInstance scenario_;
  ActionSpace actions_;
  double priority_scale_ = 0.0;
  double energy_per_meter_ = 0.0;
  // legs_[anchor][slot]: depot and every ground point to every ground point.
  std::vector<std::vector<UgvLeg>> legs_;
};

}  // namespace persurv
