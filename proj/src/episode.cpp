#include "persurv/episode.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "persurv/error.hpp"
#include "persurv/rng.hpp"

namespace persurv {

using ojson = nlohmann::ordered_json;

EpisodeLog EpisodeLog::start(const ScenarioInstance& s) {
  EpisodeLog log;
  log.mission_period = s.mission_period;
  for (const MissionPoint& p : s.points) {
    log.point_ids.push_back(p.id);
    log.weights.push_back(p.weight);
    log.origin_times.push_back(0.0);
  }
  return log;
}

void EpisodeLog::add_point(const MissionPoint& p, double origin_time) {
  point_ids.push_back(p.id);
  weights.push_back(p.weight);
  origin_times.push_back(origin_time);
}

void EpisodeLog::record(const StepOutcome& step) {
  events.insert(events.end(), step.events.begin(), step.events.end());
  if (step.rendezvous) rendezvous.push_back(*step.rendezvous);
  reward_terms.push_back(step.reward_term);
  terminal_clock = step.next.clock;
}

double episode_score(const EpisodeLog& log, ScoreOptions opts) {
  const std::size_t n = log.point_ids.size();
  std::vector<double> last = log.origin_times;
  std::vector<double> per_point(n, 0.0);
  for (const VisitEvent& e : log.events) {
    const double gap = e.t - last[e.point];
    per_point[e.point] += gap * gap;
    last[e.point] = e.t;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double sum = per_point[k];
    if (opts.include_terminal_gap && log.mission_period > last[k]) {
      const double gap = log.mission_period - last[k];
      sum += gap * gap;
    }
    total += (opts.weighted ? log.weights[k] : 1.0) * sum;
  }
  return total / (log.mission_period * log.mission_period);
}

double episode_reward(const EpisodeLog& log) {
  double sum = 0.0;
  for (double r : log.reward_terms) sum += r;
  return -sum / (log.mission_period * log.mission_period);
}

std::vector<double> ages_at(const EpisodeLog& log, double t) {
  std::vector<double> last = log.origin_times;
  for (const VisitEvent& e : log.events) {
    if (e.t <= t) last[e.point] = std::max(last[e.point], e.t);
  }
  std::vector<double> ages(last.size());
  for (std::size_t k = 0; k < last.size(); ++k) ages[k] = std::max(0.0, t - last[k]);
  return ages;
}

AgeStatistics age_statistics(const EpisodeLog& log, double t) {
  const std::vector<double> ages = ages_at(log, t);
  AgeStatistics stats;
  if (ages.empty()) return stats;
  double sum = 0.0;
  for (double a : ages) {
    stats.max_age = std::max(stats.max_age, a);
    sum += a;
  }
  stats.avg_age = sum / static_cast<double>(ages.size());
  return stats;
}

std::vector<double> max_age_per_point(const EpisodeLog& log, double until) {
  std::vector<double> last = log.origin_times;
  std::vector<double> worst(last.size(), 0.0);
  for (const VisitEvent& e : log.events) {
    if (e.t > until) continue;
    worst[e.point] = std::max(worst[e.point], e.t - last[e.point]);
    last[e.point] = e.t;
  }
  for (std::size_t k = 0; k < last.size(); ++k) worst[k] = std::max(worst[k], until - last[k]);
  return worst;
}

EpisodeLog random_policy_episode(const Environment& env, Rng& rng, std::vector<EnvState>* trace) {
  EpisodeLog log = EpisodeLog::start(env.scenario());
  EnvState st = env.initial_state();
  if (trace) trace->push_back(st);
  std::vector<std::size_t> choices;
  while (st.clock < env.scenario().mission_period) {
    const std::vector<char> mask = env.feasible_actions(st);
    choices.clear();
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) choices.push_back(i);
    }
    StepOutcome out = env.step(st, choices[rng.index(choices.size())]);
    log.record(out);
    st = std::move(out.next);
    if (trace) trace->push_back(st);
  }
  return log;
}

namespace {

const char* visitor_name(Visitor v) { return v == Visitor::kUav ? "uav" : "ugv"; }

const char* kind_name(EventKind k) {
  switch (k) {
    case EventKind::kVisit: return "visit";
    case EventKind::kRecharge: return "recharge";
    case EventKind::kPassThrough: return "pass_through";
  }
  return "visit";
}

EventKind kind_from(const std::string& s) {
  if (s == "visit") return EventKind::kVisit;
  if (s == "recharge") return EventKind::kRecharge;
  if (s == "pass_through") return EventKind::kPassThrough;
  throw Error(ErrorCode::kValidation, "unknown event kind '" + s + "'");
}

}  // namespace

std::string episode_to_jsonl(const EpisodeLog& log) {
  std::ostringstream out;
  for (const VisitEvent& e : log.events) {
    ojson j;
    j["t"] = e.t;
    j["point_id"] = log.point_ids[e.point];
    j["visitor"] = visitor_name(e.visitor);
    j["kind"] = kind_name(e.kind);
    out << j.dump() << '\n';
  }
  ojson s;
  s["summary"] = true;
  s["mission_period_s"] = log.mission_period;
  s["terminal_clock"] = log.terminal_clock;
  s["score"] = episode_score(log, false);
  s["weighted_score"] = episode_score(log, true);
  s["reward"] = episode_reward(log);
  s["point_ids"] = log.point_ids;
  s["weights"] = log.weights;
  s["origin_times"] = log.origin_times;
  s["reward_terms"] = log.reward_terms;
  ojson rv = ojson::array();
  for (const RendezvousRecord& r : log.rendezvous) {
    ojson jr;
    jr["t"] = r.t;
    jr["uav"] = {r.uav_pos.x, r.uav_pos.y};
    jr["ugv"] = {r.ugv_pos.x, r.ugv_pos.y};
    jr["point_id"] = r.point >= 0 ? ojson(log.point_ids[r.point]) : ojson(nullptr);
    rv.push_back(std::move(jr));
  }
  s["rendezvous"] = std::move(rv);
  out << s.dump() << '\n';
  return out.str();
}

EpisodeLog episode_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<ojson> events;
  ojson summary;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ojson j = ojson::parse(line);
      if (j.contains("summary")) {
        summary = std::move(j);
      } else {
        events.push_back(std::move(j));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("malformed episode log: ") + e.what());
  }
  if (summary.is_null()) throw Error(ErrorCode::kValidation, "episode log has no summary record");

  EpisodeLog log;
  log.mission_period = summary.at("mission_period_s").get<double>();
  log.terminal_clock = summary.at("terminal_clock").get<double>();
  log.point_ids = summary.at("point_ids").get<std::vector<int>>();
  log.weights = summary.at("weights").get<std::vector<double>>();
  log.origin_times = summary.at("origin_times").get<std::vector<double>>();
  log.reward_terms = summary.at("reward_terms").get<std::vector<double>>();
  auto index_of = [&log](int id) {
    const auto it = std::find(log.point_ids.begin(), log.point_ids.end(), id);
    if (it == log.point_ids.end()) throw Error(ErrorCode::kValidation, "unknown point id in log");
    return static_cast<int>(it - log.point_ids.begin());
  };
  for (const ojson& j : events) {
    VisitEvent e;
    e.t = j.at("t").get<double>();
    e.point = index_of(j.at("point_id").get<int>());
    e.visitor = j.at("visitor") == "uav" ? Visitor::kUav : Visitor::kUgv;
    e.kind = kind_from(j.at("kind").get<std::string>());
    log.events.push_back(e);
  }
  for (const ojson& jr : summary.at("rendezvous")) {
    RendezvousRecord r;
    r.t = jr.at("t").get<double>();
    r.uav_pos = {jr.at("uav")[0].get<double>(), jr.at("uav")[1].get<double>()};
    r.ugv_pos = {jr.at("ugv")[0].get<double>(), jr.at("ugv")[1].get<double>()};
    r.point = jr.at("point_id").is_null() ? -1 : index_of(jr.at("point_id").get<int>());
    log.rendezvous.push_back(r);
  }
  return log;
}

}  // namespace persurv
