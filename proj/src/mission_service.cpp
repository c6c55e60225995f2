#include "persurv/mission_service.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "persurv/io.hpp"

namespace persurv {

namespace {

const char* visitor_name(Visitor v) { return v == Visitor::kUav ? "uav" : "ugv"; }

const char* event_type(EventKind k) {
  switch (k) {
    case EventKind::kVisit: return "visit";
    case EventKind::kRecharge: return "recharge";
    case EventKind::kPassThrough: return "pass_through";
  }
  return "visit";
}

ojson pos_json(Point2D p) { return ojson::array({p.x, p.y}); }

int point_index(const ScenarioInstance& s, int id) {
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (s.points[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kIdle: return "Idle";
    case SessionStatus::kRunning: return "Running";
    case SessionStatus::kAwaitingRendezvous: return "AwaitingRendezvous";
    case SessionStatus::kCompleted: return "Completed";
  }
  return "Idle";
}

void to_json(ojson& j, const SessionMethod& m) {
  j = ojson{{"method", m.method},
            {"params", m.params},
            {"iterations", m.iterations},
            {"penalty_scale", m.penalty_scale},
            {"seed", m.seed}};
}

void from_json(const ojson& j, SessionMethod& m) {
  if (!j.is_object()) throw Error(ErrorCode::kValidation, "method: expected an object");
  for (const auto& item : j.items()) {
    const std::string& k = item.key();
    try {
      if (k == "method") {
        m.method = item.value().get<std::string>();
      } else if (k == "params") {
        m.params = item.value().get<std::string>();
      } else if (k == "iterations") {
        m.iterations = item.value().get<int>();
      } else if (k == "penalty_scale") {
        m.penalty_scale = item.value().get<double>();
      } else if (k == "seed") {
        m.seed = item.value().get<std::uint64_t>();
      } else {
        throw Error(ErrorCode::kValidation, "method." + k + ": unknown key");
      }
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kValidation, "method." + k + ": wrong type");
    }
  }
}

ojson journal_event_json(const JournalEvent& e) {
  return ojson{{"seq", e.seq}, {"type", e.type}, {"data", e.data}};
}

MissionSession::MissionSession(std::string id, ScenarioInstance scenario, SessionMethod method,
                               std::shared_ptr<const PolicyParams> params)
    : id_(std::move(id)), method_(std::move(method)), spec_(parse_method(method_.method)), params_(std::move(params)) {
  validate(scenario);
  if (spec_.policy && spec_.samples > 0) {
    throw Error(ErrorCode::kValidation, "method.method: sessions run policy-greedy, TS, SA or GLS");
  }
  if (spec_.policy && !params_) throw Error(ErrorCode::kValidation, "method.params: policy-greedy needs parameters");
  if (method_.iterations < 1) throw Error(ErrorCode::kValidation, "method.iterations: must be at least 1");
  for (const MissionPoint& p : scenario.points) next_point_id_ = std::max(next_point_id_, p.id + 1);

  ojson created;
  created["id"] = id_;
  created["scenario"] = ojson::parse(scenario_to_json(scenario));
  created["method"] = method_;
  env_ = std::make_unique<Environment>(std::move(scenario));
  state_ = env_->initial_state();
  log_ = EpisodeLog::start(env_->scenario());
  if (!spec_.policy) {
    PlannerConfig cfg;
    cfg.metaheuristic = spec_.metaheuristic;
    cfg.iterations = method_.iterations;
    cfg.penalty_scale = method_.penalty_scale;
    cfg.seed = method_.seed;
    planner_ = std::make_unique<BilevelPlanner>(env_->scenario(), cfg);
  }
  emit("created", std::move(created));
}

void MissionSession::emit(std::string type, ojson data) {
  journal_.push_back({journal_.size() + 1, std::move(type), std::move(data)});
  if (hook_) hook_(journal_.back());
}

void MissionSession::refresh_status() {
  if (state_.clock >= env_->scenario().mission_period) {
    status_ = SessionStatus::kCompleted;
  } else if (!pending_.empty()) {
    status_ = SessionStatus::kAwaitingRendezvous;
  } else {
    status_ = steps_ > 0 ? SessionStatus::kRunning : SessionStatus::kIdle;
  }
}

void MissionSession::rebuild_decoder() {
  ad::NoGradGuard guard;
  decoder_.reset();
  if (!weights_) weights_ = std::make_unique<WeightVars>(as_vars(*params_, false));
  decoder_ = std::make_unique<DecoderContext>(*params_, *weights_, *env_,
                                              encode(*params_, node_features(env_->scenario()), BnMode::kEval));
}

bool MissionSession::step() {
  if (status_ == SessionStatus::kCompleted) return false;
  if (spec_.policy) {
    step_policy();
  } else {
    step_planner();
  }
  ++steps_;
  refresh_status();
  if (status_ == SessionStatus::kCompleted) {
    emit("completed", {{"clock", state_.clock},
                       {"score", episode_score(log_, false)},
                       {"weighted_score", episode_score(log_, true)}});
    return false;
  }
  return true;
}

void MissionSession::step_policy() {
  ad::NoGradGuard guard;
  if (!decoder_) {
    rebuild_decoder();
    emit("replan", {{"clock", state_.clock}, {"points", env_->scenario().points.size()}});
  }
  if (sortie_closed_) {
    sortie_.clear();
    sortie_closed_ = false;
  }
  if (sortie_.empty()) sortie_.push_back({state_.uav_pos, state_.clock, -1});
  const std::vector<char> mask = env_->feasible_actions(state_);
  const std::size_t a = greedy_choice(decoder_->log_probs(state_, mask).value().values());
  const ActionToken tok = env_->actions().token(a);
  const MissionPoint& target = env_->scenario().points[tok.point];
  emit("decision", {{"step", steps_},
                    {"clock", state_.clock},
                    {"action", tok.is_visit() ? "visit" : "recharge"},
                    {"point_id", target.id}});
  StepOutcome out = env_->step(state_, a);
  log_.record(out);
  state_ = std::move(out.next);
  for (const VisitEvent& e : out.events) {
    emit(event_type(e.kind), {{"t", e.t},
                              {"point_id", env_->scenario().points[e.point].id},
                              {"visitor", visitor_name(e.visitor)}});
  }
  sortie_.push_back({state_.uav_pos, state_.clock, tok.point});
  if (out.rendezvous) {
    const RendezvousRecord& r = *out.rendezvous;
    emit("rendezvous", {{"t", r.t},
                        {"pos", pos_json(r.uav_pos)},
                        {"point_id", r.point >= 0 ? ojson(env_->scenario().points[r.point].id) : ojson(nullptr)},
                        {"recharged_at", state_.clock}});
    sortie_closed_ = true;
    after_rendezvous();
  }
}

void MissionSession::step_planner() {
  const HorizonPlan plan = planner_->plan_horizon(state_, ugv_offset_, cycle_);
  ojson route = ojson::array();
  for (int i : plan.uav.solution.route) route.push_back(env_->scenario().points[i].id);
  emit("decision", {{"step", steps_},
                    {"clock", state_.clock},
                    {"action", "cycle"},
                    {"cycle", cycle_},
                    {"route", std::move(route)},
                    {"stop", pos_json(plan.uav.terminal.pos)}});
  const VehicleParams& veh = env_->scenario().vehicle;
  state_ = env_->apply_events(state_, plan.events, plan.cycle_end);
  state_.uav_pos = plan.rendezvous.uav_pos;
  state_.ugv_pos = plan.rendezvous.ugv_pos;
  state_.ugv_anchor = -1;
  state_.fuel = veh.F_a;
  state_.last_action.reset();
  ugv_offset_ = plan.ugv_offset_after;
  log_.events.insert(log_.events.end(), plan.events.begin(), plan.events.end());
  log_.rendezvous.push_back(plan.rendezvous);
  log_.terminal_clock = state_.clock;
  ++cycle_;
  for (const VisitEvent& e : plan.events) {
    emit(event_type(e.kind), {{"t", e.t},
                              {"point_id", env_->scenario().points[e.point].id},
                              {"visitor", visitor_name(e.visitor)}});
  }
  sortie_ = plan.uav.waypoints;
  const RendezvousRecord& r = plan.rendezvous;
  emit("rendezvous", {{"t", r.t},
                      {"pos", pos_json(r.uav_pos)},
                      {"point_id", r.point >= 0 ? ojson(env_->scenario().points[r.point].id) : ojson(nullptr)},
                      {"recharged_at", state_.clock}});
  after_rendezvous();
}

void MissionSession::after_rendezvous() {
  if (pending_.empty()) return;
  ojson ids = ojson::array();
  for (const Pending& p : pending_) {
    env_->add_point(p.point, state_, p.requested_at);
    log_.add_point(p.point, p.requested_at);
    ids.push_back(p.point.id);
  }
  pending_.clear();
  emit("activated", {{"clock", state_.clock}, {"point_ids", std::move(ids)}});
  if (spec_.policy) {
    rebuild_decoder();
    emit("replan", {{"clock", state_.clock}, {"points", env_->scenario().points.size()}});
  }
}

void MissionSession::advance(std::optional<double> until) {
  if (status_ == SessionStatus::kCompleted) throw Error(ErrorCode::kConflict, "session " + id_ + " is completed");
  if (until) {
    if (!std::isfinite(*until)) throw Error(ErrorCode::kValidation, "until: must be finite");
    while (state_.clock < *until && step()) {
    }
    return;
  }
  const std::size_t seen = log_.rendezvous.size();
  while (log_.rendezvous.size() == seen && step()) {
  }
}

int MissionSession::inject(const InjectRequest& req) {
  if (status_ == SessionStatus::kCompleted) throw Error(ErrorCode::kConflict, "session " + id_ + " is completed");
  if (req.kind != PointKind::kAerial) {
    throw Error(ErrorCode::kValidation, "kind: injected points must be aerial (they lie off the road network)");
  }
  if (!std::isfinite(req.pos.x) || !std::isfinite(req.pos.y) || !inside_frame(req.pos)) {
    throw Error(ErrorCode::kValidation, "pos: outside the operating frame");
  }
  if (!(req.weight > 0.0) || !std::isfinite(req.weight)) throw Error(ErrorCode::kValidation, "weight: must be positive");
  Pending p;
  p.point = {next_point_id_++, req.pos, PointKind::kAerial, req.weight};
  p.requested_at = state_.clock;
  p.client_time = req.client_time;
  pending_.push_back(p);
  emit("injected", {{"point_id", p.point.id},
                    {"pos", pos_json(p.point.pos)},
                    {"weight", p.point.weight},
                    {"requested_at", p.requested_at},
                    {"client_time", req.client_time ? ojson(*req.client_time) : ojson(nullptr)}});
  refresh_status();
  return p.point.id;
}

void MissionSession::set_weights(const std::map<int, double>& weights, std::optional<double> S) {
  if (S && !(*S >= 0.0 && *S <= 1.0)) throw Error(ErrorCode::kValidation, "S: must lie in [0, 1]");
  for (const auto& [id, w] : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::kValidation, "weights." + std::to_string(id) + ": must be positive");
    }
    const bool pending = std::any_of(pending_.begin(), pending_.end(), [id = id](const Pending& p) { return p.point.id == id; });
    if (point_index(env_->scenario(), id) < 0 && !pending) {
      throw Error(ErrorCode::kNotFound, "unknown point id " + std::to_string(id));
    }
  }
  ojson applied = ojson::object();
  for (const auto& [id, w] : weights) {
    const int k = point_index(env_->scenario(), id);
    if (k >= 0) {
      env_->set_weight(k, w);
      log_.weights[static_cast<std::size_t>(k)] = w;
    } else {
      for (Pending& p : pending_) {
        if (p.point.id == id) p.point.weight = w;
      }
    }
    applied[std::to_string(id)] = w;
  }
  if (S) env_->set_priority_scale(*S);
  emit("weights", {{"clock", state_.clock},
                   {"weights", std::move(applied)},
                   {"S", S ? ojson(*S) : ojson(nullptr)}});
}

ojson MissionSession::state_json() const {
  const ScenarioInstance& s = env_->scenario();
  ojson j;
  j["id"] = id_;
  j["status"] = to_string(status_);
  j["method"] = method_.method;
  j["clock"] = state_.clock;
  j["mission_period"] = s.mission_period;
  j["priority_scale"] = env_->priority_scale();
  j["steps"] = steps_;
  j["last_seq"] = journal_.size();
  j["uav"] = {{"pos", pos_json(state_.uav_pos)}, {"fuel", state_.fuel}, {"fuel_fraction", state_.fuel / s.vehicle.F_a}};
  j["ugv"] = {{"pos", pos_json(state_.ugv_pos)}};
  j["points"] = ojson::array();
  for (std::size_t k = 0; k < s.points.size(); ++k) {
    const MissionPoint& p = s.points[k];
    j["points"].push_back({{"id", p.id},
                           {"kind", p.kind == PointKind::kGround ? "ground" : "aerial"},
                           {"pos", pos_json(p.pos)},
                           {"weight", p.weight},
                           {"last_visit", state_.last_visit[k]},
                           {"age", state_.clock - state_.last_visit[k]},
                           {"age_status", state_.ages[k]}});
  }
  j["pending"] = ojson::array();
  for (const Pending& p : pending_) {
    j["pending"].push_back({{"id", p.point.id},
                            {"pos", pos_json(p.point.pos)},
                            {"weight", p.point.weight},
                            {"requested_at", p.requested_at},
                            {"client_time", p.client_time ? ojson(*p.client_time) : ojson(nullptr)}});
  }
  j["sortie"] = ojson::array();
  for (const Waypoint& w : sortie_) {
    j["sortie"].push_back({{"t", w.t},
                           {"pos", pos_json(w.pos)},
                           {"point_id", w.point >= 0 ? ojson(s.points[w.point].id) : ojson(nullptr)}});
  }
  j["score"] = episode_score(log_, false);
  j["weighted_score"] = episode_score(log_, true);
  return j;
}

std::unique_ptr<MissionSession> MissionSession::replay(const std::vector<JournalEvent>& journal,
                                                       std::shared_ptr<const PolicyParams> params) {
  if (journal.empty() || journal.front().type != "created") {
    throw Error(ErrorCode::kCorruptFile, "journal must start with a created event");
  }
  const ojson& created = journal.front().data;
  auto s = std::make_unique<MissionSession>(created.at("id").get<std::string>(), scenario_from_json(created.at("scenario").dump()),
                                            created.at("method").get<SessionMethod>(), std::move(params));
  std::size_t i = 1;
  while (i < journal.size()) {
    const JournalEvent& e = journal[i];
    const std::size_t from = i;
    if (e.type == "injected") {
      InjectRequest req;
      req.pos = {e.data.at("pos")[0].get<double>(), e.data.at("pos")[1].get<double>()};
      req.weight = e.data.at("weight").get<double>();
      if (!e.data.at("client_time").is_null()) req.client_time = e.data.at("client_time").get<double>();
      s->inject(req);
      ++i;
    } else if (e.type == "weights") {
      std::map<int, double> w;
      for (const auto& item : e.data.at("weights").items()) w[std::stoi(item.key())] = item.value().get<double>();
      std::optional<double> S;
      if (!e.data.at("S").is_null()) S = e.data.at("S").get<double>();
      s->set_weights(w, S);
      ++i;
    } else if (e.type == "decision" || e.type == "replan") {
      const std::size_t before = s->journal_.size();
      s->step();
      i += s->journal_.size() - before;
    } else {
      throw Error(ErrorCode::kCorruptFile, "unexpected journal event '" + e.type + "' at seq " + std::to_string(e.seq));
    }
    const std::size_t n = std::min({i, s->journal_.size(), journal.size()});
    for (std::size_t k = from; k < n; ++k) {
      const JournalEvent& a = journal[k];
      const JournalEvent& b = s->journal_[k];
      if (a.seq != b.seq || a.type != b.type || a.data != b.data) {
        throw Error(ErrorCode::kCorruptFile, "journal diverges at seq " + std::to_string(a.seq));
      }
    }
  }
  if (s->journal_.size() != journal.size()) throw Error(ErrorCode::kCorruptFile, "journal ends mid-decision");
  return s;
}

SessionManager::SessionManager(std::shared_ptr<const PolicyParams> default_params, std::filesystem::path journal_dir)
    : default_params_(std::move(default_params)), journal_dir_(std::move(journal_dir)) {
  if (!journal_dir_.empty()) std::filesystem::create_directories(journal_dir_);
}

std::shared_ptr<const PolicyParams> SessionManager::load_params(const std::string& path) {
  std::unique_lock lock(mu_);
  auto it = params_cache_.find(path);
  if (it != params_cache_.end()) return it->second;
  auto p = std::make_shared<const PolicyParams>(persurv::load_params(path));
  params_cache_[path] = p;
  return p;
}

std::string SessionManager::create(const ScenarioInstance& s, const SessionMethod& m) {
  const MethodSpec spec = parse_method(m.method);
  std::shared_ptr<const PolicyParams> params;
  if (spec.policy) {
    params = m.params.empty() ? default_params_ : load_params(m.params);
    if (!params) {
      throw Error(ErrorCode::kValidation, "method.params: " + m.method +
                                              " needs a parameter file and the server has no default");
    }
  }
  std::string id;
  {
    std::unique_lock lock(mu_);
    id = "s" + std::to_string(next_id_++);
  }
  auto entry = std::make_shared<Entry>();
  entry->session = std::make_unique<MissionSession>(id, s, m, params);
  entry->events = entry->session->journal();
  std::filesystem::path file;
  if (!journal_dir_.empty()) {
    file = journal_dir_ / (id + ".jsonl");
    std::ofstream out(file, std::ios::trunc);
    for (const JournalEvent& e : entry->events) out << journal_event_json(e).dump() << '\n';
  }
  Entry* raw = entry.get();
  entry->session->set_event_hook([raw, file](const JournalEvent& e) {
    {
      std::lock_guard<std::mutex> lock(raw->publish);
      raw->events.push_back(e);
    }
    raw->changed.notify_all();
    if (!file.empty()) {
      std::ofstream out(file, std::ios::app);
      out << journal_event_json(e).dump() << '\n';
    }
  });
  publish(*entry);
  std::unique_lock lock(mu_);
  sessions_[id] = std::move(entry);
  return id;
}

std::shared_ptr<SessionManager::Entry> SessionManager::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown session " + id);
  return it->second;
}

void SessionManager::publish(Entry& e) {
  auto snap = std::make_shared<const std::string>(e.session->state_json().dump());
  {
    std::lock_guard<std::mutex> lock(e.publish);
    e.snapshot = std::move(snap);
    e.completed = e.session->status() == SessionStatus::kCompleted;
  }
  e.changed.notify_all();
}

std::shared_ptr<const std::string> SessionManager::snapshot(const Entry& e) const {
  std::lock_guard<std::mutex> lock(e.publish);
  return e.snapshot;
}

std::vector<JournalEvent> SessionManager::events_after(Entry& e, std::uint64_t after, std::chrono::milliseconds wait,
                                                       bool* completed) const {
  std::unique_lock<std::mutex> lock(e.publish);
  if (e.events.size() <= after && !e.completed && wait.count() > 0) {
    e.changed.wait_for(lock, wait, [&] { return e.events.size() > after || e.completed; });
  }
  std::vector<JournalEvent> out;
  for (std::size_t k = after; k < e.events.size(); ++k) out.push_back(e.events[k]);
  if (completed) *completed = e.completed;
  return out;
}

}  // namespace persurv
