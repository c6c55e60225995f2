#include <gtest/gtest.h>

#include <httplib.h>

#include <filesystem>
#include <thread>

#include "fixtures.hpp"
#include "persurv/http_server.hpp"
#include "persurv/io.hpp"
#include "persurv/mission_service.hpp"

namespace persurv {
namespace {

std::shared_ptr<const PolicyParams> toy_policy() {
  static const auto p = std::make_shared<const PolicyParams>(init_params(3, toy_hyper()));
  return p;
}

ScenarioInstance small_scenario(double T_m = 4000.0) { return testing::random_scenario(5, 2, 21, T_m); }

SessionMethod planner_method() {
  SessionMethod m;
  m.method = "TS";
  m.iterations = 200;
  m.seed = 4;
  return m;
}

InjectRequest near_depot(const ScenarioInstance& s, double dx, double dy, double w = 1.0) {
  InjectRequest r;
  r.pos = {s.depot.x + dx, s.depot.y + dy};
  r.weight = w;
  return r;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;
}

// Rebuilds an episode log from the journal alone.
EpisodeLog log_from_journal(const std::vector<JournalEvent>& journal) {
  EpisodeLog log = EpisodeLog::start(scenario_from_json(journal.front().data.at("scenario").dump()));
  std::map<int, std::pair<MissionPoint, double>> pending;
  auto index_of = [&](int id) {
    return static_cast<int>(std::find(log.point_ids.begin(), log.point_ids.end(), id) - log.point_ids.begin());
  };
  for (const JournalEvent& e : journal) {
    const ojson& d = e.data;
    if (e.type == "injected") {
      const int id = d["point_id"].get<int>();
      const MissionPoint p{id, {d["pos"][0].get<double>(), d["pos"][1].get<double>()}, PointKind::kAerial,
                           d["weight"].get<double>()};
      pending[id] = {p, d["requested_at"].get<double>()};
    } else if (e.type == "activated") {
      for (const ojson& id : d["point_ids"]) {
        const auto& [p, origin] = pending.at(id.get<int>());
        log.add_point(p, origin);
      }
    } else if (e.type == "visit" || e.type == "recharge" || e.type == "pass_through") {
      VisitEvent v;
      v.t = d["t"].get<double>();
      v.point = index_of(d["point_id"].get<int>());
      v.visitor = d["visitor"] == "uav" ? Visitor::kUav : Visitor::kUgv;
      v.kind = e.type == "visit" ? EventKind::kVisit : e.type == "recharge" ? EventKind::kRecharge : EventKind::kPassThrough;
      log.events.push_back(v);
    }
  }
  return log;
}

TEST(Session, StartsIdleWithZeroAges) {
  MissionSession s("a", small_scenario(), SessionMethod{}, toy_policy());
  const ojson st = s.state_json();
  EXPECT_EQ(st["status"], "Idle");
  EXPECT_EQ(st["clock"].get<double>(), 0.0);
  for (const ojson& p : st["points"]) EXPECT_EQ(p["age"].get<double>(), 0.0);
  EXPECT_EQ(s.journal().front().type, "created");
  EXPECT_EQ(s.journal().front().data["id"], "a");
}

TEST(Session, RejectsUnsupportedMethods) {
  SessionMethod sample;
  sample.method = "policy-sample-8";
  EXPECT_EQ(code_of([&] { MissionSession("a", small_scenario(), sample, toy_policy()); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { MissionSession("a", small_scenario(), SessionMethod{}, nullptr); }), ErrorCode::kValidation);
}

TEST(Session, InjectedPointsWaitForTheNextRendezvous) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, SessionMethod{}, toy_policy());
  s.advance(600.0);
  const std::size_t rendezvous = s.log().rendezvous.size();
  const double requested = s.env_state().clock;
  const int id = s.inject(near_depot(sc, 400, 300));
  EXPECT_EQ(id, 7);
  EXPECT_EQ(s.status(), SessionStatus::kAwaitingRendezvous);
  EXPECT_EQ(s.state_json()["pending"].size(), 1u);
  EXPECT_EQ(s.environment().scenario().points.size(), 7u);

  s.advance(std::nullopt);
  ASSERT_EQ(s.log().rendezvous.size(), rendezvous + 1);
  EXPECT_EQ(s.environment().scenario().points.size(), 8u);
  EXPECT_EQ(s.status(), SessionStatus::kRunning);
  const ojson st = s.state_json();
  EXPECT_TRUE(st["pending"].empty());
  EXPECT_EQ(st["points"].back()["id"], id);
  EXPECT_NEAR(st["points"].back()["age"].get<double>(), s.env_state().clock - requested, 1e-9);
}

TEST(Session, BurstOfInjectionsActivatesTogether) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, planner_method(), nullptr);
  s.advance(std::nullopt);
  for (int i = 0; i < 5; ++i) s.inject(near_depot(sc, 200.0 * i + 100.0, 250.0));
  s.advance(std::nullopt);
  const auto& j = s.journal();
  const auto it = std::find_if(j.begin(), j.end(), [](const JournalEvent& e) { return e.type == "activated"; });
  ASSERT_NE(it, j.end());
  EXPECT_EQ(it->data["point_ids"].size(), 5u);
  EXPECT_EQ(std::count_if(j.begin(), j.end(), [](const JournalEvent& e) { return e.type == "activated"; }), 1);
  EXPECT_EQ(s.environment().scenario().points.size(), 12u);
}

TEST(Session, InjectionValidation) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, SessionMethod{}, toy_policy());
  InjectRequest outside;
  outside.pos = {-50.0, 100.0};
  EXPECT_EQ(code_of([&] { s.inject(outside); }), ErrorCode::kValidation);
  InjectRequest ground = near_depot(sc, 10, 10);
  ground.kind = PointKind::kGround;
  EXPECT_EQ(code_of([&] { s.inject(ground); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { s.inject(near_depot(sc, 10, 10, 0.0)); }), ErrorCode::kValidation);
  EXPECT_EQ(s.journal().size(), 1u);
}

TEST(Session, WeightsChangeIncrementFactors) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, SessionMethod{}, toy_policy());
  s.set_weights({{sc.points[0].id, 1.5}, {sc.points[1].id, 0.5}}, 0.75);
  EXPECT_DOUBLE_EQ(s.environment().increment_factor(0), 1.375);
  EXPECT_DOUBLE_EQ(s.environment().increment_factor(1), 0.625);
  EXPECT_DOUBLE_EQ(s.environment().increment_factor(2), 1.0);
  EXPECT_EQ(code_of([&] { s.set_weights({{999, 2.0}}, std::nullopt); }), ErrorCode::kNotFound);
  EXPECT_EQ(code_of([&] { s.set_weights({}, 1.5); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { s.set_weights({{sc.points[0].id, -1.0}}, std::nullopt); }), ErrorCode::kValidation);
}

TEST(Session, UniformWeightsMatchTheUnweightedRun) {
  const ScenarioInstance sc = small_scenario();
  MissionSession plain("a", sc, SessionMethod{}, toy_policy());
  MissionSession weighted("a", sc, SessionMethod{}, toy_policy());
  std::map<int, double> ones;
  for (const MissionPoint& p : sc.points) ones[p.id] = 1.0;
  weighted.set_weights(ones, 1.0);
  plain.advance(sc.mission_period);
  weighted.advance(sc.mission_period);
  EXPECT_EQ(plain.state_json()["score"], weighted.state_json()["score"]);
  EXPECT_EQ(plain.log().events.size(), weighted.log().events.size());
}

TEST(Session, PendingWeightsAreEditable) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, SessionMethod{}, toy_policy());
  const int id = s.inject(near_depot(sc, 300, 300));
  s.set_weights({{id, 2.0}}, std::nullopt);
  EXPECT_EQ(s.state_json()["pending"][0]["weight"].get<double>(), 2.0);
  s.advance(std::nullopt);
  EXPECT_EQ(s.state_json()["points"].back()["weight"].get<double>(), 2.0);
}

TEST(Session, CompletesAndThenRefusesCommands) {
  const ScenarioInstance sc = small_scenario(2500.0);
  MissionSession s("a", sc, planner_method(), nullptr);
  s.advance(1e9);
  EXPECT_EQ(s.status(), SessionStatus::kCompleted);
  EXPECT_EQ(s.journal().back().type, "completed");
  EXPECT_NEAR(s.journal().back().data["score"].get<double>(), episode_score(s.log(), false), 1e-12);
  EXPECT_EQ(code_of([&] { s.advance(std::nullopt); }), ErrorCode::kConflict);
  EXPECT_EQ(code_of([&] { s.inject(near_depot(sc, 10, 10)); }), ErrorCode::kConflict);
}

TEST(Session, SplittingAnAdvanceDoesNotChangeTheJournal) {
  const ScenarioInstance sc = small_scenario();
  MissionSession once("a", sc, SessionMethod{}, toy_policy());
  MissionSession twice("a", sc, SessionMethod{}, toy_policy());
  once.advance(3000.0);
  twice.advance(1200.0);
  twice.advance(3000.0);
  ASSERT_EQ(once.journal().size(), twice.journal().size());
  for (std::size_t i = 0; i < once.journal().size(); ++i) {
    EXPECT_EQ(journal_event_json(once.journal()[i]), journal_event_json(twice.journal()[i]));
  }
}

void expect_replay_matches(MissionSession& live, std::shared_ptr<const PolicyParams> params) {
  const auto replayed = MissionSession::replay(live.journal(), params);
  EXPECT_EQ(replayed->state_json(), live.state_json());
  EXPECT_EQ(replayed->journal().size(), live.journal().size());
}

TEST(Session, ReplayRebuildsPolicySessions) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, SessionMethod{}, toy_policy());
  s.advance(900.0);
  s.inject(near_depot(sc, 500, 200, 1.5));
  s.set_weights({{sc.points[2].id, 0.5}}, 0.75);
  s.advance(std::nullopt);
  s.inject(near_depot(sc, -300, 400));
  s.advance(2500.0);
  expect_replay_matches(s, toy_policy());
}

TEST(Session, ReplayRebuildsPlannerSessions) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, planner_method(), nullptr);
  s.advance(std::nullopt);
  s.inject(near_depot(sc, 500, 200, 2.0));
  s.set_weights({{sc.points[0].id, 1.5}}, 0.5);
  s.advance(1e9);
  expect_replay_matches(s, nullptr);
}

TEST(Session, ReplayDetectsTampering) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, SessionMethod{}, toy_policy());
  s.advance(1500.0);
  std::vector<JournalEvent> j = s.journal();
  for (JournalEvent& e : j) {
    if (e.type == "visit") {
      e.data["t"] = e.data["t"].get<double>() + 1.0;
      break;
    }
  }
  EXPECT_EQ(code_of([&] { MissionSession::replay(j, toy_policy()); }), ErrorCode::kCorruptFile);
  j.pop_back();
  EXPECT_EQ(code_of([&] { MissionSession::replay(std::vector<JournalEvent>(j.begin() + 1, j.end()), toy_policy()); }),
            ErrorCode::kCorruptFile);
}

TEST(Session, AgesAgreeWithTheJournal) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, planner_method(), nullptr);
  s.advance(std::nullopt);
  s.inject(near_depot(sc, 250, 250));
  s.advance(std::nullopt);
  s.advance(std::nullopt);
  const double t = s.env_state().clock;
  const std::vector<double> from_journal = ages_at(log_from_journal(s.journal()), t);
  const std::vector<double> from_log = ages_at(s.log(), t);
  const ojson st = s.state_json();
  ASSERT_EQ(from_journal.size(), st["points"].size());
  for (std::size_t k = 0; k < from_journal.size(); ++k) {
    EXPECT_NEAR(from_journal[k], st["points"][k]["age"].get<double>(), 1e-9) << k;
    EXPECT_NEAR(from_journal[k], from_log[k], 1e-9) << k;
  }
}

TEST(Session, SortieStartsAtTheLastRendezvous) {
  const ScenarioInstance sc = small_scenario();
  MissionSession s("a", sc, SessionMethod{}, toy_policy());
  s.advance(std::nullopt);
  s.step();
  const ojson sortie = s.state_json()["sortie"];
  ASSERT_GE(sortie.size(), 2u);
  const auto& r = s.log().rendezvous.back();
  EXPECT_NEAR(sortie[0]["pos"][0].get<double>(), r.uav_pos.x, 1e-9);
  EXPECT_NEAR(sortie[0]["pos"][1].get<double>(), r.uav_pos.y, 1e-9);
}

TEST(SessionManager, IdsJournalsAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "persurv_journals";
  std::filesystem::remove_all(dir);
  SessionManager mgr(toy_policy(), dir);
  const std::string a = mgr.create(small_scenario(), SessionMethod{});
  const std::string b = mgr.create(small_scenario(), planner_method());
  EXPECT_NE(a, b);
  EXPECT_EQ(code_of([&] { mgr.find("nope"); }), ErrorCode::kNotFound);

  auto entry = mgr.find(a);
  mgr.with_session(*entry, [](MissionSession& s) { s.advance(1000.0); });
  const ojson snap = ojson::parse(*mgr.snapshot(*entry));
  EXPECT_GE(snap["clock"].get<double>(), 1000.0);

  std::vector<JournalEvent> journal;
  std::istringstream lines(read_file(dir / (a + ".jsonl")));
  for (std::string line; std::getline(lines, line);) {
    const ojson j = ojson::parse(line);
    journal.push_back({j["seq"].get<std::uint64_t>(), j["type"].get<std::string>(), j["data"]});
  }
  EXPECT_EQ(journal.size(), snap["last_seq"].get<std::size_t>());
  EXPECT_EQ(MissionSession::replay(journal, toy_policy())->state_json(), snap);

  const auto tail = mgr.events_after(*entry, 3, std::chrono::milliseconds(0));
  ASSERT_FALSE(tail.empty());
  EXPECT_EQ(tail.front().seq, 4u);

  SessionManager bare;
  EXPECT_EQ(code_of([&] { bare.create(small_scenario(), SessionMethod{}); }), ErrorCode::kValidation);
  std::filesystem::remove_all(dir);
}

struct SseEvent {
  std::uint64_t id = 0;
  std::string type;
  ojson data;
};

std::vector<SseEvent> parse_sse(const std::string& body) {
  std::vector<SseEvent> out;
  std::istringstream in(body);
  SseEvent cur;
  bool any = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) {
      if (any) out.push_back(cur);
      cur = {};
      any = false;
    } else if (line.rfind("id: ", 0) == 0) {
      cur.id = std::stoull(line.substr(4));
      any = true;
    } else if (line.rfind("event: ", 0) == 0) {
      cur.type = line.substr(7);
    } else if (line.rfind("data: ", 0) == 0) {
      cur.data = ojson::parse(line.substr(6));
    }
  }
  return out;
}

class HttpApi : public ::testing::Test {
 protected:
  void SetUp() override {
    server_ = std::make_unique<MissionServer>(std::make_shared<SessionManager>(toy_policy()));
    port_ = server_->bind("127.0.0.1", 0);
    server_->start();
  }
  void TearDown() override { server_->stop(); }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

  std::string create(const ScenarioInstance& sc, const ojson& method = ojson::object()) {
    ojson body{{"scenario", ojson::parse(scenario_to_json(sc))}};
    if (!method.empty()) body["method"] = method;
    auto res = client().Post("/sessions", body.dump(), "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 201) << res->body;
    return ojson::parse(res->body)["id"].get<std::string>();
  }

  std::unique_ptr<MissionServer> server_;
  int port_ = 0;
};

TEST_F(HttpApi, CreateAndRead) {
  const ScenarioInstance sc = small_scenario();
  const std::string id = create(sc);
  auto res = client().Get("/sessions/" + id);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const ojson st = ojson::parse(res->body);
  EXPECT_EQ(st["status"], "Idle");
  EXPECT_EQ(st["points"].size(), 7u);
  EXPECT_EQ(client().Get("/sessions/zzz")->status, 404);

  ojson bad = ojson::parse(scenario_to_json(sc));
  bad["vehicle"]["v_a"] = -1.0;
  auto r400 = client().Post("/sessions", ojson{{"scenario", bad}}.dump(), "application/json");
  ASSERT_TRUE(r400);
  EXPECT_EQ(r400->status, 400);
  EXPECT_EQ(ojson::parse(r400->body)["field"], "scenario.vehicle.v_a");
}

TEST_F(HttpApi, InjectWeightsAdvanceAndComplete) {
  const ScenarioInstance sc = small_scenario(3000.0);
  const std::string id = create(sc, {{"method", "TS"}, {"iterations", 200}});
  const std::string base = "/sessions/" + id;
  auto c = client();

  ojson point{{"pos", {sc.depot.x + 300.0, sc.depot.y + 200.0}}, {"weight", 2.0}};
  auto inj = c.Post(base + "/points", point.dump(), "application/json");
  ASSERT_TRUE(inj);
  EXPECT_EQ(inj->status, 202);
  const ojson accepted = ojson::parse(inj->body);
  EXPECT_EQ(accepted["status"], "pending");
  const int pid = accepted["point_id"].get<int>();
  EXPECT_EQ(ojson::parse(c.Get(base)->body)["status"], "AwaitingRendezvous");

  EXPECT_EQ(c.Post(base + "/points", R"({"pos": [-10, 5]})", "application/json")->status, 422);
  EXPECT_EQ(c.Post(base + "/points", R"({"pos": [100, 100], "kind": "ground"})", "application/json")->status, 422);

  EXPECT_EQ(c.Put(base + "/weights", R"({"weights": {"999": 2.0}})", "application/json")->status, 404);
  EXPECT_EQ(c.Put(base + "/weights", R"({"S": 3})", "application/json")->status, 422);
  const ojson w{{"weights", {{std::to_string(sc.points[0].id), 1.5}}}, {"S", 0.75}};
  EXPECT_EQ(c.Put(base + "/weights", w.dump(), "application/json")->status, 200);

  auto adv = c.Post(base + "/advance", R"({"until": "next-rendezvous"})", "application/json");
  ASSERT_TRUE(adv);
  ASSERT_EQ(adv->status, 200);
  const ojson st = ojson::parse(adv->body);
  EXPECT_EQ(st["status"], "Running");
  EXPECT_EQ(st["points"].back()["id"], pid);
  EXPECT_EQ(st["priority_scale"].get<double>(), 0.75);

  auto done = c.Post(base + "/advance", R"({"until": 1e9})", "application/json");
  ASSERT_TRUE(done);
  EXPECT_EQ(ojson::parse(done->body)["status"], "Completed");
  EXPECT_EQ(c.Post(base + "/advance", "{}", "application/json")->status, 409);
  EXPECT_EQ(c.Post(base + "/advance", R"({"until": "soon"})", "application/json")->status, 400);
}

TEST_F(HttpApi, EventStreamResumesFromLastEventId) {
  const ScenarioInstance sc = small_scenario(2500.0);
  const std::string id = create(sc);
  const std::string events = "/sessions/" + id + "/events";

  std::string streamed;
  std::thread follower([&] {
    auto c = client();
    c.Get(events, [&](const char* data, std::size_t n) {
      streamed.append(data, n);
      return true;
    });
  });
  auto c = client();
  c.Post("/sessions/" + id + "/advance", R"({"until": 800})", "application/json");
  c.Post("/sessions/" + id + "/advance", R"({"until": 1e9})", "application/json");
  follower.join();

  const std::vector<SseEvent> live = parse_sse(streamed);
  ASSERT_GT(live.size(), 5u);
  EXPECT_EQ(live.front().type, "created");
  EXPECT_EQ(live.back().type, "completed");
  for (std::size_t i = 1; i < live.size(); ++i) EXPECT_EQ(live[i].id, live[i - 1].id + 1);

  auto resumed = c.Get(events + "?follow=0", {{"Last-Event-ID", "5"}});
  ASSERT_TRUE(resumed);
  const std::vector<SseEvent> tail = parse_sse(resumed->body);
  ASSERT_EQ(tail.size(), live.size() - 5);
  EXPECT_EQ(tail.front().id, 6u);
  EXPECT_EQ(tail.back().data, live.back().data);

  const std::vector<SseEvent> after = parse_sse(c.Get(events + "?after=7&follow=0")->body);
  ASSERT_FALSE(after.empty());
  EXPECT_EQ(after.front().id, 8u);
}

}  // namespace
}  // namespace persurv
