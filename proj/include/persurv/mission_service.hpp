#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "persurv/bilevel.hpp"
#include "persurv/harness.hpp"
#include "persurv/policy.hpp"

namespace persurv {

enum class SessionStatus { kIdle, kRunning, kAwaitingRendezvous, kCompleted };

std::string to_string(SessionStatus s);

struct SessionMethod {
  std::string method = "policy-greedy";  // or TS / SA / GLS
  std::string params;  // policy parameter file; empty uses the server default
  int iterations = 10000;
  double penalty_scale = 1.0;
  std::uint64_t seed = 0;
};

void to_json(ojson& j, const SessionMethod& m);
void from_json(const ojson& j, SessionMethod& m);

struct InjectRequest {
  Point2D pos;
  PointKind kind = PointKind::kAerial;
  double weight = 1.0;
  std::optional<double> client_time;
};

struct JournalEvent {
  std::uint64_t seq = 0;
  std::string type;
  ojson data;
};

ojson journal_event_json(const JournalEvent& e);

// One live mission. Commands mutate the state one decision at a time and
// append to the journal; the journal alone is enough to rebuild the session
// (see replay). Not internally synchronized; SessionManager serializes
// commands per session.
class MissionSession {
 public:
  // Throws kValidation on an invalid scenario or method.
  MissionSession(std::string id, ScenarioInstance scenario, SessionMethod method,
                 std::shared_ptr<const PolicyParams> params);

  // Runs decisions until the clock reaches `until` (seconds), or through the
  // next rendezvous when `until` is empty. Decisions are atomic, so the clock
  // may end past `until`. Throws kConflict once completed.
  void advance(std::optional<double> until);
  // Returns the id assigned to the queued point.
  int inject(const InjectRequest& req);
  // `weights` maps point ids (active or pending) to weights.
  void set_weights(const std::map<int, double>& weights, std::optional<double> S);

  // One decision (policy action or planner cycle). Returns false once the
  // mission is over.
  bool step();

  const std::string& id() const { return id_; }
  SessionStatus status() const { return status_; }
  const EnvState& env_state() const { return state_; }
  const Environment& environment() const { return *env_; }
  const EpisodeLog& log() const { return log_; }
  const std::vector<JournalEvent>& journal() const { return journal_; }
  ojson state_json() const;

  // Rebuilds a session from its journal (the first event must be "created").
  // Throws kCorruptFile when the re-simulated events diverge.
  static std::unique_ptr<MissionSession> replay(const std::vector<JournalEvent>& journal,
                                                std::shared_ptr<const PolicyParams> params);

  // Called after every appended event.
  void set_event_hook(std::function<void(const JournalEvent&)> hook) { hook_ = std::move(hook); }

 private:
  struct Pending {
    MissionPoint point;
    double requested_at = 0.0;
    std::optional<double> client_time;
  };

  void emit(std::string type, ojson data);
  void step_policy();
  void step_planner();
  void after_rendezvous();
  void refresh_status();
  void rebuild_decoder();

  std::string id_;
  SessionMethod method_;
  MethodSpec spec_;
  std::shared_ptr<const PolicyParams> params_;
  std::unique_ptr<Environment> env_;
  std::unique_ptr<BilevelPlanner> planner_;
  EnvState state_;
  EpisodeLog log_;
  double ugv_offset_ = 0.0;
  int cycle_ = 0;
  std::size_t steps_ = 0;
  std::vector<Pending> pending_;
  int next_point_id_ = 0;
  std::vector<Waypoint> sortie_;  // current or last completed sortie
  bool sortie_closed_ = false;
  SessionStatus status_ = SessionStatus::kIdle;
  std::vector<JournalEvent> journal_;
  std::function<void(const JournalEvent&)> hook_;

  // Policy decoding state, rebuilt whenever the point set changes.
  std::unique_ptr<WeightVars> weights_;
  std::unique_ptr<DecoderContext> decoder_;
};

// Thread-safe registry used by the HTTP layer. Each session has its own
// command lock; readers take the latest published snapshot and never wait
// for a running advance.
class SessionManager {
 public:
  struct Entry {
    std::mutex command;  // serializes mutations
    std::unique_ptr<MissionSession> session;

    mutable std::mutex publish;
    std::condition_variable changed;
    std::shared_ptr<const std::string> snapshot;  // state document
    std::vector<JournalEvent> events;             // copy for streaming
    bool completed = false;
  };

  explicit SessionManager(std::shared_ptr<const PolicyParams> default_params = nullptr,
                          std::filesystem::path journal_dir = {});

  // Throws kValidation for bad scenarios or methods.
  std::string create(const ScenarioInstance& s, const SessionMethod& m);
  std::shared_ptr<Entry> find(const std::string& id) const;

  // Runs `f` on the session under its command lock, then republishes the
  // snapshot.
  template <class F>
  auto with_session(Entry& e, F&& f) {
    std::lock_guard<std::mutex> lock(e.command);
    struct Republish {
      SessionManager* self;
      Entry* e;
      ~Republish() { self->publish(*e); }
    } guard{this, &e};
    return f(*e.session);
  }

  std::shared_ptr<const std::string> snapshot(const Entry& e) const;
  // Events with seq > after; waits up to `wait` for new ones when none are
  // available yet.
  std::vector<JournalEvent> events_after(Entry& e, std::uint64_t after, std::chrono::milliseconds wait,
                                         bool* completed = nullptr) const;

 private:
  void publish(Entry& e);
  std::shared_ptr<const PolicyParams> load_params(const std::string& path);

  std::shared_ptr<const PolicyParams> default_params_;
  std::filesystem::path journal_dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::map<std::string, std::shared_ptr<const PolicyParams>> params_cache_;
  std::uint64_t next_id_ = 1;
};

}  // namespace persurv
