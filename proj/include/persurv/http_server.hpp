#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "persurv/mission_service.hpp"

namespace httplib {
class Server;
}

namespace persurv {

// JSON over HTTP front end for SessionManager:
//   POST /sessions                 create ({"scenario": ..., "method": ...})
//   GET  /sessions/{id}            state document
//   POST /sessions/{id}/advance    {"until": seconds | "next-rendezvous"}
//   POST /sessions/{id}/points     inject an aerial point
//   PUT  /sessions/{id}/weights    {"weights": {"<id>": w}, "S": s}
//   GET  /sessions/{id}/events     server-sent events; resumes after
//                                  Last-Event-ID or ?after=N; ?follow=0
//                                  returns the backlog and closes
class MissionServer {
 public:
  explicit MissionServer(std::shared_ptr<SessionManager> sessions);
  ~MissionServer();
  MissionServer(const MissionServer&) = delete;
  MissionServer& operator=(const MissionServer&) = delete;

  // Port 0 picks a free port. Returns the bound port or throws kIo.
  int bind(const std::string& host, int port);
  // Serves on the calling thread until stop().
  void listen();
  // Serves on a background thread.
  void start();
  void stop();

 private:
  void routes();

  std::shared_ptr<SessionManager> sessions_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
};

}  // namespace persurv
