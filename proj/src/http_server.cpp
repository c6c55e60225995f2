#include "persurv/http_server.hpp"

#include <httplib.h>

#include <cmath>

namespace persurv {

namespace {

int http_status(ErrorCode code, int validation_status) {
  switch (code) {
    case ErrorCode::kValidation: return validation_status;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict: return 409;
    default: return 500;
  }
}

// "Validation: vehicle.v_a: must be positive" -> "vehicle.v_a"
std::string field_of(const Error& e) {
  std::string msg = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
  const auto colon = msg.find(": ");
  if (colon == std::string::npos || msg.find(' ') < colon) return {};
  return msg.substr(0, colon);
}

void reply(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, const Error& e, int validation_status, const std::string& field_prefix = {}) {
  ojson body{{"error", e.what()}, {"code", std::string(to_string(e.code()))}};
  const std::string field = field_of(e);
  if (!field.empty()) body["field"] = field_prefix + field;
  reply(res, http_status(e.code(), validation_status), body);
}

ojson parse_body(const httplib::Request& req) {
  if (req.body.empty()) return ojson::object();
  try {
    return ojson::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("body: malformed JSON (") + e.what() + ")");
  }
}

Point2D parse_pos(const ojson& j) {
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
    return {j[0].get<double>(), j[1].get<double>()};
  }
  if (j.is_object() && j.contains("x") && j.contains("y") && j["x"].is_number() && j["y"].is_number()) {
    return {j["x"].get<double>(), j["y"].get<double>()};
  }
  throw Error(ErrorCode::kValidation, "pos: expected [x, y] in meters");
}

std::string sse_frame(const JournalEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
}

}  // namespace

MissionServer::MissionServer(std::shared_ptr<SessionManager> sessions)
    : sessions_(std::move(sessions)), server_(std::make_unique<httplib::Server>()) {
  routes();
}

MissionServer::~MissionServer() { stop(); }

int MissionServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound <= 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void MissionServer::listen() { server_->listen_after_bind(); }

void MissionServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void MissionServer::stop() {
  stopping_ = true;
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

void MissionServer::routes() {
  httplib::Server& svr = *server_;

  svr.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const ojson body = parse_body(req);
      if (!body.is_object() || !body.contains("scenario")) {
        throw Error(ErrorCode::kValidation, "scenario: missing");
      }
      ScenarioInstance s;
      try {
        s = scenario_from_json(body["scenario"].dump());
        validate(s);
      } catch (const Error& e) {
        reply_error(res, e, 400, "scenario.");
        return;
      }
      SessionMethod m;
      if (body.contains("method")) m = body["method"].get<SessionMethod>();
      const std::string id = sessions_->create(s, m);
      auto entry = sessions_->find(id);
      reply(res, 201, {{"id", id}, {"state", ojson::parse(*sessions_->snapshot(*entry))}});
    } catch (const Error& e) {
      reply_error(res, e, 400);
    }
  });

  svr.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto entry = sessions_->find(req.matches[1]);
      res.status = 200;
      res.set_content(*sessions_->snapshot(*entry), "application/json");
    } catch (const Error& e) {
      reply_error(res, e, 400);
    }
  });

  svr.Post(R"(/sessions/([^/]+)/advance)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto entry = sessions_->find(req.matches[1]);
      const ojson body = parse_body(req);
      std::optional<double> until;
      if (body.contains("until") && !body["until"].is_null()) {
        const ojson& u = body["until"];
        if (u.is_number()) {
          until = u.get<double>();
        } else if (!(u.is_string() && u.get<std::string>() == "next-rendezvous")) {
          throw Error(ErrorCode::kValidation, "until: expected seconds or \"next-rendezvous\"");
        }
      }
      sessions_->with_session(*entry, [&](MissionSession& s) { s.advance(until); });
      res.status = 200;
      res.set_content(*sessions_->snapshot(*entry), "application/json");
    } catch (const Error& e) {
      reply_error(res, e, 400);
    }
  });

  svr.Post(R"(/sessions/([^/]+)/points)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto entry = sessions_->find(req.matches[1]);
      const ojson body = parse_body(req);
      if (!body.is_object() || !body.contains("pos")) throw Error(ErrorCode::kValidation, "pos: missing");
      InjectRequest r;
      r.pos = parse_pos(body["pos"]);
      const std::string kind = body.value("kind", std::string("aerial"));
      if (kind == "ground") {
        r.kind = PointKind::kGround;
      } else if (kind != "aerial") {
        throw Error(ErrorCode::kValidation, "kind: expected \"aerial\"");
      }
      if (body.contains("weight")) {
        if (!body["weight"].is_number()) throw Error(ErrorCode::kValidation, "weight: expected a number");
        r.weight = body["weight"].get<double>();
      }
      if (body.contains("client_time") && body["client_time"].is_number()) {
        r.client_time = body["client_time"].get<double>();
      }
      const int id = sessions_->with_session(*entry, [&](MissionSession& s) { return s.inject(r); });
      reply(res, 202, {{"point_id", id},
                       {"status", "pending"},
                       {"activation", "joins the plannable set at the next rendezvous"}});
    } catch (const Error& e) {
      reply_error(res, e, 422);
    }
  });

  svr.Put(R"(/sessions/([^/]+)/weights)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto entry = sessions_->find(req.matches[1]);
      const ojson body = parse_body(req);
      std::map<int, double> weights;
      if (body.contains("weights")) {
        if (!body["weights"].is_object()) throw Error(ErrorCode::kValidation, "weights: expected an object");
        for (const auto& item : body["weights"].items()) {
          int id = 0;
          try {
            std::size_t used = 0;
            id = std::stoi(item.key(), &used);
            if (used != item.key().size()) throw std::invalid_argument(item.key());
          } catch (const std::exception&) {
            throw Error(ErrorCode::kNotFound, "unknown point id " + item.key());
          }
          if (!item.value().is_number()) throw Error(ErrorCode::kValidation, "weights." + item.key() + ": expected a number");
          weights[id] = item.value().get<double>();
        }
      }
      std::optional<double> S;
      if (body.contains("S") && !body["S"].is_null()) {
        if (!body["S"].is_number()) throw Error(ErrorCode::kValidation, "S: expected a number");
        S = body["S"].get<double>();
      }
      sessions_->with_session(*entry, [&](MissionSession& s) { s.set_weights(weights, S); });
      reply(res, 200, {{"applied", weights.size()}, {"S", S ? ojson(*S) : ojson(nullptr)}});
    } catch (const Error& e) {
      reply_error(res, e, 422);
    }
  });

  svr.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_ptr<SessionManager::Entry> entry;
    try {
      entry = sessions_->find(req.matches[1]);
    } catch (const Error& e) {
      reply_error(res, e, 400);
      return;
    }
    std::uint64_t after = 0;
    try {
      if (req.has_header("Last-Event-ID")) after = std::stoull(req.get_header_value("Last-Event-ID"));
      if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
    } catch (const std::exception&) {
      reply(res, 400, {{"error", "after: expected a sequence number"}, {"code", "Validation"}});
      return;
    }
    const bool follow = !(req.has_param("follow") && req.get_param_value("follow") == "0");
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, entry, after, follow](std::size_t, httplib::DataSink& sink) mutable {
          bool completed = false;
          const auto wait = follow ? std::chrono::milliseconds(500) : std::chrono::milliseconds(0);
          const std::vector<JournalEvent> batch = sessions_->events_after(*entry, after, wait, &completed);
          for (const JournalEvent& e : batch) {
            const std::string frame = sse_frame(e);
            if (!sink.write(frame.data(), frame.size())) return false;
            after = e.seq;
          }
          if (batch.empty()) {
            if (!follow || completed || stopping_) {
              sink.done();
              return true;
            }
            static const std::string keepalive = ": keep-alive\n\n";
            if (!sink.write(keepalive.data(), keepalive.size())) return false;
          }
          return true;
        });
  });
}

}  // namespace persurv
