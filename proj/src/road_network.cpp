#include "persurv/road_network.hpp"

#include <algorithm>
#include <limits>
#include <queue>

#include "persurv/error.hpp"

namespace persurv {

namespace {

struct Projection {
  double t;
  double dist;
  Point2D point;
};

Projection project(Point2D p, Point2D a, Point2D b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  }
  const Point2D q = lerp(a, b, t);
  return {t, distance(p, q), q};
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

double polyline_length(std::span<const Point2D> line) {
  double total = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) total += distance(line[i - 1], line[i]);
  return total;
}

Point2D point_along(std::span<const Point2D> line, double s) {
  if (line.empty()) return {};
  if (s <= 0.0) return line.front();
  for (std::size_t i = 1; i < line.size(); ++i) {
    const double seg = distance(line[i - 1], line[i]);
    if (s <= seg) return seg > 0.0 ? lerp(line[i - 1], line[i], s / seg) : line[i];
    s -= seg;
  }
  return line.back();
}

std::vector<double> arclength_hits(std::span<const Point2D> line, Point2D p, double tol) {
  std::vector<double> hits;
  if (line.size() == 1) {
    if (distance(line[0], p) <= tol) hits.push_back(0.0);
    return hits;
  }
  double cum = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) {
    const double seg = distance(line[i - 1], line[i]);
    const Projection pr = project(p, line[i - 1], line[i]);
    if (pr.dist <= tol) {
      const double s = cum + pr.t * seg;
      if (hits.empty() || s - hits.back() > 2.0 * tol) hits.push_back(s);
    }
    cum += seg;
  }
  return hits;
}

RoadNetwork RoadNetwork::build(std::span<const Polyline> polylines) {
  if (polylines.empty()) throw Error(ErrorCode::kValidation, "road network needs at least one polyline");
  RoadNetwork net;
  net.polylines_.assign(polylines.begin(), polylines.end());

  auto vertex_for = [&net](Point2D p) {
    for (std::size_t i = 0; i < net.vertices_.size(); ++i) {
      if (distance(net.vertices_[i], p) <= kSnapTolerance) return static_cast<int>(i);
    }
    net.vertices_.push_back(p);
    return static_cast<int>(net.vertices_.size() - 1);
  };

  std::vector<std::pair<int, int>> raw;
  auto add_raw = [&raw](int u, int v) {
    if (u == v) return;
    for (const auto& [a, b] : raw) {
      if ((a == u && b == v) || (a == v && b == u)) return;
    }
    raw.emplace_back(u, v);
  };

  for (const Polyline& line : polylines) {
    if (line.size() < 2) throw Error(ErrorCode::kValidation, "polyline needs at least two points");
    int prev = -1;
    for (const Point2D& p : line) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw Error(ErrorCode::kValidation, "non-finite road coordinate");
      }
      const int v = vertex_for(p);
      if (prev >= 0) add_raw(prev, v);
      prev = v;
    }
  }

  // T-junctions: a vertex lying on the interior of another edge splits it.
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t w = 0; w < net.vertices_.size() && !changed; ++w) {
      for (std::size_t e = 0; e < raw.size(); ++e) {
        const auto [u, v] = raw[e];
        if (static_cast<int>(w) == u || static_cast<int>(w) == v) continue;
        const Projection pr = project(net.vertices_[w], net.vertices_[u], net.vertices_[v]);
        if (pr.dist <= kSnapTolerance && pr.t > 0.0 && pr.t < 1.0) {
          raw.erase(raw.begin() + static_cast<std::ptrdiff_t>(e));
          add_raw(u, static_cast<int>(w));
          add_raw(static_cast<int>(w), v);
          changed = true;
          break;
        }
      }
    }
  }

  if (raw.empty()) throw Error(ErrorCode::kValidation, "road network has no edges of positive length");

  net.adjacency_.assign(net.vertices_.size(), {});
  for (const auto& [u, v] : raw) {
    const int id = static_cast<int>(net.edges_.size());
    net.edges_.push_back({u, v, distance(net.vertices_[u], net.vertices_[v])});
    net.adjacency_[u].push_back({v, id});
    net.adjacency_[v].push_back({u, id});
  }

  std::vector<char> seen(net.vertices_.size(), 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (const Adjacent& a : net.adjacency_[v]) {
      if (!seen[a.vertex]) {
        seen[a.vertex] = 1;
        ++reached;
        stack.push_back(a.vertex);
      }
    }
  }
  if (reached != net.vertices_.size()) {
    throw Error(ErrorCode::kDisconnectedNetwork,
                std::to_string(net.vertices_.size() - reached) + " vertices unreachable");
  }

  for (std::size_t v = 0; v < net.vertices_.size(); ++v) {
    if (net.adjacency_[v].size() == 1) net.branch_endpoints_.push_back(static_cast<int>(v));
  }
  return net;
}

double RoadNetwork::total_length() const {
  double total = 0.0;
  for (const RoadEdge& e : edges_) total += e.length;
  return total;
}

std::optional<RoadLocation> RoadNetwork::snap(Point2D p, double tol) const {
  std::optional<RoadLocation> best;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Projection pr = project(p, vertices_[edges_[e].u], vertices_[edges_[e].v]);
    if (pr.dist <= tol && (!best || pr.dist < best->offset)) {
      best = RoadLocation{static_cast<int>(e), pr.t, pr.dist, pr.point};
    }
  }
  return best;
}

std::vector<double> RoadNetwork::distances_from(int vertex, std::vector<int>* predecessor) const {
  std::vector<double> dist(vertices_.size(), kInf);
  if (predecessor) predecessor->assign(vertices_.size(), -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[vertex] = 0.0;
  queue.emplace(0.0, vertex);
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const Adjacent& a : adjacency_[v]) {
      const double nd = d + edges_[a.edge].length;
      if (nd < dist[a.vertex]) {
        dist[a.vertex] = nd;
        if (predecessor) (*predecessor)[a.vertex] = v;
        queue.emplace(nd, a.vertex);
      }
    }
  }
  return dist;
}

RoadPath RoadNetwork::shortest_path(Point2D a, Point2D b) const {
  const auto la = snap(a);
  const auto lb = snap(b);
  if (!la || !lb) throw Error(ErrorCode::kOffRoad, "endpoint farther than 1 m from the road");

  const Point2D pa = la->projected;
  const Point2D pb = lb->projected;
  const RoadEdge& ea = edges_[la->edge];
  const RoadEdge& eb = edges_[lb->edge];

  RoadPath best;
  best.length = kInf;
  if (la->edge == lb->edge) {
    best.length = std::abs(la->t - lb->t) * ea.length;
    best.points = {pa, pb};
  }

  // Dijkstra seeded from both ends of a's edge.
  std::vector<double> dist(vertices_.size(), kInf);
  std::vector<int> pred(vertices_.size(), -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  auto seed = [&](int v, double d) {
    if (d < dist[v]) {
      dist[v] = d;
      queue.emplace(d, v);
    }
  };
  seed(ea.u, la->t * ea.length);
  seed(ea.v, (1.0 - la->t) * ea.length);
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const Adjacent& adj : adjacency_[v]) {
      const double nd = d + edges_[adj.edge].length;
      if (nd < dist[adj.vertex]) {
        dist[adj.vertex] = nd;
        pred[adj.vertex] = v;
        queue.emplace(nd, adj.vertex);
      }
    }
  }

  const double via_u = dist[eb.u] + lb->t * eb.length;
  const double via_v = dist[eb.v] + (1.0 - lb->t) * eb.length;
  const int last = via_u <= via_v ? eb.u : eb.v;
  const double graph_len = std::min(via_u, via_v);
  if (graph_len < best.length - 1e-9) {
    std::vector<int> chain;
    for (int v = last; v >= 0; v = pred[v]) chain.push_back(v);
    std::reverse(chain.begin(), chain.end());
    best.length = graph_len;
    best.points.clear();
    best.points.push_back(pa);
    for (int v : chain) best.points.push_back(vertices_[v]);
    best.points.push_back(pb);
  }

  // Drop consecutive duplicates (endpoints that coincide with vertices).
  Polyline cleaned;
  for (const Point2D& p : best.points) {
    if (cleaned.empty() || distance(cleaned.back(), p) > 1e-9) cleaned.push_back(p);
  }
  best.points = std::move(cleaned);
  return best;
}

Point2D RoadNetwork::point_at_network_arclength(double s) const {
  for (const RoadEdge& e : edges_) {
    if (s <= e.length) return lerp(vertices_[e.u], vertices_[e.v], s / e.length);
    s -= e.length;
  }
  return vertices_[edges_.back().v];
}

std::vector<Polyline> default_road_polylines() {
  return {
      {{5000, 10000}, {8000, 10000}, {10000, 10000}, {12500, 10000}, {15000, 10000}},
      {{10000, 10000}, {10000, 12500}, {10000, 15000}},
      {{10000, 10000}, {10000, 7500}, {10000, 5000}},
      {{8000, 10000}, {7000, 13000}},
      {{12500, 10000}, {13500, 6500}},
  };
}

}  // namespace persurv
