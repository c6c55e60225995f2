#include "persurv/traversal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "persurv/error.hpp"

namespace persurv {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double tour_length(const DistanceMatrix& d, const std::vector<int>& order) {
  double len = 0.0;
  int prev = 0;
  for (int v : order) {
    len += d[prev][v];
    prev = v;
  }
  return len + d[prev][0];
}

TspTour brute_force_tsp(const DistanceMatrix& d) {
  const int n = static_cast<int>(d.size());
  std::vector<int> perm(std::max(0, n - 1));
  std::iota(perm.begin(), perm.end(), 1);
  TspTour best{perm, tour_length(d, perm)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double len = tour_length(d, perm);
    if (len < best.length) best = {perm, len};
  }
  return best;
}

TspTour held_karp_tsp(const DistanceMatrix& d) {
  const int n = static_cast<int>(d.size());
  if (n <= 2) {
    std::vector<int> order;
    if (n == 2) order.push_back(1);
    return {order, n <= 1 ? 0.0 : tour_length(d, order)};
  }
  // cost[mask][j]: shortest path from 0 through the set `mask` of nodes
  // 1..n-1 (bit j-1), ending at j.
  const int m = n - 1;
  const std::size_t full = (std::size_t{1} << m);
  std::vector<double> cost(full * m, kInf);
  std::vector<int> parent(full * m, -1);
  for (int j = 0; j < m; ++j) cost[(std::size_t{1} << j) * m + j] = d[0][j + 1];
  for (std::size_t mask = 1; mask < full; ++mask) {
    for (int j = 0; j < m; ++j) {
      if (!(mask & (std::size_t{1} << j))) continue;
      const double base = cost[mask * m + j];
      if (base == kInf) continue;
      for (int k = 0; k < m; ++k) {
        if (mask & (std::size_t{1} << k)) continue;
        const std::size_t next = mask | (std::size_t{1} << k);
        const double c = base + d[j + 1][k + 1];
        if (c < cost[next * m + k]) {
          cost[next * m + k] = c;
          parent[next * m + k] = j;
        }
      }
    }
  }
  double best = kInf;
  int last = -1;
  for (int j = 0; j < m; ++j) {
    const double c = cost[(full - 1) * m + j] + d[j + 1][0];
    if (c < best) {
      best = c;
      last = j;
    }
  }
  std::vector<int> order;
  std::size_t mask = full - 1;
  while (last >= 0) {
    order.push_back(last + 1);
    const int prev = parent[mask * m + last];
    mask &= ~(std::size_t{1} << last);
    last = prev;
  }
  std::reverse(order.begin(), order.end());
  return {order, best};
}

TspTour nearest_neighbor_two_opt(const DistanceMatrix& d) {
  const int n = static_cast<int>(d.size());
  std::vector<int> order;
  std::vector<char> used(n, 0);
  used[0] = 1;
  int cur = 0;
  for (int step = 1; step < n; ++step) {
    int best = -1;
    for (int v = 1; v < n; ++v) {
      if (!used[v] && (best < 0 || d[cur][v] < d[cur][best])) best = v;
    }
    used[best] = 1;
    order.push_back(best);
    cur = best;
  }
  // 2-opt on the closed tour 0, order..., 0.
  bool improved = true;
  while (improved) {
    improved = false;
    std::vector<int> tour{0};
    tour.insert(tour.end(), order.begin(), order.end());
    tour.push_back(0);
    for (std::size_t i = 1; i + 1 < tour.size() && !improved; ++i) {
      for (std::size_t j = i + 1; j + 1 < tour.size(); ++j) {
        const double delta = d[tour[i - 1]][tour[j]] + d[tour[i]][tour[j + 1]] -
                             d[tour[i - 1]][tour[i]] - d[tour[j]][tour[j + 1]];
        if (delta < -1e-9) {
          std::reverse(order.begin() + static_cast<std::ptrdiff_t>(i - 1),
                       order.begin() + static_cast<std::ptrdiff_t>(j));
          improved = true;
          break;
        }
      }
    }
  }
  return {order, tour_length(d, order)};
}

TraversalRoute ugv_traversal_direction(const ScenarioInstance& s, bool allow_fallback) {
  const RoadNetwork& road = s.road;
  const auto& ends = road.branch_endpoints();
  if (ends.empty()) throw Error(ErrorCode::kValidation, "road network has no branch endpoints");

  std::vector<Point2D> stops{s.depot};
  for (int v : ends) stops.push_back(road.vertices()[v]);
  const int n = static_cast<int>(stops.size());
  DistanceMatrix d(n, std::vector<double>(n, 0.0));
  std::vector<std::vector<Polyline>> paths(n, std::vector<Polyline>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      RoadPath p = road.shortest_path(stops[i], stops[j]);
      d[i][j] = p.length;
      paths[i][j] = std::move(p.points);
    }
  }

  TraversalRoute route;
  TspTour tour;
  const int endpoints = n - 1;
  if (endpoints < kBruteForceBelow) {
    tour = brute_force_tsp(d);
  } else if (endpoints <= kMaxExactEndpoints) {
    tour = held_karp_tsp(d);
  } else {
    if (!allow_fallback) {
      throw Error(ErrorCode::kTooManyEndpoints, std::to_string(endpoints) + " branch endpoints");
    }
    tour = nearest_neighbor_two_opt(d);
    route.exact = false;
  }

  std::vector<int> seq{0};
  seq.insert(seq.end(), tour.order.begin(), tour.order.end());
  seq.push_back(0);
  route.path.push_back(s.depot);
  for (std::size_t k = 1; k < seq.size(); ++k) {
    const Polyline& leg = paths[seq[k - 1]][seq[k]];
    for (const Point2D& p : leg) {
      if (distance(route.path.back(), p) > 1e-9) route.path.push_back(p);
    }
  }
  for (int v : tour.order) route.endpoint_order.push_back(ends[v - 1]);
  route.length = polyline_length(route.path);
  route.closed = true;
  return route;
}

double advance_along(const TraversalRoute& route, double from, double offset) {
  const double s = from + offset;
  if (!route.closed) return std::min(s, route.length);
  if (route.length <= 0.0) return 0.0;
  return std::fmod(s, route.length);
}

Point2D route_point(const TraversalRoute& route, double s) {
  if (route.closed && route.length > 0.0) s = std::fmod(s, route.length);
  return point_along(route.path, s);
}

}  // namespace persurv
