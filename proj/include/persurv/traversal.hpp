#pragma once

#include <vector>

#include "persurv/scenario.hpp"

namespace persurv {

using DistanceMatrix = std::vector<std::vector<double>>;

// Closed tour starting and ending at node 0; `order` lists the nodes visited
// after node 0.
struct TspTour {
  std::vector<int> order;
  double length = 0.0;
};

double tour_length(const DistanceMatrix& d, const std::vector<int>& order);
// Exhaustive; permutations are scanned in lexicographic order so the first
// minimum wins ties.
TspTour brute_force_tsp(const DistanceMatrix& d);
// Held-Karp dynamic program over subsets, O(2^n n^2).
TspTour held_karp_tsp(const DistanceMatrix& d);
TspTour nearest_neighbor_two_opt(const DistanceMatrix& d);

inline constexpr int kMaxExactEndpoints = 15;
inline constexpr int kBruteForceBelow = 9;

// UGV loop over the road: depot -> branch endpoints (TSP order) -> depot,
// expanded into a road polyline. The UGV runs it cyclically.
struct TraversalRoute {
  Polyline path;
  double length = 0.0;
  std::vector<int> endpoint_order;  // road vertex ids
  bool closed = true;
  bool exact = true;  // false when the heuristic fallback produced the order
};

// Throws kTooManyEndpoints above kMaxExactEndpoints unless `allow_fallback`.
TraversalRoute ugv_traversal_direction(const ScenarioInstance& s, bool allow_fallback = true);

// Position `offset` meters ahead of arclength `from`, wrapping on closed
// routes and clamping at the end of open ones.
double advance_along(const TraversalRoute& route, double from, double offset);
Point2D route_point(const TraversalRoute& route, double s);

}  // namespace persurv
