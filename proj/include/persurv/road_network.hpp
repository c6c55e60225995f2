#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace persurv {

// Planar position in meters (x east, y north).
struct Point2D {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2D&, const Point2D&) = default;
};

inline double distance(Point2D a, Point2D b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline Point2D lerp(Point2D a, Point2D b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

// Side of the square operating frame, meters.
inline constexpr double kFrameSize = 20000.0;
inline constexpr double kSnapTolerance = 1.0;

inline bool inside_frame(Point2D p) {
  return p.x >= 0.0 && p.x <= kFrameSize && p.y >= 0.0 && p.y <= kFrameSize;
}

using Polyline = std::vector<Point2D>;

double polyline_length(std::span<const Point2D> line);

// Point at arclength s along the polyline, clamped to its ends.
Point2D point_along(std::span<const Point2D> line, double s);

// Arclength positions at which `p` lies on `line` within `tol`. A point can sit
// on a polyline several times when the line doubles back on itself; repeated
// hits at the same vertex are reported once.
std::vector<double> arclength_hits(std::span<const Point2D> line, Point2D p,
                                   double tol = kSnapTolerance);

struct RoadEdge {
  int u = 0;
  int v = 0;
  double length = 0.0;
};

// Location of a point projected onto the road: edge index and parameter along
// it (0 at edge.u, 1 at edge.v).
struct RoadLocation {
  int edge = 0;
  double t = 0.0;
  double offset = 0.0;  // distance from the query point to the projection
  Point2D projected;
};

struct RoadPath {
  Polyline points;
  double length = 0.0;
};

class RoadNetwork {
 public:
  RoadNetwork() = default;

  // Merges shared endpoints within kSnapTolerance and splits edges where an
  // endpoint of one polyline touches the interior of another.
  // Throws kDisconnectedNetwork / kValidation.
  static RoadNetwork build(std::span<const Polyline> polylines);

  const std::vector<Point2D>& vertices() const { return vertices_; }
  const std::vector<RoadEdge>& edges() const { return edges_; }
  const std::vector<int>& branch_endpoints() const { return branch_endpoints_; }
  const std::vector<Polyline>& source_polylines() const { return polylines_; }

  std::size_t degree(int vertex) const { return adjacency_[vertex].size(); }
  double total_length() const;

  std::optional<RoadLocation> snap(Point2D p, double tol = kSnapTolerance) const;
  bool on_road(Point2D p, double tol = kSnapTolerance) const { return snap(p, tol).has_value(); }

  // Minimal road path between two on-road points. Throws kOffRoad.
  RoadPath shortest_path(Point2D a, Point2D b) const;

  // Shortest distances from a vertex to all vertices (Dijkstra).
  std::vector<double> distances_from(int vertex, std::vector<int>* predecessor = nullptr) const;

  // Point at a given arclength of the whole network (edges in declaration
  // order); used for uniform sampling along the roads.
  Point2D point_at_network_arclength(double s) const;

 private:
  struct Adjacent {
    int vertex;
    int edge;
  };

  std::vector<Point2D> vertices_;
  std::vector<RoadEdge> edges_;
  std::vector<std::vector<Adjacent>> adjacency_;
  std::vector<int> branch_endpoints_;
  std::vector<Polyline> polylines_;
};

// Minimal road distance; throws kOffRoad.
inline RoadPath shortest_road_path(const RoadNetwork& road, Point2D a, Point2D b) {
  return road.shortest_path(a, b);
}

inline RoadNetwork build_road_network(std::span<const Polyline> polylines) {
  return RoadNetwork::build(polylines);
}

// Fixed synthetic network used by the instance generators: an east-west
// arterial with four branches inside the central 10 km of the frame.
std::vector<Polyline> default_road_polylines();

}  // namespace persurv
