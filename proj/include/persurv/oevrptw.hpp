#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "persurv/scenario.hpp"

namespace persurv {

struct RefuelStop {
  Point2D pos;
  double window_open = 0.0;   // seconds after the cycle starts
  double route_offset = 0.0;  // meters ahead of the UGV along its route
  int point = -1;             // ground mission point at this stop, if any
};

using RefuelStopSet = std::vector<RefuelStop>;

enum class Metaheuristic { kTabu, kAnnealing, kGuidedLocalSearch };

std::string to_string(Metaheuristic m);
Metaheuristic metaheuristic_from_string(const std::string& s);

struct PlannerConfig {
  Metaheuristic metaheuristic = Metaheuristic::kTabu;
  int iterations = 10000;
  double time_limit = 0.0;  // wall-clock seconds; 0 disables the cap
  int tabu_tenure = 12;
  double sa_t0_fraction = 0.1;
  double sa_cooling = 0.995;
  double gls_penalty_factor = 0.3;
  // Multiplies the squared-age drop penalties before they meet travel seconds.
  double penalty_scale = 1.0;
  double stop_spacing = 500.0;
  std::uint64_t seed = 0;
};

void validate(const PlannerConfig& cfg);

struct OevrptwInstance {
  Point2D start;
  std::vector<Point2D> nodes;
  std::vector<double> penalties;  // P_i, seconds^2 (already scaled)
  RefuelStopSet stops;
  double fuel = 0.0;  // joules available at the start
  VehicleParams vehicle;

  // Square distance matrix over [start, nodes..., stops...].
  std::vector<double> dist;
  std::size_t dim = 0;

  // Fills `dist`; call after changing positions.
  void finalize();
  double d(std::size_t a, std::size_t b) const { return dist[a * dim + b]; }
  std::size_t node_index(int i) const { return 1 + static_cast<std::size_t>(i); }
  std::size_t stop_index(int s) const { return 1 + nodes.size() + static_cast<std::size_t>(s); }
  double travel_time(std::size_t a, std::size_t b) const { return d(a, b) / vehicle.v_a; }
  double fuel_cost(std::size_t a, std::size_t b) const { return edge_energy(d(a, b), vehicle); }
};

// `route` lists node indices in flight order; the sortie always ends at
// exactly one refuel stop.
struct OevrptwSolution {
  std::vector<int> route;
  int stop = -1;
  double length = 0.0;  // meters
  double objective = 0.0;
};

double route_length(const OevrptwInstance& inst, const std::vector<int>& route, int stop);
double dropped_penalty(const OevrptwInstance& inst, const std::vector<int>& route);
// Recomputes length and objective in place.
void evaluate(const OevrptwInstance& inst, OevrptwSolution& sol);

// Independent check: fuel replayed edge by edge, every node at most once,
// stop index valid. Returns an empty string when feasible.
std::string check_sortie(const OevrptwInstance& inst, const OevrptwSolution& sol);

OevrptwSolution constructive_seed(const OevrptwInstance& inst);
OevrptwSolution solve_oevrptw(const OevrptwInstance& inst, const PlannerConfig& cfg);
OevrptwSolution brute_force_oevrptw(const OevrptwInstance& inst);

inline constexpr int kBruteForceMaxNodes = 9;

class Rng;

// Random benchmark instance: nodes and stops scattered around the start,
// penalties comparable to travel seconds, partial fuel. At least one stop is
// always reachable.
OevrptwInstance sample_oevrptw_instance(Rng& rng, int nodes, int stops);

double optimality_gap(double obj, double best);

}  // namespace persurv
