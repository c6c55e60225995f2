#include "persurv/oevrptw.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "persurv/error.hpp"
#include "persurv/rng.hpp"

namespace persurv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFuelSlack = 1e-6;
constexpr double kImprove = 1e-9;

}  // namespace

std::string to_string(Metaheuristic m) {
  switch (m) {
    case Metaheuristic::kTabu: return "TS";
    case Metaheuristic::kAnnealing: return "SA";
    case Metaheuristic::kGuidedLocalSearch: return "GLS";
  }
  return "TS";
}

Metaheuristic metaheuristic_from_string(const std::string& s) {
  if (s == "TS" || s == "ts") return Metaheuristic::kTabu;
  if (s == "SA" || s == "sa") return Metaheuristic::kAnnealing;
  if (s == "GLS" || s == "gls") return Metaheuristic::kGuidedLocalSearch;
  throw Error(ErrorCode::kValidation, "metaheuristic: expected TS, SA or GLS, got '" + s + "'");
}

void validate(const PlannerConfig& cfg) {
  auto require = [](bool ok, const char* field) {
    if (!ok) throw Error(ErrorCode::kValidation, std::string("planner.") + field + " must be positive");
  };
  require(cfg.iterations > 0, "iterations");
  require(cfg.time_limit >= 0.0, "time_limit");
  require(cfg.tabu_tenure > 0, "tabu_tenure");
  require(cfg.sa_t0_fraction > 0.0, "sa_t0_fraction");
  require(cfg.sa_cooling > 0.0 && cfg.sa_cooling < 1.0, "sa_cooling");
  require(cfg.gls_penalty_factor > 0.0, "gls_penalty_factor");
  require(cfg.penalty_scale > 0.0, "penalty_scale");
  require(cfg.stop_spacing > 0.0, "stop_spacing");
}

void OevrptwInstance::finalize() {
  std::vector<Point2D> all{start};
  all.insert(all.end(), nodes.begin(), nodes.end());
  for (const RefuelStop& s : stops) all.push_back(s.pos);
  dim = all.size();
  dist.assign(dim * dim, 0.0);
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = a + 1; b < dim; ++b) {
      dist[a * dim + b] = dist[b * dim + a] = distance(all[a], all[b]);
    }
  }
}

double route_length(const OevrptwInstance& inst, const std::vector<int>& route, int stop) {
  double len = 0.0;
  std::size_t prev = 0;
  for (int i : route) {
    len += inst.d(prev, inst.node_index(i));
    prev = inst.node_index(i);
  }
  return len + inst.d(prev, inst.stop_index(stop));
}

double dropped_penalty(const OevrptwInstance& inst, const std::vector<int>& route) {
  std::vector<char> used(inst.nodes.size(), 0);
  for (int i : route) used[i] = 1;
  double p = 0.0;
  for (std::size_t i = 0; i < used.size(); ++i) {
    if (!used[i]) p += inst.penalties[i];
  }
  return p;
}

void evaluate(const OevrptwInstance& inst, OevrptwSolution& sol) {
  sol.length = route_length(inst, sol.route, sol.stop);
  sol.objective = sol.length / inst.vehicle.v_a + dropped_penalty(inst, sol.route);
}

std::string check_sortie(const OevrptwInstance& inst, const OevrptwSolution& sol) {
  if (sol.stop < 0 || sol.stop >= static_cast<int>(inst.stops.size())) return "terminal stop out of range";
  std::vector<char> seen(inst.nodes.size(), 0);
  double fuel = inst.fuel;
  std::size_t prev = 0;
  for (int i : sol.route) {
    if (i < 0 || i >= static_cast<int>(inst.nodes.size())) return "node index out of range";
    if (seen[i]) return "node visited twice";
    seen[i] = 1;
    fuel -= edge_energy(distance(inst.nodes[i], prev == 0 ? inst.start : inst.nodes[prev - 1]),
                        inst.vehicle);
    if (fuel < -kFuelSlack) return "fuel exhausted before node";
    prev = inst.node_index(i);
  }
  const Point2D last = prev == 0 ? inst.start : inst.nodes[prev - 1];
  fuel -= edge_energy(distance(last, inst.stops[sol.stop].pos), inst.vehicle);
  if (fuel < -kFuelSlack) return "fuel exhausted before refuel stop";
  return {};
}

namespace {

double energy_per_meter(const VehicleParams& v) { return fuel_power(v.v_a, v) / v.v_a; }

bool within_fuel(const OevrptwInstance& inst, double length) {
  return energy_per_meter(inst.vehicle) * length <= inst.fuel + kFuelSlack;
}

void require_reachable_stop(const OevrptwInstance& inst) {
  for (std::size_t s = 0; s < inst.stops.size(); ++s) {
    if (within_fuel(inst, inst.d(0, inst.stop_index(static_cast<int>(s))))) return;
  }
  throw Error(ErrorCode::kNoFeasibleSortie, "no refuel stop reachable from the sortie start");
}

enum class MoveType { kRelocate, kTwoOpt, kDrop, kAdd, kExchange, kStop };

struct Move {
  MoveType type = MoveType::kDrop;
  int i = 0;
  int j = 0;
};

// Mutable working solution with O(1) move evaluation.
class Search {
 public:
  explicit Search(const OevrptwInstance& inst) : inst_(inst), in_route_(inst.nodes.size(), 0) {}

  void load(const OevrptwSolution& sol) {
    route_ = sol.route;
    stop_ = sol.stop;
    std::fill(in_route_.begin(), in_route_.end(), 0);
    for (int i : route_) in_route_[i] = 1;
    refresh();
  }

  OevrptwSolution snapshot() const { return {route_, stop_, length_, objective_}; }
  double objective() const { return objective_; }
  double length() const { return length_; }
  int size() const { return static_cast<int>(route_.size()); }
  int stop() const { return stop_; }
  const std::vector<int>& route() const { return route_; }

  // Matrix index of route position k; -1 is the start and size() the stop.
  std::size_t at(int k) const {
    if (k < 0) return 0;
    if (k >= size()) return inst_.stop_index(stop_);
    return inst_.node_index(route_[k]);
  }

  struct TrueDist {
    const OevrptwInstance* inst;
    double operator()(std::size_t a, std::size_t b) const { return inst->d(a, b); }
  };
  TrueDist true_dist() const { return {&inst_}; }

  template <typename Dist>
  double length_delta(const Move& mv, const Dist& D) const {
    const int m = size();
    switch (mv.type) {
      case MoveType::kRelocate: {
        const std::size_t x = at(mv.i);
        const double rem = D(at(mv.i - 1), at(mv.i + 1)) - D(at(mv.i - 1), x) - D(x, at(mv.i + 1));
        auto red = [&](int k) { return k < mv.i ? at(k) : at(k + 1); };
        const std::size_t a = red(mv.j - 1);
        const std::size_t b = red(mv.j);
        return rem + D(a, x) + D(x, b) - D(a, b);
      }
      case MoveType::kTwoOpt: {
        const std::size_t p = at(mv.i - 1);
        const std::size_t q = at(mv.j + 1);
        return D(p, at(mv.j)) + D(at(mv.i), q) - D(p, at(mv.i)) - D(at(mv.j), q);
      }
      case MoveType::kDrop: {
        const std::size_t x = at(mv.i);
        return D(at(mv.i - 1), at(mv.i + 1)) - D(at(mv.i - 1), x) - D(x, at(mv.i + 1));
      }
      case MoveType::kAdd: {
        const std::size_t u = inst_.node_index(mv.i);
        const std::size_t a = at(mv.j - 1);
        const std::size_t b = at(mv.j);
        return D(a, u) + D(u, b) - D(a, b);
      }
      case MoveType::kExchange: {
        const std::size_t x = at(mv.i);
        const std::size_t u = inst_.node_index(mv.j);
        const std::size_t p = at(mv.i - 1);
        const std::size_t q = at(mv.i + 1);
        return D(p, u) + D(u, q) - D(p, x) - D(x, q);
      }
      case MoveType::kStop: {
        const std::size_t last = at(m - 1);
        return D(last, inst_.stop_index(mv.i)) - D(last, at(m));
      }
    }
    return 0.0;
  }

  double penalty_delta(const Move& mv) const {
    switch (mv.type) {
      case MoveType::kDrop: return inst_.penalties[route_[mv.i]];
      case MoveType::kAdd: return -inst_.penalties[mv.i];
      case MoveType::kExchange: return inst_.penalties[route_[mv.i]] - inst_.penalties[mv.j];
      default: return 0.0;
    }
  }

  // Returns +inf for fuel-infeasible moves.
  double objective_delta(const Move& mv) const {
    const double dl = length_delta(mv, true_dist());
    if (!within_fuel(inst_, length_ + dl)) return kInf;
    return dl / inst_.vehicle.v_a + penalty_delta(mv);
  }


  // Route nodes touched by the move (for tabu bookkeeping).
  void touched(const Move& mv, std::vector<int>& nodes) const {
    nodes.clear();
    switch (mv.type) {
      case MoveType::kRelocate:
      case MoveType::kDrop: nodes.push_back(route_[mv.i]); break;
      case MoveType::kTwoOpt:
        nodes.push_back(route_[mv.i]);
        nodes.push_back(route_[mv.j]);
        break;
      case MoveType::kAdd: nodes.push_back(mv.i); break;
      case MoveType::kExchange:
        nodes.push_back(route_[mv.i]);
        nodes.push_back(mv.j);
        break;
      case MoveType::kStop: break;
    }
  }

  void apply(const Move& mv) {
    switch (mv.type) {
      case MoveType::kRelocate: {
        const int x = route_[mv.i];
        route_.erase(route_.begin() + mv.i);
        route_.insert(route_.begin() + mv.j, x);
        break;
      }
      case MoveType::kTwoOpt:
        std::reverse(route_.begin() + mv.i, route_.begin() + mv.j + 1);
        break;
      case MoveType::kDrop:
        in_route_[route_[mv.i]] = 0;
        route_.erase(route_.begin() + mv.i);
        break;
      case MoveType::kAdd:
        in_route_[mv.i] = 1;
        route_.insert(route_.begin() + mv.j, mv.i);
        break;
      case MoveType::kExchange:
        in_route_[route_[mv.i]] = 0;
        in_route_[mv.j] = 1;
        route_[mv.i] = mv.j;
        break;
      case MoveType::kStop: stop_ = mv.i; break;
    }
    refresh();
  }

  template <typename Fn>
  void for_each_move(Fn&& fn) const {
    const int m = size();
    const int n = static_cast<int>(inst_.nodes.size());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (j != i) fn(Move{MoveType::kRelocate, i, j});
      }
    }
    for (int i = 0; i < m; ++i) {
      for (int j = i + 1; j < m; ++j) fn(Move{MoveType::kTwoOpt, i, j});
    }
    for (int i = 0; i < m; ++i) fn(Move{MoveType::kDrop, i, 0});
    for (int u = 0; u < n; ++u) {
      if (in_route_[u]) continue;
      for (int j = 0; j <= m; ++j) fn(Move{MoveType::kAdd, u, j});
      for (int i = 0; i < m; ++i) fn(Move{MoveType::kExchange, i, u});
    }
    for (int s = 0; s < static_cast<int>(inst_.stops.size()); ++s) {
      if (s != stop_) fn(Move{MoveType::kStop, s, 0});
    }
  }

  // Uniformly random move of a random applicable type; false if none exists.
  bool random_move(Rng& rng, Move& mv) const {
    const int m = size();
    const int n = static_cast<int>(inst_.nodes.size());
    const int unrouted = n - m;
    const int stops = static_cast<int>(inst_.stops.size());
    std::vector<MoveType> types;
    if (m >= 2) types.push_back(MoveType::kRelocate);
    if (m >= 2) types.push_back(MoveType::kTwoOpt);
    if (m >= 1) types.push_back(MoveType::kDrop);
    if (unrouted >= 1) types.push_back(MoveType::kAdd);
    if (unrouted >= 1 && m >= 1) types.push_back(MoveType::kExchange);
    if (stops >= 2) types.push_back(MoveType::kStop);
    if (types.empty()) return false;
    auto pick_unrouted = [&] {
      int r = static_cast<int>(rng.index(static_cast<std::uint64_t>(unrouted)));
      for (int u = 0; u < n; ++u) {
        if (!in_route_[u] && r-- == 0) return u;
      }
      return -1;
    };
    mv.type = types[rng.index(types.size())];
    switch (mv.type) {
      case MoveType::kRelocate: {
        mv.i = static_cast<int>(rng.index(m));
        mv.j = static_cast<int>(rng.index(m - 1));
        if (mv.j >= mv.i) ++mv.j;
        break;
      }
      case MoveType::kTwoOpt: {
        int a = static_cast<int>(rng.index(m));
        int b = static_cast<int>(rng.index(m - 1));
        if (b >= a) ++b;
        mv.i = std::min(a, b);
        mv.j = std::max(a, b);
        break;
      }
      case MoveType::kDrop: mv.i = static_cast<int>(rng.index(m)); break;
      case MoveType::kAdd:
        mv.i = pick_unrouted();
        mv.j = static_cast<int>(rng.index(m + 1));
        break;
      case MoveType::kExchange:
        mv.i = static_cast<int>(rng.index(m));
        mv.j = pick_unrouted();
        break;
      case MoveType::kStop: {
        int s = static_cast<int>(rng.index(stops - 1));
        if (s >= stop_) ++s;
        mv.i = s;
        break;
      }
    }
    return true;
  }

 private:
  void refresh() {
    length_ = route_length(inst_, route_, stop_);
    objective_ = length_ / inst_.vehicle.v_a + dropped_penalty(inst_, route_);
  }

  const OevrptwInstance& inst_;
  std::vector<int> route_;
  int stop_ = 0;
  std::vector<char> in_route_;
  double length_ = 0.0;
  double objective_ = 0.0;
};

class Budget {
 public:
  explicit Budget(const PlannerConfig& cfg)
      : iterations_(cfg.iterations), limit_(cfg.time_limit), start_(std::chrono::steady_clock::now()) {}

  bool exhausted(int it) const {
    if (it >= iterations_) return true;
    if (limit_ <= 0.0 || (it & 63) != 0) return false;
    const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - start_;
    return spent.count() >= limit_;
  }

 private:
  int iterations_;
  double limit_;
  std::chrono::steady_clock::time_point start_;
};

OevrptwSolution tabu_search(const OevrptwInstance& inst, const PlannerConfig& cfg,
                            const OevrptwSolution& seed) {
  Search cur(inst);
  cur.load(seed);
  OevrptwSolution best = seed;
  std::vector<int> node_tabu(inst.nodes.size(), -1);
  std::vector<int> stop_tabu(inst.stops.size(), -1);
  std::vector<int> nodes;
  Rng rng(cfg.seed);
  // On small instances a fixed tenure leaves every node tabu at once; cap it
  // by the instance size and draw each entry's duration.
  const int cap = std::max(1, std::min(cfg.tabu_tenure, static_cast<int>(inst.nodes.size() + inst.stops.size()) / 2));
  auto tenure = [&] { return 1 + static_cast<int>(rng.index(static_cast<std::size_t>(cap))); };
  const int stall_limit = 50 + 10 * static_cast<int>(inst.nodes.size());
  int stall = 0;
  const Budget budget(cfg);

  for (int it = 0; !budget.exhausted(it); ++it) {
    if (stall >= stall_limit) {
      // Restart from the best solution after a short random walk.
      cur.load(best);
      Move mv;
      int steps = 2 + static_cast<int>(rng.index(3));
      for (int tries = 0; steps > 0 && tries < 100 && cur.random_move(rng, mv); ++tries) {
        if (cur.objective_delta(mv) == kInf) continue;
        cur.apply(mv);
        --steps;
      }
      std::fill(node_tabu.begin(), node_tabu.end(), -1);
      std::fill(stop_tabu.begin(), stop_tabu.end(), -1);
      stall = 0;
    }
    Move chosen;
    double chosen_delta = kInf;
    cur.for_each_move([&](const Move& mv) {
      const double delta = cur.objective_delta(mv);
      if (delta == kInf || delta >= chosen_delta) return;
      bool tabu = mv.type == MoveType::kStop && stop_tabu[mv.i] > it;
      cur.touched(mv, nodes);
      for (int x : nodes) tabu = tabu || node_tabu[x] > it;
      if (tabu && cur.objective() + delta >= best.objective - kImprove) return;
      chosen = mv;
      chosen_delta = delta;
    });
    if (chosen_delta == kInf) {
      // Everything admissible is tabu; release the lists and retry once.
      const bool any_tabu = std::any_of(node_tabu.begin(), node_tabu.end(), [it](int t) { return t > it; }) ||
                            std::any_of(stop_tabu.begin(), stop_tabu.end(), [it](int t) { return t > it; });
      if (!any_tabu) break;
      std::fill(node_tabu.begin(), node_tabu.end(), -1);
      std::fill(stop_tabu.begin(), stop_tabu.end(), -1);
      continue;
    }
    cur.touched(chosen, nodes);
    for (int x : nodes) node_tabu[x] = it + tenure();
    if (chosen.type == MoveType::kStop) stop_tabu[cur.stop()] = it + tenure();
    cur.apply(chosen);
    ++stall;
    if (cur.objective() < best.objective - kImprove) {
      best = cur.snapshot();
      stall = 0;
    }
  }
  return best;
}

OevrptwSolution simulated_annealing(const OevrptwInstance& inst, const PlannerConfig& cfg,
                                    const OevrptwSolution& seed) {
  Search cur(inst);
  cur.load(seed);
  OevrptwSolution best = seed;
  Rng rng(cfg.seed);
  double temp = cfg.sa_t0_fraction * seed.objective;
  if (temp <= 0.0) temp = 1.0;
  const Budget budget(cfg);
  Move mv;
  for (int it = 0; !budget.exhausted(it); ++it, temp *= cfg.sa_cooling) {
    if (!cur.random_move(rng, mv)) break;
    const double delta = cur.objective_delta(mv);
    if (delta == kInf) continue;
    const double u = rng.uniform();
    if (delta <= 0.0 || (temp > 0.0 && u < std::exp(-delta / temp))) {
      cur.apply(mv);
      if (cur.objective() < best.objective - kImprove) best = cur.snapshot();
    }
  }
  return best;
}

OevrptwSolution guided_local_search(const OevrptwInstance& inst, const PlannerConfig& cfg,
                                    const OevrptwSolution& seed) {
  Search cur(inst);
  cur.load(seed);
  OevrptwSolution best = seed;
  const std::size_t dim = inst.dim;
  std::vector<int> penalty(dim * dim, 0);
  double lambda = -1.0;
  auto aug = [&](std::size_t a, std::size_t b) {
    return inst.d(a, b) + std::max(lambda, 0.0) * penalty[a * dim + b];
  };
  const Budget budget(cfg);
  for (int it = 0; !budget.exhausted(it); ++it) {
    Move chosen;
    double chosen_delta = -kImprove;
    bool found = false;
    cur.for_each_move([&](const Move& mv) {
      const double true_dl = cur.length_delta(mv, cur.true_dist());
      if (!within_fuel(inst, cur.length() + true_dl)) return;
      const double delta = cur.length_delta(mv, aug) / inst.vehicle.v_a + cur.penalty_delta(mv);
      if (delta < chosen_delta) {
        chosen = mv;
        chosen_delta = delta;
        found = true;
      }
    });
    if (found) {
      cur.apply(chosen);
      if (cur.objective() < best.objective - kImprove) best = cur.snapshot();
      continue;
    }
    // Local optimum of the augmented objective: penalize its costliest edges.
    const int edges = cur.size() + 1;
    if (lambda < 0.0) lambda = cfg.gls_penalty_factor * cur.length() / edges;
    double top = -1.0;
    for (int k = -1; k < cur.size(); ++k) {
      const std::size_t a = cur.at(k);
      const std::size_t b = cur.at(k + 1);
      top = std::max(top, inst.d(a, b) / (1.0 + penalty[a * dim + b]));
    }
    for (int k = -1; k < cur.size(); ++k) {
      const std::size_t a = cur.at(k);
      const std::size_t b = cur.at(k + 1);
      if (inst.d(a, b) / (1.0 + penalty[a * dim + b]) >= top) {
        ++penalty[a * dim + b];
        if (a != b) ++penalty[b * dim + a];
      }
    }
  }
  return best;
}

}  // namespace

OevrptwSolution constructive_seed(const OevrptwInstance& inst) {
  require_reachable_stop(inst);
  const std::size_t n = inst.nodes.size();
  OevrptwSolution sol;
  double best_d = kInf;
  for (std::size_t s = 0; s < inst.stops.size(); ++s) {
    const double d = inst.d(0, inst.stop_index(static_cast<int>(s)));
    if (d < best_d) {
      best_d = d;
      sol.stop = static_cast<int>(s);
    }
  }
  evaluate(inst, sol);

  std::vector<char> used(n, 0);
  const double v = inst.vehicle.v_a;
  for (;;) {
    const int m = static_cast<int>(sol.route.size());
    auto at = [&](int k) -> std::size_t {
      if (k < 0) return 0;
      if (k >= m) return inst.stop_index(sol.stop);
      return inst.node_index(sol.route[k]);
    };
    double best_ratio = -1.0;
    int best_u = -1, best_pos = -1, best_stop = -1;
    for (std::size_t u = 0; u < n; ++u) {
      if (used[u] || inst.penalties[u] <= 0.0) continue;
      const std::size_t ui = inst.node_index(static_cast<int>(u));
      for (int j = 0; j <= m; ++j) {
        double dl;
        int stop = sol.stop;
        if (j < m) {
          dl = inst.d(at(j - 1), ui) + inst.d(ui, at(j)) - inst.d(at(j - 1), at(j));
        } else {
          double nearest = kInf;
          for (std::size_t s = 0; s < inst.stops.size(); ++s) {
            const double d = inst.d(ui, inst.stop_index(static_cast<int>(s)));
            if (d < nearest) {
              nearest = d;
              stop = static_cast<int>(s);
            }
          }
          dl = inst.d(at(m - 1), ui) + nearest - inst.d(at(m - 1), at(m));
        }
        if (!within_fuel(inst, sol.length + dl)) continue;
        const double added = dl / v;
        if (inst.penalties[u] <= added) continue;
        const double ratio = inst.penalties[u] / std::max(added, 1e-12);
        if (ratio > best_ratio) {
          best_ratio = ratio;
          best_u = static_cast<int>(u);
          best_pos = j;
          best_stop = stop;
        }
      }
    }
    if (best_u < 0) break;
    sol.route.insert(sol.route.begin() + best_pos, best_u);
    sol.stop = best_stop;
    used[best_u] = 1;
    evaluate(inst, sol);
  }
  return sol;
}

OevrptwSolution solve_oevrptw(const OevrptwInstance& inst, const PlannerConfig& cfg) {
  validate(cfg);
  const OevrptwSolution seed = constructive_seed(inst);
  switch (cfg.metaheuristic) {
    case Metaheuristic::kTabu: return tabu_search(inst, cfg, seed);
    case Metaheuristic::kAnnealing: return simulated_annealing(inst, cfg, seed);
    case Metaheuristic::kGuidedLocalSearch: return guided_local_search(inst, cfg, seed);
  }
  return seed;
}

OevrptwSolution brute_force_oevrptw(const OevrptwInstance& inst) {
  const int n = static_cast<int>(inst.nodes.size());
  if (n > kBruteForceMaxNodes) {
    throw Error(ErrorCode::kTooLarge, std::to_string(n) + " nodes exceed the exhaustive limit of " +
                                          std::to_string(kBruteForceMaxNodes));
  }
  require_reachable_stop(inst);
  const int stops = static_cast<int>(inst.stops.size());
  std::vector<double> nearest_stop(n, kInf);
  for (int u = 0; u < n; ++u) {
    for (int s = 0; s < stops; ++s) {
      nearest_stop[u] = std::min(nearest_stop[u], inst.d(inst.node_index(u), inst.stop_index(s)));
    }
  }
  double total_penalty = 0.0;
  for (double p : inst.penalties) total_penalty += p;

  OevrptwSolution best;
  best.objective = kInf;
  std::vector<int> seq;
  std::vector<char> used(n, 0);
  const double v = inst.vehicle.v_a;

  auto dfs = [&](auto&& self, std::size_t last, double len, double penalty) -> void {
    for (int s = 0; s < stops; ++s) {
      const double total = len + inst.d(last, inst.stop_index(s));
      if (!within_fuel(inst, total)) continue;
      const double obj = total / v + penalty;
      if (obj < best.objective) best = {seq, s, total, obj};
    }
    for (int u = 0; u < n; ++u) {
      if (used[u]) continue;
      const double nl = len + inst.d(last, inst.node_index(u));
      if (!within_fuel(inst, nl + nearest_stop[u])) continue;
      used[u] = 1;
      seq.push_back(u);
      self(self, inst.node_index(u), nl, penalty - inst.penalties[u]);
      seq.pop_back();
      used[u] = 0;
    }
  };
  dfs(dfs, 0, 0.0, total_penalty);
  evaluate(inst, best);
  return best;
}

OevrptwInstance sample_oevrptw_instance(Rng& rng, int nodes, int stops) {
  OevrptwInstance inst;
  inst.start = {0.0, 0.0};
  inst.fuel = inst.vehicle.F_a * rng.uniform(0.3, 1.0);
  const double reach = inst.fuel / energy_per_meter(inst.vehicle);
  for (int i = 0; i < nodes; ++i) {
    inst.nodes.push_back({rng.uniform(-3000.0, 3000.0), rng.uniform(-3000.0, 3000.0)});
    const double age = rng.uniform(0.0, 1500.0);
    inst.penalties.push_back(1e-3 * age * age);
  }
  for (int s = 0; s < stops; ++s) {
    // The first stop is kept inside the reachable disc.
    const double r = s == 0 ? rng.uniform(0.0, 0.9 * std::min(reach, 3000.0)) : rng.uniform(0.0, 4000.0);
    const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const Point2D p{r * std::cos(theta), r * std::sin(theta)};
    inst.stops.push_back({p, r / 4.5, r, -1});
  }
  inst.finalize();
  return inst;
}

double optimality_gap(double obj, double best) {
  if (best == 0.0) throw Error(ErrorCode::kDivisionByZero, "optimality gap against a zero best objective");
  return (obj - best) / best * 100.0;
}

}  // namespace persurv
