#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tndp/city.hpp"
#include "tndp/cost.hpp"
#include "tndp/mdp.hpp"
#include "tndp/policy.hpp"

namespace tndp {

enum class BeeType { kType1, kType2, kNeural };

/// Which bee types make up the swarm: type-1 and type-2 halves (classical
/// BCO), neural and type-2 halves (NBCO), or neural bees only.
enum class BeeMix { kClassic, kNeural, kNeuralOnly };

std::string bee_mix_name(BeeMix mix);
BeeMix parse_bee_mix(const std::string& name);

struct BcoConfig {
  int bees = 10;
  int modifications = 2;  // per bee per pass
  int passes = 5;         // per iteration
  int iterations = 400;
  BeeMix mix = BeeMix::kClassic;
  CostWeights weights;
  int num_routes = 10;
  int min_stops = 2;
  int max_stops = 15;
  std::uint64_t seed = 0;
  /// Bees within a pass may explore on this many threads. Results do not
  /// depend on it.
  int workers = 1;
  /// Neural bees take the most likely action instead of sampling.
  bool greedy_neural = false;

  void validate() const;
  long long budget() const {
    return static_cast<long long>(bees) * modifications * passes * iterations;
  }
};

/// Swarm composition for a mix: the first half (rounded down) gets the
/// non-type-2 kind.
std::vector<BeeType> bee_types(BeeMix mix, int bees);

struct BeeState {
  RouteNetwork network;
  double cost = 0.0;
  BeeType type = BeeType::kType2;
  bool recruiter = true;
};

/// Demand between ordered pairs of stops that both lie on the route.
double route_direct_demand(const Route& route, const CityGraph& city);

/// P(route) proportional to d_max - d_r + eps with eps = 1% of the mean
/// direct demand per route, so routes serving more demand are picked less.
std::vector<double> route_selection_probabilities(const RouteNetwork& network,
                                                  const CityGraph& city);
std::size_t select_route(const RouteNetwork& network, const CityGraph& city, std::mt19937_64& rng);

/// Shortest path between the kept terminal and `new_terminal`, oriented so
/// the kept terminal stays where it was.
Route replace_terminal(const Route& route, bool replace_back, NodeId new_terminal,
                       const ShortestPathData& sp);
RouteNetwork type1_modify(const RouteNetwork& network, std::size_t index, const CityGraph& city,
                          const ShortestPathData& sp, std::mt19937_64& rng);

/// With probability 0.2 drops a terminal, otherwise appends a street
/// neighbour of it that is not yet on the route. Either is a no-op when it
/// would empty the route or no such neighbour exists.
RouteNetwork type2_modify(const RouteNetwork& network, std::size_t index, const CityGraph& city,
                          std::mt19937_64& rng);

/// Replaces route `index` by one rollout of the policy that plans a single
/// route given the others. `env` fixes the city, alpha and S.
RouteNetwork neural_modify(const RouteNetwork& network, std::size_t index, const Environment& env,
                           Policy& policy, std::mt19937_64& rng);

/// P(follower) per bee: (C_b - C_min) / (C_max - C_min), zero if all equal.
std::vector<double> follower_probabilities(const std::vector<double>& costs);
/// Designates followers and makes each copy a recruiter chosen with weight
/// C_max' - C_r + eps' over recruiters (eps' = 1% of their mean cost).
void recruit(std::vector<BeeState>& bees, std::mt19937_64& rng);

/// S shortest-path routes with [MIN, MAX] stops, each chosen greedily to
/// cover the most demand not yet covered, ties broken at random. Throws
/// std::invalid_argument if no shortest path fits the stop limits.
RouteNetwork initial_network(const CityGraph& city, const ShortestPathData& sp, int num_routes,
                             int min_stops, int max_stops, std::mt19937_64& rng);

struct BcoResult {
  RouteNetwork best;
  CostBreakdown best_cost;
  /// Incumbent cost before the first iteration and after each one.
  std::vector<double> trace;
  long long evaluations = 0;
};

/// Called after each iteration with (iteration, incumbent cost).
using BcoProgress = std::function<void(int, double)>;

/// Bee colony search from `initial`. `policy` is required iff the mix has
/// neural bees.
BcoResult run_bco(const PreparedCity& city, const BcoConfig& config, const RouteNetwork& initial,
                  const PolicyParams<double>* policy = nullptr,
                  const BcoProgress& progress = {});

}  // namespace tndp
