#include "tndp/bco.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <stdexcept>

#include "tndp/parallel.hpp"
#include "tndp/trainer.hpp"

namespace tndp {

std::string bee_mix_name(BeeMix mix) {
  switch (mix) {
    case BeeMix::kClassic: return "bco";
    case BeeMix::kNeural: return "nbco";
    case BeeMix::kNeuralOnly: return "no2nb";
  }
  return "?";
}

BeeMix parse_bee_mix(const std::string& name) {
  for (BeeMix m : {BeeMix::kClassic, BeeMix::kNeural, BeeMix::kNeuralOnly}) {
    if (bee_mix_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown bee mix '" + name + "'");
}

void BcoConfig::validate() const {
  if (bees < 1 || modifications < 1 || passes < 1 || iterations < 0) {
    throw std::invalid_argument("need B, N_C, N_P >= 1 and I >= 0");
  }
  if (num_routes < 1 || min_stops < 1 || max_stops < min_stops) {
    throw std::invalid_argument("need S >= 1 and 1 <= MIN <= MAX");
  }
  if (workers < 1) throw std::invalid_argument("need at least one worker");
}

std::vector<BeeType> bee_types(BeeMix mix, int bees) {
  if (mix == BeeMix::kNeuralOnly) return std::vector<BeeType>(static_cast<std::size_t>(bees), BeeType::kNeural);
  const BeeType first = mix == BeeMix::kClassic ? BeeType::kType1 : BeeType::kNeural;
  std::vector<BeeType> out(static_cast<std::size_t>(bees), BeeType::kType2);
  std::fill_n(out.begin(), bees / 2, first);
  return out;
}

double route_direct_demand(const Route& route, const CityGraph& city) {
  double d = 0.0;
  for (NodeId u : route) {
    for (NodeId v : route) {
      if (u != v) d += city.demand()(u, v);
    }
  }
  return d;
}

std::vector<double> route_selection_probabilities(const RouteNetwork& network,
                                                  const CityGraph& city) {
  if (network.empty()) throw std::invalid_argument("empty network");
  std::vector<double> d;
  d.reserve(network.size());
  for (const Route& r : network) d.push_back(route_direct_demand(r, city));
  const double d_max = *std::max_element(d.begin(), d.end());
  double sum = 0.0;
  for (double x : d) sum += x;
  // Keeps the top route selectable and the total positive when all d_r = 0.
  const double eps = std::max(0.01 * sum / static_cast<double>(network.size()), 1e-12);
  std::vector<double> p;
  double z = 0.0;
  for (double x : d) {
    p.push_back(d_max - x + eps);
    z += p.back();
  }
  for (double& x : p) x /= z;
  return p;
}

std::size_t select_route(const RouteNetwork& network, const CityGraph& city, std::mt19937_64& rng) {
  const auto p = route_selection_probabilities(network, city);
  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  return pick(rng);
}

Route replace_terminal(const Route& route, bool replace_back, NodeId new_terminal,
                       const ShortestPathData& sp) {
  if (route.empty()) throw std::invalid_argument("empty route");
  return replace_back ? sp.path(route.front(), new_terminal) : sp.path(new_terminal, route.back());
}

RouteNetwork type1_modify(const RouteNetwork& network, std::size_t index, const CityGraph& city,
                          const ShortestPathData& sp, std::mt19937_64& rng) {
  RouteNetwork out = network;
  Route& r = out.at(index);
  const bool replace_back = std::bernoulli_distribution(0.5)(rng);
  const NodeId kept = replace_back ? r.front() : r.back();
  // Uniform over the n - 1 nodes other than the kept terminal.
  NodeId fresh = std::uniform_int_distribution<NodeId>(0, city.size() - 2)(rng);
  if (fresh >= kept) ++fresh;
  r = replace_terminal(r, replace_back, fresh, sp);
  return out;
}

RouteNetwork type2_modify(const RouteNetwork& network, std::size_t index, const CityGraph& city,
                          std::mt19937_64& rng) {
  RouteNetwork out = network;
  Route& r = out.at(index);
  const bool at_back = std::bernoulli_distribution(0.5)(rng);
  if (std::bernoulli_distribution(0.2)(rng)) {
    if (r.size() > 1) {
      if (at_back) {
        r.pop_back();
      } else {
        r.erase(r.begin());
      }
    }
    return out;
  }
  const NodeId terminal = at_back ? r.back() : r.front();
  std::vector<NodeId> options;
  for (NodeId v : city.neighbors(terminal)) {
    if (std::find(r.begin(), r.end(), v) == r.end()) options.push_back(v);
  }
  if (options.empty()) return out;
  const NodeId v = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  if (at_back) {
    r.push_back(v);
  } else {
    r.insert(r.begin(), v);
  }
  return out;
}

RouteNetwork neural_modify(const RouteNetwork& network, std::size_t index, const Environment& env,
                           Policy& policy, std::mt19937_64& rng) {
  if (index >= network.size()) throw std::out_of_range("route index");
  if (static_cast<int>(network.size()) != env.num_routes()) {
    throw std::invalid_argument("network size differs from the environment's S");
  }
  RouteNetwork others;
  others.reserve(network.size() - 1);
  for (std::size_t k = 0; k < network.size(); ++k) {
    if (k != index) others.push_back(network[k]);
  }
  RolloutResult planned = rollout(policy, env, others, rng);
  RouteNetwork out = network;
  out[index] = std::move(planned.network.back());
  return out;
}

std::vector<double> follower_probabilities(const std::vector<double>& costs) {
  if (costs.empty()) return {};
  const auto [lo, hi] = std::minmax_element(costs.begin(), costs.end());
  std::vector<double> q(costs.size(), 0.0);
  if (*hi > *lo) {
    for (std::size_t b = 0; b < costs.size(); ++b) q[b] = (costs[b] - *lo) / (*hi - *lo);
  }
  return q;
}

void recruit(std::vector<BeeState>& bees, std::mt19937_64& rng) {
  if (bees.empty()) return;
  std::vector<double> costs;
  for (const auto& b : bees) costs.push_back(b.cost);
  const auto q = follower_probabilities(costs);
  std::vector<std::size_t> recruiters;
  for (std::size_t b = 0; b < bees.size(); ++b) {
    bees[b].recruiter = !std::bernoulli_distribution(q[b])(rng);
    if (bees[b].recruiter) recruiters.push_back(b);
  }
  if (recruiters.empty()) {
    const auto best = static_cast<std::size_t>(
        std::min_element(costs.begin(), costs.end()) - costs.begin());
    bees[best].recruiter = true;
    recruiters.push_back(best);
  }
  double c_max = -std::numeric_limits<double>::infinity();
  double mean = 0.0;
  for (std::size_t r : recruiters) {
    c_max = std::max(c_max, bees[r].cost);
    mean += bees[r].cost;
  }
  mean /= static_cast<double>(recruiters.size());
  const double eps = std::max(0.01 * std::abs(mean), 1e-12);
  std::vector<double> weights;
  for (std::size_t r : recruiters) weights.push_back(c_max - bees[r].cost + eps);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  for (auto& b : bees) {
    if (b.recruiter) continue;
    const BeeState& leader = bees[recruiters[pick(rng)]];
    b.network = leader.network;
    b.cost = leader.cost;
  }
}

RouteNetwork initial_network(const CityGraph& city, const ShortestPathData& sp, int num_routes,
                             int min_stops, int max_stops, std::mt19937_64& rng) {
  const int n = city.size();
  std::vector<const Route*> paths;
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto len = static_cast<int>(sp.path(i, j).size());
      if (len >= min_stops && len <= max_stops) paths.push_back(&sp.path(i, j));
    }
  }
  if (paths.empty()) throw std::invalid_argument("no shortest path fits the stop limits");
  Eigen::MatrixXd uncovered = city.demand();
  RouteNetwork out;
  std::vector<std::size_t> ties;
  for (int s = 0; s < num_routes; ++s) {
    double best = -1.0;
    ties.clear();
    for (std::size_t k = 0; k < paths.size(); ++k) {
      double gain = 0.0;
      for (NodeId u : *paths[k]) {
        for (NodeId v : *paths[k]) gain += uncovered(u, v);
      }
      if (gain > best) {
        best = gain;
        ties.assign(1, k);
      } else if (gain == best) {
        ties.push_back(k);
      }
    }
    const Route& chosen =
        *paths[ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)]];
    for (NodeId u : chosen) {
      for (NodeId v : chosen) uncovered(u, v) = 0.0;
    }
    out.push_back(chosen);
  }
  return out;
}

BcoResult run_bco(const PreparedCity& pc, const BcoConfig& config, const RouteNetwork& initial,
                  const PolicyParams<double>* policy, const BcoProgress& progress) {
  config.validate();
  if (static_cast<int>(initial.size()) != config.num_routes) {
    throw std::invalid_argument("initial network must have exactly S routes");
  }
  const auto types = bee_types(config.mix, config.bees);
  const bool neural = std::find(types.begin(), types.end(), BeeType::kNeural) != types.end();
  if (neural && policy == nullptr) throw std::invalid_argument("neural bees need a policy");

  const CostModel cost(pc.city, pc.sp, config.weights, config.num_routes, config.min_stops,
                       config.max_stops);
  const Environment env(pc.city, pc.sp, cost);

  BcoResult result;
  result.best = initial;
  result.best_cost = cost.evaluate(initial);
  result.trace.push_back(result.best_cost.total);

  std::vector<BeeState> bees(static_cast<std::size_t>(config.bees));
  std::vector<std::mt19937_64> streams;
  std::vector<std::unique_ptr<NeuralPolicy>> policies;
  for (std::size_t b = 0; b < bees.size(); ++b) {
    bees[b] = {initial, result.best_cost.total, types[b], true};
    streams.push_back(sample_stream(config.seed, 1, b));
    policies.push_back(types[b] == BeeType::kNeural
                           ? std::make_unique<NeuralPolicy>(
                                 *policy, config.greedy_neural ? NeuralPolicy::Mode::kGreedy
                                                               : NeuralPolicy::Mode::kSample)
                           : nullptr);
  }
  std::mt19937_64 rng = sample_stream(config.seed, 0, 0);
  // Best network each bee saw during the current pass.
  std::vector<std::pair<RouteNetwork, CostBreakdown>> pass_best(bees.size());
  std::vector<long long> evaluations(bees.size(), 0);

  for (int it = 1; it <= config.iterations; ++it) {
    for (int pass = 0; pass < config.passes; ++pass) {
      parallel_for(bees.size(), config.workers, [&](std::size_t b) {
        BeeState& bee = bees[b];
        auto& brng = streams[b];
        pass_best[b].second.total = std::numeric_limits<double>::infinity();
        for (int m = 0; m < config.modifications; ++m) {
          const std::size_t idx = select_route(bee.network, pc.city, brng);
          RouteNetwork candidate;
          switch (bee.type) {
            case BeeType::kType1:
              candidate = type1_modify(bee.network, idx, pc.city, pc.sp, brng);
              break;
            case BeeType::kType2:
              candidate = type2_modify(bee.network, idx, pc.city, brng);
              break;
            case BeeType::kNeural:
              candidate = neural_modify(bee.network, idx, env, *policies[b], brng);
              break;
          }
          const CostBreakdown c = cost.evaluate(candidate);
          ++evaluations[b];
          if (c.total < pass_best[b].second.total) pass_best[b] = {candidate, c};
          if (c.total <= bee.cost) {
            bee.network = std::move(candidate);
            bee.cost = c.total;
          }
        }
      });
      for (const auto& [network, c] : pass_best) {
        if (c.total < result.best_cost.total) {
          result.best = network;
          result.best_cost = c;
        }
      }
      recruit(bees, rng);
    }
    result.trace.push_back(result.best_cost.total);
    if (progress) progress(it, result.best_cost.total);
  }
  for (long long e : evaluations) result.evaluations += e;
  return result;
}

}  // namespace tndp
