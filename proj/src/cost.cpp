#include "tndp/cost.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace tndp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Vertices 0..n-1 stand for nodes; every (route, stop position) incidence
// gets its own vertex after that. Riding moves between neighbouring
// incidences of one route, alighting is free, boarding costs nothing at the
// origin and the transfer penalty anywhere else.
struct TransitGraph {
  int num_nodes = 0;
  std::vector<NodeId> stop_of;             // incidence -> node
  std::vector<int> prev, next;             // neighbouring incidence or -1
  std::vector<Seconds> prev_time, next_time;
  std::vector<std::vector<int>> at_node;   // node -> incidences

  TransitGraph(const RouteNetwork& routes, const CityGraph& city) : num_nodes(city.size()) {
    at_node.assign(static_cast<std::size_t>(num_nodes), {});
    for (const Route& route : routes) {
      const int base = static_cast<int>(stop_of.size());
      for (std::size_t k = 0; k < route.size(); ++k) {
        const int id = base + static_cast<int>(k);
        stop_of.push_back(route[k]);
        prev.push_back(k > 0 ? id - 1 : -1);
        next.push_back(k + 1 < route.size() ? id + 1 : -1);
        prev_time.push_back(k > 0 ? city.street_times()(route[k - 1], route[k]) : kInf);
        next_time.push_back(k + 1 < route.size() ? city.street_times()(route[k], route[k + 1])
                                                 : kInf);
        at_node[static_cast<std::size_t>(route[k])].push_back(id);
      }
    }
  }
};

}  // namespace

Eigen::MatrixXd transit_trip_times(const RouteNetwork& routes, const CityGraph& city,
                                   Seconds transfer_penalty) {
  const int n = city.size();
  const TransitGraph g(routes, city);
  const std::size_t num_incidences = g.stop_of.size();
  const std::size_t num_vertices = static_cast<std::size_t>(n) + num_incidences;

  Eigen::MatrixXd result = Eigen::MatrixXd::Constant(n, n, kInf);
  std::vector<Seconds> dist(num_vertices);
  using Item = std::pair<Seconds, int>;

  for (NodeId source = 0; source < n; ++source) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[static_cast<std::size_t>(source)] = 0.0;
    heap.emplace(0.0, source);
    auto relax = [&](int v, Seconds d) {
      if (d < dist[static_cast<std::size_t>(v)]) {
        dist[static_cast<std::size_t>(v)] = d;
        heap.emplace(d, v);
      }
    };
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[static_cast<std::size_t>(u)]) continue;
      if (u < n) {
        const Seconds board = u == source ? 0.0 : transfer_penalty;
        for (int inc : g.at_node[static_cast<std::size_t>(u)]) relax(n + inc, d + board);
      } else {
        const auto inc = static_cast<std::size_t>(u - n);
        relax(g.stop_of[inc], d);
        if (g.prev[inc] >= 0) relax(n + g.prev[inc], d + g.prev_time[inc]);
        if (g.next[inc] >= 0) relax(n + g.next[inc], d + g.next_time[inc]);
      }
    }
    for (NodeId j = 0; j < n; ++j) result(source, j) = dist[static_cast<std::size_t>(j)];
  }
  return result;
}

PassengerCost passenger_cost(const Eigen::MatrixXd& trip_times, const Eigen::MatrixXd& demand) {
  const double total_demand = demand.sum();
  if (!(total_demand > 0.0)) throw std::invalid_argument("total demand is zero");
  double served_demand = 0.0;
  double weighted_time = 0.0;
  for (Eigen::Index i = 0; i < demand.rows(); ++i) {
    for (Eigen::Index j = 0; j < demand.cols(); ++j) {
      const double d = demand(i, j);
      if (d <= 0.0 || !std::isfinite(trip_times(i, j))) continue;
      served_demand += d;
      weighted_time += d * trip_times(i, j);
    }
  }
  PassengerCost cost;
  cost.unserved_fraction = (total_demand - served_demand) / total_demand;
  cost.mean_trip_time = served_demand > 0.0 ? weighted_time / served_demand : 0.0;
  return cost;
}

Seconds operator_cost(const RouteNetwork& routes, const CityGraph& city) {
  Seconds total = 0.0;
  for (const Route& r : routes) total += route_drive_time(r, city);
  return total;
}

double constraint_cost(const RouteNetwork& routes, const Eigen::MatrixXd& trip_times,
                       int num_routes, int min_stops, int max_stops) {
  const auto n = trip_times.rows();
  double unconnected = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && !std::isfinite(trip_times(i, j))) unconnected += 1.0;
    }
  }
  const double pair_fraction = n > 1 ? unconnected / static_cast<double>(n * (n - 1)) : 0.0;
  int violation = 0;
  for (const Route& r : routes) {
    const int len = static_cast<int>(r.size());
    violation += std::max(0, len - max_stops) + std::max(0, min_stops - len);
  }
  return pair_fraction +
         static_cast<double>(violation) / (static_cast<double>(num_routes) * max_stops);
}

double constraint_cost(const RouteNetwork& routes, const CityGraph& city, int num_routes,
                       int min_stops, int max_stops) {
  return constraint_cost(routes, transit_trip_times(routes, city, 0.0), num_routes, min_stops,
                         max_stops);
}

CostModel::CostModel(const CityGraph& city, const ShortestPathData& sp, CostWeights weights,
                     int num_routes, int min_stops, int max_stops)
    : city_(&city),
      weights_(weights),
      num_routes_(num_routes),
      min_stops_(min_stops),
      max_stops_(max_stops) {
  if (weights.alpha < 0.0 || weights.alpha > 1.0) {
    throw std::invalid_argument("alpha must lie in [0, 1]");
  }
  if (num_routes < 1 || min_stops < 1 || max_stops < min_stops) {
    throw std::invalid_argument("invalid route count or stop limits");
  }
  const double max_time = sp.max_time();
  if (!(max_time > 0.0)) throw std::invalid_argument("city has no positive shortest path");
  passenger_scale_ = 1.0 / max_time;
  operator_scale_ = 1.0 / (3.0 * num_routes * max_time);
}

CostBreakdown CostModel::evaluate(const RouteNetwork& routes) const {
  const Eigen::MatrixXd trips = transit_trip_times(routes, *city_, weights_.transfer_penalty);
  const PassengerCost pc = passenger_cost(trips, city_->demand());
  CostBreakdown out;
  out.passenger_cost = pc.mean_trip_time;
  out.unserved_fraction = pc.unserved_fraction;
  out.operator_cost = operator_cost(routes, *city_);
  out.constraint_cost = constraint_cost(routes, trips, num_routes_, min_stops_, max_stops_);
  const double a = weights_.alpha;
  out.total = a * passenger_scale_ * out.passenger_cost +
              (1.0 - a) * operator_scale_ * out.operator_cost +
              weights_.beta * out.constraint_cost;
  return out;
}

CostBreakdown total_cost(const RouteNetwork& routes, const CityGraph& city,
                         const ShortestPathData& sp, const CostWeights& weights,
                         int num_routes, int min_stops, int max_stops) {
  return CostModel(city, sp, weights, num_routes, min_stops, max_stops).evaluate(routes);
}

}  // namespace tndp
