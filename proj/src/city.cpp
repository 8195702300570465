#include "tndp/city.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_set>

namespace tndp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<Seconds> dijkstra(const CityGraph& city, NodeId source) {
  const int n = city.size();
  std::vector<Seconds> dist(static_cast<std::size_t>(n), kInf);
  using Item = std::pair<Seconds, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[static_cast<std::size_t>(source)] = 0.0;
  heap.emplace(0.0, source);
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[static_cast<std::size_t>(u)]) continue;
    for (NodeId v : city.neighbors(u)) {
      const Seconds nd = d + city.street_times()(u, v);
      if (nd < dist[static_cast<std::size_t>(v)]) {
        dist[static_cast<std::size_t>(v)] = nd;
        heap.emplace(nd, v);
      }
    }
  }
  return dist;
}

}  // namespace

CityGraph::CityGraph(std::vector<Point> positions, std::vector<StreetEdge> edges,
                     Eigen::MatrixXd demand)
    : positions_(std::move(positions)), edges_(std::move(edges)), demand_(std::move(demand)) {
  const int n = size();
  if (n < 1) throw InvalidCity("city must have at least one node");
  if (demand_.rows() != n || demand_.cols() != n) {
    std::ostringstream msg;
    msg << "demand matrix is " << demand_.rows() << "x" << demand_.cols() << ", expected " << n
        << "x" << n;
    throw InvalidCity(msg.str());
  }
  street_times_ = Eigen::MatrixXd::Constant(n, n, kInf);
  street_times_.diagonal().setZero();
  for (const auto& e : edges_) {
    if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n) {
      throw InvalidCity("street edge references unknown node");
    }
    if (e.from == e.to) throw InvalidCity("street edge is a self loop");
    if (!(e.time > 0.0) || !std::isfinite(e.time)) {
      throw InvalidCity("street edge times must be positive and finite");
    }
    if (std::isfinite(street_times_(e.from, e.to))) {
      throw InvalidCity("duplicate street edge");
    }
    street_times_(e.from, e.to) = e.time;
  }
  for (const auto& e : edges_) {
    if (street_times_(e.to, e.from) != e.time) {
      std::ostringstream msg;
      msg << "street edge (" << e.from << ", " << e.to << ") has no symmetric counterpart";
      throw InvalidCity(msg.str());
    }
  }
  for (int i = 0; i < n; ++i) {
    if (demand_(i, i) != 0.0) throw InvalidCity("demand diagonal must be zero");
    for (int j = 0; j < n; ++j) {
      if (!(demand_(i, j) >= 0.0) || !std::isfinite(demand_(i, j))) {
        throw InvalidCity("demand must be finite and non-negative");
      }
      if (demand_(i, j) != demand_(j, i)) throw InvalidCity("demand matrix is not symmetric");
    }
  }
  std::sort(edges_.begin(), edges_.end(), [](const StreetEdge& a, const StreetEdge& b) {
    return std::tie(a.from, a.to) < std::tie(b.from, b.to);
  });
  adjacency_.assign(static_cast<std::size_t>(n), {});
  for (const auto& e : edges_) adjacency_[static_cast<std::size_t>(e.from)].push_back(e.to);
}

bool CityGraph::has_edge(NodeId i, NodeId j) const {
  return i != j && std::isfinite(street_times_(i, j));
}

std::optional<Seconds> CityGraph::edge_time(NodeId i, NodeId j) const {
  if (!has_edge(i, j)) return std::nullopt;
  return street_times_(i, j);
}

bool CityGraph::is_strongly_connected() const {
  // Edges are symmetric, so one traversal suffices.
  const int n = size();
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<NodeId> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    for (NodeId v : neighbors(u)) {
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == n;
}

ShortestPathData::ShortestPathData(Eigen::MatrixXd times, std::vector<Route> paths)
    : times_(std::move(times)), paths_(std::move(paths)) {}

ShortestPathData all_pairs_shortest_paths(const CityGraph& city) {
  const int n = city.size();
  Eigen::MatrixXd times(n, n);
  for (NodeId s = 0; s < n; ++s) {
    const auto dist = dijkstra(city, s);
    for (NodeId t = 0; t < n; ++t) {
      if (!std::isfinite(dist[static_cast<std::size_t>(t)])) {
        std::ostringstream msg;
        msg << "street graph is not strongly connected: node " << t << " unreachable from "
            << s;
        throw InvalidCity(msg.str());
      }
      times(s, t) = dist[static_cast<std::size_t>(t)];
    }
  }

  // Walk forward from the source, always taking the smallest neighbour that
  // still lies on a shortest path; this yields the lexicographically
  // smallest shortest path.
  std::vector<Route> paths(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (NodeId s = 0; s < n; ++s) {
    for (NodeId t = 0; t < n; ++t) {
      if (s == t) continue;
      Route& path = paths[static_cast<std::size_t>(s) * static_cast<std::size_t>(n) +
                          static_cast<std::size_t>(t)];
      path.push_back(s);
      NodeId u = s;
      while (u != t) {
        NodeId next = -1;
        for (NodeId v : city.neighbors(u)) {
          if (std::abs(city.street_times()(u, v) + times(v, t) - times(u, t)) <=
              kTimeTolerance) {
            next = v;
            break;
          }
        }
        if (next < 0) throw std::logic_error("shortest path reconstruction failed");
        path.push_back(next);
        u = next;
      }
    }
  }
  return ShortestPathData(std::move(times), std::move(paths));
}

Seconds route_drive_time(const Route& route, const CityGraph& city) {
  Seconds one_way = 0.0;
  for (std::size_t k = 1; k < route.size(); ++k) {
    const auto t = city.edge_time(route[k - 1], route[k]);
    if (!t) {
      std::ostringstream msg;
      msg << "route hop (" << route[k - 1] << ", " << route[k] << ") is not a street edge";
      throw std::invalid_argument(msg.str());
    }
    one_way += *t;
  }
  return 2.0 * one_way;
}

bool has_repeated_stop(const Route& route) {
  std::unordered_set<NodeId> seen;
  for (NodeId v : route) {
    if (!seen.insert(v).second) return true;
  }
  return false;
}

NetworkReport validate_network(const RouteNetwork& routes, const CityGraph& city,
                               int num_routes, int min_stops, int max_stops) {
  NetworkReport report;
  const int n = city.size();
  report.route_count = routes.size();
  report.count_ok = static_cast<int>(routes.size()) == num_routes;

  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  std::vector<char> covered(static_cast<std::size_t>(n), 0);

  for (std::size_t r = 0; r < routes.size(); ++r) {
    const Route& route = routes[r];
    const int len = static_cast<int>(route.size());
    const int violation = std::max(0, len - max_stops) + std::max(0, min_stops - len);
    if (violation > 0) {
      report.length_violation += violation;
      report.routes_out_of_bounds.push_back(r);
    }
    if (has_repeated_stop(route)) report.routes_with_repeats.push_back(r);
    bool on_street = true;
    for (std::size_t k = 0; k < route.size(); ++k) {
      if (route[k] < 0 || route[k] >= n) {
        on_street = false;
        break;
      }
      if (k > 0 && !city.has_edge(route[k - 1], route[k])) on_street = false;
    }
    if (!on_street) {
      report.routes_off_street.push_back(r);
      continue;
    }
    for (std::size_t k = 0; k < route.size(); ++k) {
      covered[static_cast<std::size_t>(route[k])] = 1;
      if (k > 0) parent[static_cast<std::size_t>(find(route[k]))] = find(route[0]);
    }
  }

  report.connected = n == 1 || (std::all_of(covered.begin(), covered.end(),
                                            [](char c) { return c != 0; }) &&
                                [&] {
                                  const int root = find(0);
                                  for (int v = 1; v < n; ++v) {
                                    if (find(v) != root) return false;
                                  }
                                  return true;
                                }());
  return report;
}

}  // namespace tndp
