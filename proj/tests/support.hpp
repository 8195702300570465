#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "tndp/city.hpp"

namespace tndp::testing {

inline CityGraph line_city(int n, double tau = 60.0, double demand = 100.0) {
  std::vector<Point> pos;
  std::vector<StreetEdge> edges;
  for (int i = 0; i < n; ++i) pos.push_back({i * tau * 15.0, 0.0});
  for (int i = 0; i + 1 < n; ++i) {
    edges.push_back({i, i + 1, tau});
    edges.push_back({i + 1, i, tau});
  }
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n, n, demand);
  d.diagonal().setZero();
  return CityGraph(pos, edges, d);
}

/// Random connected symmetric city: a random spanning tree plus extra edges.
/// Times are integers so equal-time ties actually occur.
inline CityGraph random_city(int n, std::mt19937_64& rng, double extra_edge_prob = 0.3,
                             int max_time = 9) {
  std::uniform_real_distribution<double> coord(0.0, 1000.0);
  std::uniform_int_distribution<int> time(1, max_time);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> pos;
  for (int i = 0; i < n; ++i) pos.push_back({coord(rng), coord(rng)});
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int k = 1; k < n; ++k) {
    std::uniform_int_distribution<int> parent(0, k - 1);
    const int a = order[k];
    const int b = order[parent(rng)];
    adj[a][b] = adj[b][a] = 1;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (unit(rng) < extra_edge_prob) adj[i][j] = adj[j][i] = 1;
    }
  }
  std::vector<StreetEdge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (!adj[i][j]) continue;
      const double t = 60.0 * time(rng);
      edges.push_back({i, j, t});
      edges.push_back({j, i, t});
    }
  }
  std::uniform_int_distribution<int> dem(0, 50);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) d(i, j) = d(j, i) = dem(rng);
  }
  d(0, n - 1) = d(n - 1, 0) = d(0, n - 1) + 1.0;  // total demand is never zero
  return CityGraph(pos, edges, d);
}

/// Random city with continuous geometric times, so shortest paths have no ties.
inline CityGraph geometric_city(int n, std::mt19937_64& rng) {
  const CityGraph base = random_city(n, rng, 0.4);
  std::vector<StreetEdge> edges;
  for (const auto& e : base.edges()) {
    const auto& a = base.positions()[e.from];
    const auto& b = base.positions()[e.to];
    edges.push_back({e.from, e.to, std::hypot(a.x - b.x, a.y - b.y) / 15.0});
  }
  return CityGraph(base.positions(), edges, base.demand());
}

/// Random simple walk along street edges with between lo and hi stops.
inline Route random_walk(const CityGraph& city, int lo, int hi, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> start(0, city.size() - 1);
  std::uniform_int_distribution<int> len(lo, hi);
  const int target = len(rng);
  Route r{start(rng)};
  while (static_cast<int>(r.size()) < target) {
    std::vector<NodeId> options;
    for (NodeId v : city.neighbors(r.back())) {
      if (std::find(r.begin(), r.end(), v) == r.end()) options.push_back(v);
    }
    if (options.empty()) break;
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    r.push_back(options[pick(rng)]);
  }
  return r;
}

}  // namespace tndp::testing
