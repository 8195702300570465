#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tndp {

using NodeId = int;
using Seconds = double;

/// Absolute tolerance used whenever two drive times are compared.
inline constexpr Seconds kTimeTolerance = 1e-9;

/// A route is the ordered list of stops a vehicle visits; it is driven in
/// both directions.
using Route = std::vector<NodeId>;

/// Ordered collection of routes. Semantically a set, but iteration order is
/// kept stable so runs are reproducible.
using RouteNetwork = std::vector<Route>;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct StreetEdge {
  NodeId from = 0;
  NodeId to = 0;
  Seconds time = 0.0;
};

class InvalidCity : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Street graph plus origin-destination demand. Immutable after
/// construction; the constructor enforces symmetry of edges and demand,
/// positive edge times and a zero demand diagonal. Strong connectivity is
/// reported by is_strongly_connected() and enforced by the consumers that
/// need it.
class CityGraph {
 public:
  CityGraph() = default;
  CityGraph(std::vector<Point> positions, std::vector<StreetEdge> edges,
            Eigen::MatrixXd demand);

  int size() const { return static_cast<int>(positions_.size()); }
  const std::vector<Point>& positions() const { return positions_; }
  const Eigen::MatrixXd& demand() const { return demand_; }

  /// Directed edges, sorted by (from, to). Each adjacency appears twice.
  const std::vector<StreetEdge>& edges() const { return edges_; }
  std::size_t undirected_edge_count() const { return edges_.size() / 2; }

  bool has_edge(NodeId i, NodeId j) const;
  std::optional<Seconds> edge_time(NodeId i, NodeId j) const;

  /// Street neighbours of a node in increasing id order.
  const std::vector<NodeId>& neighbors(NodeId i) const {
    return adjacency_[static_cast<std::size_t>(i)];
  }

  /// Dense n x n street-time matrix; +inf where no edge, 0 on the diagonal.
  const Eigen::MatrixXd& street_times() const { return street_times_; }

  bool is_strongly_connected() const;
  double total_demand() const { return demand_.sum(); }

 private:
  std::vector<Point> positions_;
  std::vector<StreetEdge> edges_;
  Eigen::MatrixXd demand_;
  Eigen::MatrixXd street_times_;
  std::vector<std::vector<NodeId>> adjacency_;
};

/// All-pairs shortest drive times T and one canonical shortest path per
/// ordered pair (i != j). Among equal-time paths the lexicographically
/// smallest node sequence is stored.
class ShortestPathData {
 public:
  ShortestPathData() = default;
  ShortestPathData(Eigen::MatrixXd times, std::vector<Route> paths);

  int size() const { return static_cast<int>(times_.rows()); }
  Seconds time(NodeId i, NodeId j) const { return times_(i, j); }
  const Eigen::MatrixXd& times() const { return times_; }
  Seconds max_time() const { return times_.maxCoeff(); }

  /// Empty for i == j.
  const Route& path(NodeId i, NodeId j) const {
    return paths_[static_cast<std::size_t>(i) * static_cast<std::size_t>(size()) +
                  static_cast<std::size_t>(j)];
  }

 private:
  Eigen::MatrixXd times_;
  std::vector<Route> paths_;
};

ShortestPathData all_pairs_shortest_paths(const CityGraph& city);

/// A city together with its shortest paths.
struct PreparedCity {
  explicit PreparedCity(CityGraph c) : city(std::move(c)), sp(all_pairs_shortest_paths(city)) {}
  CityGraph city;
  ShortestPathData sp;
};

/// Time to drive the route end to end and back.
Seconds route_drive_time(const Route& route, const CityGraph& city);

struct NetworkReport {
  bool connected = false;
  std::size_t route_count = 0;
  bool count_ok = false;
  /// Sum over routes of the stops missing below MIN or above MAX.
  int length_violation = 0;
  std::vector<std::size_t> routes_out_of_bounds;
  std::vector<std::size_t> routes_with_repeats;
  std::vector<std::size_t> routes_off_street;

  /// Route count, stop bounds and no repeated stop; ignores connectivity.
  bool structurally_valid() const {
    return count_ok && routes_out_of_bounds.empty() && routes_with_repeats.empty() &&
           routes_off_street.empty();
  }
  bool ok() const { return connected && structurally_valid(); }
};

NetworkReport validate_network(const RouteNetwork& routes, const CityGraph& city,
                               int num_routes, int min_stops, int max_stops);

bool has_repeated_stop(const Route& route);

}  // namespace tndp
