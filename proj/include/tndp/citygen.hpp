#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tndp/city.hpp"

namespace tndp {

enum class Generator { kIncomingKnn, kOutgoingKnn, kVoronoi, kGrid4, kGrid8 };

std::string generator_name(Generator g);
Generator parse_generator(const std::string& name);
inline constexpr Generator kAllGenerators[] = {Generator::kIncomingKnn, Generator::kOutgoingKnn,
                                               Generator::kVoronoi, Generator::kGrid4,
                                               Generator::kGrid8};

struct GenConfig {
  int n = 20;
  double side = 30000.0;  // metres
  double speed = 15.0;    // metres per second
  double edge_delete_prob = 0.1;
  /// Unset: one of the five processes chosen uniformly per city.
  std::optional<Generator> generator;
  double demand_min = 60.0;
  double demand_max = 800.0;
  int max_attempts = 1000;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

using DirectedPair = std::pair<NodeId, NodeId>;

enum class KnnDirection { kIncoming, kOutgoing };

/// Directed edges linking each node with its k nearest neighbours. Ties in
/// distance go to the lower index. Incoming edges point at the node,
/// outgoing edges away from it.
std::vector<DirectedPair> knn_edges(const std::vector<Point>& points, int k,
                                    KnnDirection direction);

/// Row-major lattice with ceil(sqrt(n)) columns spanning the square; the
/// last row may be partial.
std::vector<Point> grid_points(int n, double side);
/// Undirected lattice adjacencies (i < j), with diagonals if requested.
std::vector<DirectedPair> grid_adjacencies(int n, bool diagonals);

/// Vertices and ridges of the Voronoi diagram of `seeds` that lie inside
/// [0, side]^2. Ridges with an endpoint outside the square are dropped.
struct VoronoiGraph {
  std::vector<Point> vertices;
  std::vector<DirectedPair> ridges;  // undirected, i < j
};
VoronoiGraph voronoi_graph(const std::vector<Point>& seeds, double side);

struct GeneratedCity {
  CityGraph city;
  Generator generator;
  int attempts = 0;
};

/// One synthetic city. Non-Voronoi graphs lose each street (both
/// directions together) with the deletion probability; graphs that are
/// not strongly connected are regenerated. Throws std::runtime_error when
/// `max_attempts` is exhausted.
GeneratedCity generate_city(const GenConfig& config, std::mt19937_64& rng);

/// Voronoi street graph with exactly config.n nodes.
CityGraph voronoi_city(const GenConfig& config, std::mt19937_64& rng);

struct DatasetEntry {
  std::string file;
  Generator generator;
  std::uint64_t seed;
  int attempts;
};

/// Writes `count` cities (city_00000.txt, ...) and manifest.json into `dir`.
/// City k is generated from its own stream seeded with seed + k.
std::vector<DatasetEntry> write_dataset(const std::filesystem::path& dir, int count,
                                        const GenConfig& config, std::uint64_t seed);
std::vector<CityGraph> read_dataset(const std::filesystem::path& dir);

}  // namespace tndp
