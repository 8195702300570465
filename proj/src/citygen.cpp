#include "tndp/citygen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "tndp/io.hpp"

namespace tndp {

namespace {

constexpr const char* kManifestFormat = "tndp-dataset";
constexpr int kManifestVersion = 1;

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Eigen::MatrixXd sample_demand(int n, const GenConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(config.demand_min, config.demand_max);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) d(i, j) = d(j, i) = dist(rng);
  }
  return d;
}

std::vector<StreetEdge> timed_edges(const std::vector<Point>& points,
                                    const std::set<DirectedPair>& undirected, double speed) {
  std::vector<StreetEdge> edges;
  for (const auto& [a, b] : undirected) {
    const double t = distance(points[a], points[b]) / speed;
    edges.push_back({a, b, t});
    edges.push_back({b, a, t});
  }
  return edges;
}

std::set<DirectedPair> undirected_set(const std::vector<DirectedPair>& pairs) {
  std::set<DirectedPair> out;
  for (auto [a, b] : pairs) {
    if (a != b) out.insert({std::min(a, b), std::max(a, b)});
  }
  return out;
}

struct Triangle {
  std::array<int, 3> v;
  double cx, cy, r2;
};

Triangle make_triangle(int a, int b, int c, const std::vector<Point>& p) {
  const double ax = p[a].x, ay = p[a].y, bx = p[b].x, by = p[b].y, cx = p[c].x, cy = p[c].y;
  const double d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
  const double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
  Triangle t{{a, b, c}, 0.0, 0.0, 0.0};
  t.cx = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
  t.cy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
  t.r2 = (ax - t.cx) * (ax - t.cx) + (ay - t.cy) * (ay - t.cy);
  return t;
}

// Bowyer-Watson. Returns triangles over indices into `seeds`.
std::vector<Triangle> delaunay(const std::vector<Point>& seeds, double side) {
  std::vector<Point> p = seeds;
  const int m = static_cast<int>(seeds.size());
  const double big = 1000.0 * std::max(side, 1.0);
  p.push_back({-big, -big});
  p.push_back({3.0 * big, -big});
  p.push_back({-big, 3.0 * big});
  std::vector<Triangle> tris{make_triangle(m, m + 1, m + 2, p)};
  for (int k = 0; k < m; ++k) {
    std::vector<Triangle> keep;
    std::map<DirectedPair, int> boundary;
    for (const Triangle& t : tris) {
      const double dx = p[k].x - t.cx, dy = p[k].y - t.cy;
      if (dx * dx + dy * dy < t.r2 * (1.0 - 1e-12)) {
        for (int e = 0; e < 3; ++e) {
          const int a = t.v[e], b = t.v[(e + 1) % 3];
          ++boundary[{std::min(a, b), std::max(a, b)}];
        }
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& [edge, count] : boundary) {
      if (count == 1) keep.push_back(make_triangle(edge.first, edge.second, k, p));
    }
    tris = std::move(keep);
  }
  std::erase_if(tris, [m](const Triangle& t) {
    return t.v[0] >= m || t.v[1] >= m || t.v[2] >= m;
  });
  return tris;
}

}  // namespace

std::string generator_name(Generator g) {
  switch (g) {
    case Generator::kIncomingKnn: return "incoming_4nn";
    case Generator::kOutgoingKnn: return "outgoing_4nn";
    case Generator::kVoronoi: return "voronoi";
    case Generator::kGrid4: return "grid4";
    case Generator::kGrid8: return "grid8";
  }
  throw std::invalid_argument("unknown generator");
}

Generator parse_generator(const std::string& name) {
  for (Generator g : kAllGenerators) {
    if (generator_name(g) == name) return g;
  }
  throw std::invalid_argument("unknown generator '" + name + "'");
}

void GenConfig::validate() const {
  if (n < 2) throw std::invalid_argument("a city needs at least two nodes");
  if (!(side > 0.0) || !(speed > 0.0)) throw std::invalid_argument("side and speed must be > 0");
  if (!(edge_delete_prob >= 0.0 && edge_delete_prob < 1.0)) {
    throw std::invalid_argument("edge deletion probability must be in [0, 1)");
  }
  if (!(demand_min > 0.0 && demand_max >= demand_min)) {
    throw std::invalid_argument("demand range must be positive and ordered");
  }
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be positive");
}

std::vector<DirectedPair> knn_edges(const std::vector<Point>& points, int k,
                                    KnnDirection direction) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || n < k + 1) throw std::invalid_argument("knn_edges needs at least k + 1 points");
  std::vector<DirectedPair> out;
  std::vector<std::pair<double, NodeId>> order;
  for (NodeId i = 0; i < n; ++i) {
    order.clear();
    for (NodeId j = 0; j < n; ++j) {
      if (j != i) order.push_back({distance(points[i], points[j]), j});
    }
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (int r = 0; r < k; ++r) {
      const NodeId j = order[static_cast<std::size_t>(r)].second;
      if (direction == KnnDirection::kIncoming) {
        out.push_back({j, i});
      } else {
        out.push_back({i, j});
      }
    }
  }
  return out;
}

std::vector<Point> grid_points(int n, double side) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  const double spacing = side / std::max({cols - 1, rows - 1, 1});
  std::vector<Point> out;
  for (int k = 0; k < n; ++k) out.push_back({(k % cols) * spacing, (k / cols) * spacing});
  return out;
}

std::vector<DirectedPair> grid_adjacencies(int n, bool diagonals) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<DirectedPair> out;
  auto link = [&](int r0, int c0, int r1, int c1) {
    if (c1 < 0 || c1 >= cols) return;
    const int a = r0 * cols + c0, b = r1 * cols + c1;
    if (a < n && b < n) out.push_back({std::min(a, b), std::max(a, b)});
  };
  for (int k = 0; k < n; ++k) {
    const int r = k / cols, c = k % cols;
    link(r, c, r, c + 1);
    link(r, c, r + 1, c);
    if (diagonals) {
      link(r, c, r + 1, c + 1);
      link(r, c, r + 1, c - 1);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

VoronoiGraph voronoi_graph(const std::vector<Point>& seeds, double side) {
  const auto tris = delaunay(seeds, side);
  const double merge_tol = 1e-7 * std::max(side, 1.0);
  std::vector<Point> centers;
  std::vector<int> vertex_of(tris.size());
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const Point c{tris[t].cx, tris[t].cy};
    int id = -1;
    for (std::size_t v = 0; v < centers.size(); ++v) {
      if (distance(centers[v], c) <= merge_tol) {
        id = static_cast<int>(v);
        break;
      }
    }
    if (id < 0) {
      id = static_cast<int>(centers.size());
      centers.push_back(c);
    }
    vertex_of[t] = id;
  }
  // Two triangles sharing a Delaunay edge give one Voronoi ridge.
  std::map<DirectedPair, std::vector<int>> edge_tris;
  for (std::size_t t = 0; t < tris.size(); ++t) {
    for (int e = 0; e < 3; ++e) {
      const int a = tris[t].v[e], b = tris[t].v[(e + 1) % 3];
      edge_tris[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(t));
    }
  }
  std::set<DirectedPair> ridges;
  for (const auto& [edge, ts] : edge_tris) {
    if (ts.size() != 2) continue;
    const int a = vertex_of[ts[0]], b = vertex_of[ts[1]];
    if (a != b) ridges.insert({std::min(a, b), std::max(a, b)});
  }
  const double tol = 1e-9 * std::max(side, 1.0);
  auto inside = [&](const Point& p) {
    return p.x >= -tol && p.x <= side + tol && p.y >= -tol && p.y <= side + tol;
  };
  VoronoiGraph out;
  std::vector<int> remap(centers.size(), -1);
  for (std::size_t v = 0; v < centers.size(); ++v) {
    if (!inside(centers[v])) continue;
    remap[v] = static_cast<int>(out.vertices.size());
    out.vertices.push_back({std::clamp(centers[v].x, 0.0, side), std::clamp(centers[v].y, 0.0, side)});
  }
  for (auto [a, b] : ridges) {
    if (remap[a] >= 0 && remap[b] >= 0) {
      out.ridges.push_back({std::min(remap[a], remap[b]), std::max(remap[a], remap[b])});
    }
  }
  std::sort(out.ridges.begin(), out.ridges.end());
  return out;
}

namespace {

std::vector<Point> sample_points(int count, double side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coord(0.0, side);
  std::vector<Point> out(static_cast<std::size_t>(count));
  for (auto& p : out) p = {coord(rng), coord(rng)};
  return out;
}

// One Voronoi draw with the seed count adjusted toward n. Returns nothing
// when the vertex count missed n or the graph is disconnected.
std::optional<CityGraph> voronoi_attempt(const GenConfig& config, int& seed_count,
                                         std::mt19937_64& rng) {
  const VoronoiGraph g = voronoi_graph(sample_points(seed_count, config.side, rng), config.side);
  const int found = static_cast<int>(g.vertices.size());
  if (found != config.n) {
    seed_count = std::max(3, seed_count + (found < config.n ? 1 : -1));
    return std::nullopt;
  }
  std::set<DirectedPair> und(g.ridges.begin(), g.ridges.end());
  CityGraph city(g.vertices, timed_edges(g.vertices, und, config.speed),
                 Eigen::MatrixXd::Zero(config.n, config.n));
  if (!city.is_strongly_connected()) return std::nullopt;
  return city;
}

std::optional<CityGraph> street_attempt(const GenConfig& config, Generator generator,
                                        std::mt19937_64& rng) {
  std::vector<Point> points;
  std::set<DirectedPair> und;
  switch (generator) {
    case Generator::kIncomingKnn:
    case Generator::kOutgoingKnn: {
      points = sample_points(config.n, config.side, rng);
      const int k = std::min(4, config.n - 1);
      und = undirected_set(knn_edges(points, k,
                                     generator == Generator::kIncomingKnn
                                         ? KnnDirection::kIncoming
                                         : KnnDirection::kOutgoing));
      break;
    }
    case Generator::kGrid4:
    case Generator::kGrid8:
      points = grid_points(config.n, config.side);
      for (auto p : grid_adjacencies(config.n, generator == Generator::kGrid8)) und.insert(p);
      break;
    case Generator::kVoronoi:
      throw std::logic_error("voronoi handled separately");
  }
  std::bernoulli_distribution drop(config.edge_delete_prob);
  std::erase_if(und, [&](const DirectedPair&) { return drop(rng); });
  CityGraph city(points, timed_edges(points, und, config.speed),
                 Eigen::MatrixXd::Zero(config.n, config.n));
  if (!city.is_strongly_connected()) return std::nullopt;
  return city;
}

}  // namespace

CityGraph voronoi_city(const GenConfig& config, std::mt19937_64& rng) {
  GenConfig c = config;
  c.generator = Generator::kVoronoi;
  return generate_city(c, rng).city;
}

GeneratedCity generate_city(const GenConfig& config, std::mt19937_64& rng) {
  config.validate();
  Generator generator;
  if (config.generator) {
    generator = *config.generator;
  } else {
    std::uniform_int_distribution<int> pick(0, 4);
    generator = kAllGenerators[pick(rng)];
  }
  int seed_count = config.n;
  for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
    std::optional<CityGraph> street = generator == Generator::kVoronoi
                                          ? voronoi_attempt(config, seed_count, rng)
                                          : street_attempt(config, generator, rng);
    if (!street) continue;
    CityGraph city(street->positions(), street->edges(), sample_demand(config.n, config, rng));
    return {std::move(city), generator, attempt};
  }
  throw std::runtime_error("could not generate a strongly connected " +
                           generator_name(generator) + " city with " + std::to_string(config.n) +
                           " nodes in " + std::to_string(config.max_attempts) + " attempts");
}

std::vector<DatasetEntry> write_dataset(const std::filesystem::path& dir, int count,
                                        const GenConfig& config, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("dataset needs at least one city");
  config.validate();
  std::filesystem::create_directories(dir);
  std::vector<DatasetEntry> entries;
  nlohmann::json cities = nlohmann::json::array();
  for (int k = 0; k < count; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "city_%05d.txt", k);
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(k));
    const auto g = generate_city(config, rng);
    write_city_file(dir / name, g.city);
    entries.push_back({name, g.generator, seed + static_cast<std::uint64_t>(k), g.attempts});
    cities.push_back({{"file", name},
                      {"generator", generator_name(g.generator)},
                      {"seed", entries.back().seed},
                      {"attempts", g.attempts}});
  }
  nlohmann::json manifest{
      {"format", kManifestFormat},
      {"version", kManifestVersion},
      {"count", count},
      {"seed", seed},
      {"config",
       {{"n", config.n},
        {"side_m", config.side},
        {"speed_mps", config.speed},
        {"edge_delete_prob", config.edge_delete_prob},
        {"generator", config.generator ? generator_name(*config.generator) : "uniform"},
        {"demand_min", config.demand_min},
        {"demand_max", config.demand_max}}},
      {"cities", cities}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
  return entries;
}

std::vector<CityGraph> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != kManifestFormat) {
    throw std::runtime_error(dir.string() + " is not a city dataset");
  }
  std::vector<CityGraph> out;
  for (const auto& entry : manifest.at("cities")) {
    out.push_back(read_city_file(dir / entry.at("file").get<std::string>()));
  }
  return out;
}

}  // namespace tndp
