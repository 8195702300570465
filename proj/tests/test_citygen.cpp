#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "tndp/citygen.hpp"
#include "tndp/io.hpp"

using namespace tndp;

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool segments_cross(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

TEST(Knn, CollinearPoints) {
  const std::vector<Point> pts{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}};
  const auto in = knn_edges(pts, 2, KnnDirection::kIncoming);
  const std::vector<DirectedPair> expect_in{{1, 0}, {2, 0}, {0, 1}, {2, 1}, {1, 2},
                                            {3, 2}, {2, 3}, {4, 3}, {3, 4}, {2, 4}};
  EXPECT_EQ(in, expect_in);
  const auto out = knn_edges(pts, 2, KnnDirection::kOutgoing);
  for (std::size_t k = 0; k < out.size(); ++k) {
    EXPECT_EQ(out[k].first, in[k].second);
    EXPECT_EQ(out[k].second, in[k].first);
  }
  EXPECT_THROW(knn_edges(pts, 5, KnnDirection::kIncoming), std::invalid_argument);
}

TEST(Knn, TiesGoToLowerIndex) {
  // Node 0 is equidistant from 1, 2 and 3.
  const std::vector<Point> pts{{0, 0}, {0, 1}, {1, 0}, {-1, 0}, {5, 5}};
  const auto e = knn_edges(pts, 2, KnnDirection::kOutgoing);
  EXPECT_EQ(e[0], (DirectedPair{0, 1}));
  EXPECT_EQ(e[1], (DirectedPair{0, 2}));
}

TEST(Knn, MirrorSymmetricInputGivesMirroredEdges) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1.0, 100.0);
  std::vector<Point> pts;
  for (int k = 0; k < 6; ++k) pts.push_back({u(rng), u(rng)});
  const int half = static_cast<int>(pts.size());
  for (int k = 0; k < half; ++k) pts.push_back({-pts[k].x, pts[k].y});
  const auto e = knn_edges(pts, 4, KnnDirection::kIncoming);
  auto mirror = [half](NodeId v) { return v < half ? v + half : v - half; };
  for (auto [a, b] : e) {
    EXPECT_NE(std::find(e.begin(), e.end(), DirectedPair{mirror(a), mirror(b)}), e.end());
  }
}

TEST(Grid, LatticeCounts) {
  EXPECT_EQ(grid_adjacencies(9, false).size(), 12u);
  EXPECT_EQ(grid_adjacencies(9, true).size(), 20u);
  // Two full rows of three plus one node: 4 horizontal and 4 vertical links.
  EXPECT_EQ(grid_adjacencies(7, false).size(), 8u);
  const auto pts = grid_points(9, 30000);
  EXPECT_DOUBLE_EQ(pts[8].x, 30000);
  EXPECT_DOUBLE_EQ(pts[8].y, 30000);
}

TEST(Voronoi, CornerSeedsMeetAtCentre) {
  const auto g = voronoi_graph({{0, 0}, {30000, 0}, {0, 30000}, {30000, 30000}}, 30000);
  ASSERT_EQ(g.vertices.size(), 1u);
  EXPECT_NEAR(g.vertices[0].x, 15000, 1e-6);
  EXPECT_NEAR(g.vertices[0].y, 15000, 1e-6);
  EXPECT_TRUE(g.ridges.empty());
}

TEST(Voronoi, VerticesAreEquidistantFromThreeNearestSeeds) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 30000.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point> seeds;
    for (int k = 0; k < 25; ++k) seeds.push_back({u(rng), u(rng)});
    const auto g = voronoi_graph(seeds, 30000);
    ASSERT_FALSE(g.vertices.empty());
    for (const Point& v : g.vertices) {
      std::vector<double> d;
      for (const Point& s : seeds) d.push_back(std::hypot(s.x - v.x, s.y - v.y));
      std::sort(d.begin(), d.end());
      EXPECT_NEAR(d[0], d[2], 1e-6 * d[0] + 1e-6);
      EXPECT_GE(v.x, 0.0);
      EXPECT_LE(v.x, 30000.0);
      EXPECT_GE(v.y, 0.0);
      EXPECT_LE(v.y, 30000.0);
    }
    for (std::size_t a = 0; a < g.ridges.size(); ++a) {
      for (std::size_t b = a + 1; b < g.ridges.size(); ++b) {
        const auto [p, q] = g.ridges[a];
        const auto [r, s] = g.ridges[b];
        // Ridges meeting at a vertex cannot cross in their interiors.
        if (p == r || p == s || q == r || q == s) continue;
        EXPECT_FALSE(segments_cross(g.vertices[p], g.vertices[q], g.vertices[r], g.vertices[s]));
      }
    }
  }
}

TEST(GenerateCity, EveryGeneratorYieldsValidCities) {
  for (Generator gen : kAllGenerators) {
    GenConfig config;
    config.generator = gen;
    config.edge_delete_prob = 0.3;
    std::mt19937_64 rng(7);
    for (int k = 0; k < 20; ++k) {
      const auto g = generate_city(config, rng);
      const CityGraph& c = g.city;
      ASSERT_EQ(c.size(), 20) << generator_name(gen);
      EXPECT_EQ(g.generator, gen);
      EXPECT_TRUE(c.is_strongly_connected());
      for (int i = 0; i < c.size(); ++i) {
        EXPECT_EQ(c.demand()(i, i), 0.0);
        for (int j = 0; j < c.size(); ++j) {
          EXPECT_EQ(c.demand()(i, j), c.demand()(j, i));
          if (i != j) {
            EXPECT_GE(c.demand()(i, j), 60.0);
            EXPECT_LE(c.demand()(i, j), 800.0);
          }
        }
      }
      for (const auto& e : c.edges()) {
        const auto& a = c.positions()[e.from];
        const auto& b = c.positions()[e.to];
        EXPECT_EQ(e.time, std::hypot(a.x - b.x, a.y - b.y) / 15.0);
      }
    }
  }
}

TEST(GenerateCity, GridWithoutDeletionIsTheFullLattice) {
  GenConfig config;
  config.n = 9;
  config.generator = Generator::kGrid4;
  config.edge_delete_prob = 0.0;
  std::mt19937_64 rng(1);
  const auto g = generate_city(config, rng);
  EXPECT_EQ(g.city.edges().size(), 24u);
  EXPECT_EQ(g.attempts, 1);
}

TEST(GenerateCity, UniformChoiceCoversAllGenerators) {
  GenConfig config;
  config.n = 12;
  std::mt19937_64 rng(2);
  std::vector<int> seen(5, 0);
  for (int k = 0; k < 100; ++k) ++seen[static_cast<int>(generate_city(config, rng).generator)];
  for (int count : seen) EXPECT_GT(count, 5);
}

TEST(GenerateCity, RetryBoundIsExplicit) {
  GenConfig config;
  config.generator = Generator::kGrid4;
  config.edge_delete_prob = 0.95;
  config.max_attempts = 3;
  std::mt19937_64 rng(1);
  EXPECT_THROW(generate_city(config, rng), std::runtime_error);
  config.edge_delete_prob = 1.0;
  EXPECT_THROW(config.validate(), std::invalid_argument);
}

TEST(GenerateCity, SeedReproducible) {
  GenConfig config;
  std::mt19937_64 a(99), b(99);
  const auto x = generate_city(config, a);
  const auto y = generate_city(config, b);
  EXPECT_EQ(x.city.demand(), y.city.demand());
  EXPECT_EQ(x.city.edges().size(), y.city.edges().size());
}

TEST(Dataset, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "tndp_dataset_test";
  std::filesystem::remove_all(dir);
  GenConfig config;
  config.n = 10;
  const auto entries = write_dataset(dir, 6, config, 1234);
  ASSERT_EQ(entries.size(), 6u);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  const auto cities = read_dataset(dir);
  ASSERT_EQ(cities.size(), 6u);
  for (std::size_t k = 0; k < cities.size(); ++k) {
    std::mt19937_64 rng(entries[k].seed);
    const auto again = generate_city(config, rng);
    EXPECT_EQ(cities[k].demand(), again.city.demand());
    ASSERT_EQ(cities[k].edges().size(), again.city.edges().size());
    for (std::size_t e = 0; e < again.city.edges().size(); ++e) {
      EXPECT_EQ(cities[k].edges()[e].time, again.city.edges()[e].time);
    }
    for (int i = 0; i < again.city.size(); ++i) {
      EXPECT_EQ(cities[k].positions()[i].x, again.city.positions()[i].x);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(CityFile, RejectsMalformedRows) {
  std::istringstream bad("tndp-city 1\ncoords\n0 0\n1 0\ntravel_times\n0 5\n5\ndemand\n0 1\n1 0\n");
  try {
    read_city(bad);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("travel_times row 2"), std::string::npos);
  }
}
