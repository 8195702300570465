#include <gtest/gtest.h>

#include <map>

#include "support.hpp"
#include "tndp/bco.hpp"

using namespace tndp;
using tndp::testing::geometric_city;
using tndp::testing::line_city;

namespace {

PolicyParams<double> tiny_policy(const PreparedCity& pc, int S) {
  PolicyConfig c;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.head_hidden = 8;
  c.baseline_hidden = 4;
  PolicyParams<double> p(c, 7);
  p.stats() = normalize_fit({featurize(pc.city, pc.sp, MdpState{}, 0.0)},
                            {baseline_city_summary(pc.city, S)});
  return p;
}

int differing_routes(const RouteNetwork& a, const RouteNetwork& b) {
  int d = 0;
  for (std::size_t k = 0; k < a.size(); ++k) d += a[k] != b[k] ? 1 : 0;
  return d;
}

BcoConfig small_config(int S, int MIN, int MAX) {
  BcoConfig c;
  c.bees = 4;
  c.passes = 2;
  c.iterations = 5;
  c.num_routes = S;
  c.min_stops = MIN;
  c.max_stops = MAX;
  c.weights.alpha = 0.5;
  return c;
}

}  // namespace

TEST(BeeMix, NamesRoundTripAndSwarmsSplitEvenly) {
  for (BeeMix m : {BeeMix::kClassic, BeeMix::kNeural, BeeMix::kNeuralOnly}) {
    EXPECT_EQ(parse_bee_mix(bee_mix_name(m)), m);
  }
  EXPECT_THROW(parse_bee_mix("ga"), std::invalid_argument);
  auto count = [](const std::vector<BeeType>& v, BeeType t) { return std::count(v.begin(), v.end(), t); };
  const auto classic = bee_types(BeeMix::kClassic, 10);
  EXPECT_EQ(count(classic, BeeType::kType1), 5);
  EXPECT_EQ(count(classic, BeeType::kType2), 5);
  const auto neural = bee_types(BeeMix::kNeural, 10);
  EXPECT_EQ(count(neural, BeeType::kNeural), 5);
  EXPECT_EQ(count(neural, BeeType::kType2), 5);
  EXPECT_EQ(count(bee_types(BeeMix::kNeuralOnly, 10), BeeType::kNeural), 10);
}

TEST(BcoConfig, DefaultBudgetIsFortyThousand) {
  BcoConfig c;
  EXPECT_EQ(c.budget(), 40000);
  c.passes = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(SelectRoute, EqualDemandIsUniform) {
  const CityGraph c = line_city(4);
  const RouteNetwork net{{0, 1}, {1, 2}, {2, 3}};
  for (double p : route_selection_probabilities(net, c)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
}

TEST(SelectRoute, MoreDirectDemandMeansLessLikely) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const CityGraph c = tndp::testing::random_city(8, rng);
    RouteNetwork net;
    for (int k = 0; k < 4; ++k) net.push_back(tndp::testing::random_walk(c, 1, 5, rng));
    const auto p = route_selection_probabilities(net, c);
    double sum = 0.0;
    for (double x : p) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t a = 0; a < net.size(); ++a) {
      EXPECT_GT(p[a], 0.0);
      for (std::size_t b = 0; b < net.size(); ++b) {
        if (route_direct_demand(net[a], c) > route_direct_demand(net[b], c)) EXPECT_LT(p[a], p[b]);
      }
    }
  }
}

TEST(SelectRoute, SamplingFollowsTheProbabilities) {
  const CityGraph c = line_city(5);
  const RouteNetwork net{{0, 1, 2, 3}, {3, 4}};
  const auto p = route_selection_probabilities(net, c);
  std::mt19937_64 rng(2);
  int first = 0;
  const int draws = 20000;
  for (int k = 0; k < draws; ++k) first += select_route(net, c, rng) == 0 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(first) / draws, p[0], 0.01);
}

TEST(Type1, ReplacesATerminalWithAShortestPath) {
  const PreparedCity pc(line_city(3));
  EXPECT_EQ(replace_terminal({0, 1}, true, 2, pc.sp), (Route{0, 1, 2}));
  EXPECT_EQ(replace_terminal({0, 1}, false, 2, pc.sp), (Route{2, 1}));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const PreparedCity city(geometric_city(9, rng));
    RouteNetwork net;
    for (int k = 0; k < 3; ++k) net.push_back(tndp::testing::random_walk(city.city, 2, 5, rng));
    const std::size_t idx = trial % 3;
    const auto out = type1_modify(net, idx, city.city, city.sp, rng);
    EXPECT_LE(differing_routes(net, out), 1);
    const Route& r = out[idx];
    ASSERT_GE(r.size(), 2u);
    EXPECT_EQ(r, city.sp.path(r.front(), r.back()));
    EXPECT_TRUE(r.front() == net[idx].front() || r.back() == net[idx].back());
  }
}

TEST(Type2, OutcomesOnAFullLine) {
  const CityGraph c = line_city(3);
  std::mt19937_64 rng(4);
  std::map<Route, int> seen;
  const int draws = 20000;
  for (int k = 0; k < draws; ++k) seen[type2_modify({{0, 1, 2}}, 0, c, rng)[0]]++;
  // Deleting either end, or a no-op when no neighbour is free.
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_NEAR(seen[(Route{0, 1})] / double(draws), 0.1, 0.01);
  EXPECT_NEAR(seen[(Route{1, 2})] / double(draws), 0.1, 0.01);
  EXPECT_NEAR(seen[(Route{0, 1, 2})] / double(draws), 0.8, 0.01);
}

TEST(Type2, ExtendsWithTheOnlyFreeNeighbour) {
  const CityGraph c = line_city(3);
  std::mt19937_64 rng(5);
  std::map<Route, int> seen;
  for (int k = 0; k < 4000; ++k) seen[type2_modify({{0, 1}}, 0, c, rng)[0]]++;
  // Extension at 1 adds 2; extension at 0 has no free neighbour.
  EXPECT_GT(seen[(Route{0, 1, 2})], 0);
  EXPECT_GT(seen[(Route{0, 1})], 0);
  EXPECT_GT(seen[(Route{0})], 0);
  EXPECT_GT(seen[(Route{1})], 0);
  EXPECT_EQ(seen.size(), 4u);
}

TEST(Type2, SingleStopRouteIsNeverEmptied) {
  const CityGraph c = line_city(2);
  std::mt19937_64 rng(6);
  for (int k = 0; k < 200; ++k) {
    const auto out = type2_modify({{0}}, 0, c, rng);
    EXPECT_FALSE(out[0].empty());
  }
}

TEST(Type2, ChangesOneTerminalAndStaysSimple) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const CityGraph c = tndp::testing::random_city(8, rng);
    const RouteNetwork net{tndp::testing::random_walk(c, 1, 6, rng),
                           tndp::testing::random_walk(c, 1, 6, rng)};
    const auto out = type2_modify(net, 1, c, rng);
    EXPECT_EQ(out[0], net[0]);
    const Route& a = net[1];
    const Route& b = out[1];
    EXPECT_FALSE(has_repeated_stop(b));
    EXPECT_LE(std::abs(static_cast<int>(a.size()) - static_cast<int>(b.size())), 1);
    for (std::size_t k = 0; k + 1 < b.size(); ++k) EXPECT_TRUE(c.has_edge(b[k], b[k + 1]));
  }
}

TEST(NeuralModify, ReplacesExactlyTheChosenRoute) {
  std::mt19937_64 rng(8);
  const PreparedCity pc(geometric_city(9, rng));
  const auto params = tiny_policy(pc, 3);
  const Environment env(pc.city, pc.sp, CostModel(pc.city, pc.sp, {0.5, 5.0, 300.0}, 3, 2, 5));
  NeuralPolicy sample(params, NeuralPolicy::Mode::kSample);
  const RouteNetwork net{pc.sp.path(0, 8), pc.sp.path(1, 7), pc.sp.path(2, 6)};
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t idx = trial % 3;
    const auto out = neural_modify(net, idx, env, sample, rng);
    ASSERT_EQ(out.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
      if (k != idx) EXPECT_EQ(out[k], net[k]);
    }
    EXPECT_GE(out[idx].size(), 2u);
    EXPECT_LE(out[idx].size(), 5u);
    EXPECT_FALSE(has_repeated_stop(out[idx]));
  }
  NeuralPolicy greedy(params, NeuralPolicy::Mode::kGreedy);
  std::mt19937_64 r1(1), r2(2);
  EXPECT_EQ(neural_modify(net, 1, env, greedy, r1), neural_modify(net, 1, env, greedy, r2));
  EXPECT_THROW(neural_modify({net[0], net[1]}, 0, env, greedy, r1), std::invalid_argument);
}

TEST(Recruitment, FollowerProbabilities) {
  EXPECT_EQ(follower_probabilities({2.0, 2.0, 2.0}), (std::vector<double>{0, 0, 0}));
  const auto q = follower_probabilities({1.0, 3.0, 2.0, 5.0});
  EXPECT_DOUBLE_EQ(q[0], 0.0);
  EXPECT_DOUBLE_EQ(q[3], 1.0);
  EXPECT_DOUBLE_EQ(q[1], 0.5);
  EXPECT_LT(q[2], q[1]);
}

TEST(Recruitment, EqualCostsCopyNothing) {
  std::vector<BeeState> bees{{{{0, 1}}, 1.0, BeeType::kType1, false},
                             {{{1, 2}}, 1.0, BeeType::kType2, false}};
  std::mt19937_64 rng(9);
  recruit(bees, rng);
  EXPECT_EQ(bees[0].network, (RouteNetwork{{0, 1}}));
  EXPECT_EQ(bees[1].network, (RouteNetwork{{1, 2}}));
  EXPECT_TRUE(bees[0].recruiter && bees[1].recruiter);
}

TEST(Recruitment, FollowersCopyARecruiter) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> cost(0.0, 1.0);
  int worst_followed = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<BeeState> bees;
    for (int b = 0; b < 6; ++b) bees.push_back({{{b, b + 1}}, cost(rng), BeeType::kType2, true});
    const auto before = bees;
    recruit(bees, rng);
    const auto best = std::min_element(before.begin(), before.end(), [](auto& a, auto& b) {
      return a.cost < b.cost;
    }) - before.begin();
    EXPECT_TRUE(bees[static_cast<std::size_t>(best)].recruiter);
    const auto worst = std::max_element(before.begin(), before.end(), [](auto& a, auto& b) {
      return a.cost < b.cost;
    }) - before.begin();
    worst_followed += bees[static_cast<std::size_t>(worst)].recruiter ? 0 : 1;
    for (std::size_t b = 0; b < bees.size(); ++b) {
      if (bees[b].recruiter) {
        EXPECT_EQ(bees[b].network, before[b].network);
        continue;
      }
      bool copied = false;
      for (std::size_t r = 0; r < bees.size(); ++r) {
        if (bees[r].recruiter && bees[r].network == bees[b].network) {
          copied = true;
          EXPECT_EQ(bees[b].cost, bees[r].cost);
        }
      }
      EXPECT_TRUE(copied);
      EXPECT_EQ(bees[b].type, before[b].type);
    }
  }
  // q = 1 for the strictly worst bee.
  EXPECT_EQ(worst_followed, 500);
}

TEST(InitialNetwork, PicksTheHighestDemandShortestPath) {
  const PreparedCity pc(line_city(3));
  std::mt19937_64 rng(11);
  const auto net = initial_network(pc.city, pc.sp, 1, 2, 3, rng);
  ASSERT_EQ(net.size(), 1u);
  EXPECT_TRUE(net[0] == (Route{0, 1, 2}) || net[0] == (Route{2, 1, 0}));
  const auto short_only = initial_network(pc.city, pc.sp, 1, 2, 2, rng);
  EXPECT_EQ(short_only[0].size(), 2u);
  EXPECT_THROW(initial_network(pc.city, pc.sp, 1, 4, 5, rng), std::invalid_argument);
}

TEST(InitialNetwork, MatchesBruteForceFirstChoice) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const PreparedCity pc(tndp::testing::random_city(7, rng));
    double best = 0.0;
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j) {
        const Route& p = pc.sp.path(i, j);
        if (i != j && p.size() >= 2 && p.size() <= 4) best = std::max(best, route_direct_demand(p, pc.city));
      }
    }
    std::mt19937_64 a(5), b(5);
    const auto net = initial_network(pc.city, pc.sp, 3, 2, 4, a);
    EXPECT_EQ(net, initial_network(pc.city, pc.sp, 3, 2, 4, b));
    ASSERT_EQ(net.size(), 3u);
    EXPECT_DOUBLE_EQ(route_direct_demand(net[0], pc.city), best);
    const auto report = validate_network(net, pc.city, 3, 2, 4);
    EXPECT_TRUE(report.structurally_valid());
  }
}

TEST(RunBco, ZeroIterationsReturnsTheStart) {
  const PreparedCity pc(line_city(5));
  BcoConfig c = small_config(2, 2, 4);
  c.iterations = 0;
  const RouteNetwork r0{{0, 1, 2}, {2, 3, 4}};
  const auto res = run_bco(pc, c, r0);
  EXPECT_EQ(res.best, r0);
  EXPECT_EQ(res.evaluations, 0);
  ASSERT_EQ(res.trace.size(), 1u);
  const CostModel cost(pc.city, pc.sp, c.weights, 2, 2, 4);
  EXPECT_DOUBLE_EQ(res.best_cost.total, cost.total(r0));
}

TEST(RunBco, BudgetTraceAndReproducibility) {
  std::mt19937_64 rng(13);
  const PreparedCity pc(geometric_city(10, rng));
  BcoConfig c = small_config(3, 2, 5);
  std::mt19937_64 init(1);
  const auto r0 = initial_network(pc.city, pc.sp, 3, 2, 5, init);
  const auto a = run_bco(pc, c, r0);
  EXPECT_EQ(a.evaluations, c.budget());
  ASSERT_EQ(a.trace.size(), 6u);
  for (std::size_t k = 1; k < a.trace.size(); ++k) EXPECT_LE(a.trace[k], a.trace[k - 1]);
  const CostModel cost(pc.city, pc.sp, c.weights, 3, 2, 5);
  EXPECT_NEAR(cost.total(a.best), a.best_cost.total, 1e-12);
  EXPECT_EQ(a.best_cost.total, a.trace.back());

  const auto b = run_bco(pc, c, r0);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.trace, b.trace);
  c.workers = 3;
  const auto threaded = run_bco(pc, c, r0);
  EXPECT_EQ(a.best, threaded.best);
  EXPECT_EQ(a.trace, threaded.trace);
  c.seed = 99;
  EXPECT_NE(run_bco(pc, c, r0).trace, a.trace);
}

TEST(RunBco, ImprovesABadStart) {
  std::mt19937_64 rng(14);
  const PreparedCity pc(geometric_city(10, rng));
  BcoConfig c = small_config(3, 2, 6);
  c.iterations = 40;
  const RouteNetwork r0{{0, pc.city.neighbors(0).front()},
                        {1, pc.city.neighbors(1).front()},
                        {2, pc.city.neighbors(2).front()}};
  const auto res = run_bco(pc, c, r0);
  EXPECT_LT(res.best_cost.total, res.trace.front());
}

TEST(RunBco, NeuralMixesNeedAPolicy) {
  std::mt19937_64 rng(15);
  const PreparedCity pc(geometric_city(8, rng));
  BcoConfig c = small_config(2, 2, 5);
  c.iterations = 3;
  std::mt19937_64 init(2);
  const auto r0 = initial_network(pc.city, pc.sp, 2, 2, 5, init);
  for (BeeMix mix : {BeeMix::kNeural, BeeMix::kNeuralOnly}) {
    c.mix = mix;
    EXPECT_THROW(run_bco(pc, c, r0), std::invalid_argument);
    const auto params = tiny_policy(pc, 2);
    const auto res = run_bco(pc, c, r0, &params);
    EXPECT_EQ(res.evaluations, c.budget());
    EXPECT_LE(res.best_cost.total, res.trace.front());
    c.greedy_neural = true;
    EXPECT_EQ(run_bco(pc, c, r0, &params).best, run_bco(pc, c, r0, &params).best);
    c.greedy_neural = false;
  }
  EXPECT_THROW(run_bco(pc, c, {r0[0]}), std::invalid_argument);
}
