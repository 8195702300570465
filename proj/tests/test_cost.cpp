#include <gtest/gtest.h>

#include <limits>

#include "oracles.hpp"
#include "support.hpp"
#include "tndp/cost.hpp"

using namespace tndp;
using tndp::testing::line_city;
using tndp::testing::random_city;
using tndp::testing::random_walk;

namespace {

RouteNetwork random_network(const CityGraph& city, int count, int lo, int hi,
                            std::mt19937_64& rng) {
  RouteNetwork out;
  for (int k = 0; k < count; ++k) out.push_back(random_walk(city, lo, hi, rng));
  return out;
}

}  // namespace

TEST(TransitTripTimes, LineExamples) {
  const CityGraph city = line_city(3);
  const auto one = transit_trip_times({{0, 1, 2}}, city, 300);
  EXPECT_EQ(one(0, 2), 120);
  EXPECT_EQ(one(2, 0), 120);
  const auto two = transit_trip_times({{0, 1}, {1, 2}}, city, 300);
  EXPECT_EQ(two(0, 2), 420);
  EXPECT_EQ(two(0, 1), 60);
}

TEST(TransitTripTimes, EmptyNetworkUnreachable) {
  const auto t = transit_trip_times({}, line_city(4), 300);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i == j) {
        EXPECT_EQ(t(i, j), 0.0);
      } else {
        EXPECT_TRUE(std::isinf(t(i, j)));
      }
    }
  }
}

TEST(TransitTripTimes, MatchesItineraryEnumeration) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const CityGraph city = random_city(7, rng);
    const auto routes = random_network(city, 3, 2, 6, rng);
    const auto fast = transit_trip_times(routes, city, 300);
    const auto slow = tndp::testing::enumerate_itineraries(routes, city, 300, 4);
    for (int i = 0; i < city.size(); ++i) {
      for (int j = 0; j < city.size(); ++j) {
        if (std::isfinite(slow(i, j))) {
          ASSERT_EQ(fast(i, j), slow(i, j));
        } else {
          ASSERT_TRUE(std::isinf(fast(i, j)));
        }
      }
    }
  }
}

TEST(TransitTripTimes, SymmetricAndMonotoneInRoutes) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const CityGraph city = random_city(9, rng);
    auto routes = random_network(city, 3, 2, 6, rng);
    const auto before = transit_trip_times(routes, city, 300);
    for (int i = 0; i < city.size(); ++i) {
      for (int j = 0; j < city.size(); ++j) EXPECT_EQ(before(i, j), before(j, i));
    }
    const double c_o = operator_cost(routes, city);
    routes.push_back(random_walk(city, 2, 5, rng));
    const auto after = transit_trip_times(routes, city, 300);
    EXPECT_TRUE((after.array() <= before.array()).all());
    EXPECT_GE(operator_cost(routes, city), c_o);
  }
}

TEST(TransitTripTimes, NeverBeatsStreetShortestPath) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const CityGraph city = random_city(8, rng);
    const auto sp = all_pairs_shortest_paths(city);
    const auto t = transit_trip_times(random_network(city, 4, 2, 8, rng), city, 300);
    EXPECT_TRUE((t.array() >= sp.times().array() - kTimeTolerance).all());
  }
}

TEST(PassengerCost, UniformDemandOnLine) {
  const CityGraph city = line_city(3);
  const auto pc = passenger_cost(transit_trip_times({{0, 1, 2}}, city, 300), city.demand());
  EXPECT_DOUBLE_EQ(pc.mean_trip_time, 80.0);
  EXPECT_EQ(pc.unserved_fraction, 0.0);
}

TEST(PassengerCost, UnreachableDemandExcluded) {
  const CityGraph city = line_city(3);
  const auto none = passenger_cost(transit_trip_times({}, city, 300), city.demand());
  EXPECT_EQ(none.mean_trip_time, 0.0);
  EXPECT_EQ(none.unserved_fraction, 1.0);
  const auto part = passenger_cost(transit_trip_times({{0, 1}}, city, 300), city.demand());
  EXPECT_DOUBLE_EQ(part.mean_trip_time, 60.0);
  EXPECT_DOUBLE_EQ(part.unserved_fraction, 4.0 / 6.0);
}

TEST(PassengerCost, ScaleInvariantInDemand) {
  std::mt19937_64 rng(31);
  const CityGraph city = random_city(8, rng);
  const auto t = transit_trip_times(random_network(city, 3, 2, 8, rng), city, 300);
  const auto a = passenger_cost(t, city.demand());
  const auto b = passenger_cost(t, 2.0 * city.demand());
  EXPECT_DOUBLE_EQ(a.mean_trip_time, b.mean_trip_time);
  EXPECT_THROW(passenger_cost(t, Eigen::MatrixXd::Zero(8, 8)), std::invalid_argument);
}

TEST(OperatorCost, Examples) {
  const CityGraph city = line_city(3);
  EXPECT_EQ(operator_cost({{0, 1, 2}, {0, 1, 2}}, city), 480);
  EXPECT_EQ(operator_cost({}, city), 0);
}

TEST(ConstraintCost, Examples) {
  const CityGraph city = line_city(4);
  EXPECT_EQ(constraint_cost({{0, 1, 2}, {2, 3}}, city, 2, 2, 3), 0.0);
  EXPECT_EQ(constraint_cost({}, city, 2, 2, 3), 1.0);
  const CityGraph long_line = line_city(7);
  // One route two stops over MAX = 5, the other compliant; every pair connected.
  EXPECT_DOUBLE_EQ(constraint_cost({{0, 1, 2, 3, 4, 5, 6}, {5, 6}}, long_line, 2, 2, 5),
                   2.0 / (2 * 5));
  // Half of the 12 ordered pairs disconnected, one route a stop short of MIN = 3.
  EXPECT_DOUBLE_EQ(constraint_cost({{0, 1}, {2, 3}}, city, 2, 3, 4), 8.0 / 12.0 + 2.0 / 8.0);
}

TEST(CostModel, IdentityAndWeights) {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const CityGraph city = random_city(8, rng);
    const auto sp = all_pairs_shortest_paths(city);
    const double alpha = unit(rng);
    const CostModel model(city, sp, {alpha, 5.0, 300.0}, 3, 2, 5);
    EXPECT_DOUBLE_EQ(model.passenger_scale(), 1.0 / sp.max_time());
    EXPECT_DOUBLE_EQ(model.operator_scale(), 1.0 / (3.0 * 3 * sp.max_time()));
    const auto c = model.evaluate(random_network(city, 3, 1, 7, rng));
    const double expect = alpha * model.passenger_scale() * c.passenger_cost +
                          (1 - alpha) * model.operator_scale() * c.operator_cost +
                          5.0 * c.constraint_cost;
    EXPECT_NEAR(c.total, expect, 1e-9);
  }
}

TEST(CostModel, ExtremeAlphaIgnoresOtherTerm) {
  std::mt19937_64 rng(41);
  const CityGraph city = random_city(8, rng);
  const auto sp = all_pairs_shortest_paths(city);
  const auto routes = random_network(city, 3, 2, 6, rng);
  const CostModel op_a(city, sp, {0.0, 5.0, 300.0}, 3, 2, 6);
  const CostModel op_b(city, sp, {0.0, 5.0, 900.0}, 3, 2, 6);
  EXPECT_EQ(op_a.total(routes), op_b.total(routes));
  const CostModel pass(city, sp, {1.0, 5.0, 300.0}, 3, 2, 6);
  const auto c = pass.evaluate(routes);
  EXPECT_EQ(c.total, pass.passenger_scale() * c.passenger_cost + 5.0 * c.constraint_cost);
}

TEST(CostModel, RejectsBadParameters) {
  const CityGraph city = line_city(3);
  const auto sp = all_pairs_shortest_paths(city);
  EXPECT_THROW(CostModel(city, sp, {1.5, 5.0, 300.0}, 1, 2, 3), std::invalid_argument);
  EXPECT_THROW(CostModel(city, sp, {0.5, 5.0, 300.0}, 0, 2, 3), std::invalid_argument);
  EXPECT_THROW(CostModel(city, sp, {0.5, 5.0, 300.0}, 1, 4, 3), std::invalid_argument);
}
