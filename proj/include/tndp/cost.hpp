#pragma once

#include <Eigen/Core>

#include "tndp/city.hpp"

namespace tndp {

/// User-facing cost parameters. The rescaling constants w_p and w_o are
/// derived from the city and S by CostModel.
struct CostWeights {
  double alpha = 0.5;
  double beta = 5.0;
  Seconds transfer_penalty = 300.0;
};

struct CostBreakdown {
  Seconds passenger_cost = 0.0;
  Seconds operator_cost = 0.0;
  double constraint_cost = 0.0;
  double total = 0.0;
  double unserved_fraction = 0.0;
};

struct PassengerCost {
  Seconds mean_trip_time = 0.0;
  double unserved_fraction = 0.0;
};

/// Shortest transit trip times between every ordered node pair, charging
/// `transfer_penalty` per change of route. Unreachable pairs are +inf and
/// the diagonal is zero.
Eigen::MatrixXd transit_trip_times(const RouteNetwork& routes, const CityGraph& city,
                                   Seconds transfer_penalty);

/// Demand-weighted mean trip time over reachable pairs. Demand between
/// unreachable pairs is reported through unserved_fraction instead.
/// Throws std::invalid_argument if the total demand is zero.
PassengerCost passenger_cost(const Eigen::MatrixXd& trip_times, const Eigen::MatrixXd& demand);

Seconds operator_cost(const RouteNetwork& routes, const CityGraph& city);

/// Fraction of ordered pairs with no transit connection plus the total
/// stop-count violation normalised by S * MAX.
double constraint_cost(const RouteNetwork& routes, const Eigen::MatrixXd& trip_times,
                       int num_routes, int min_stops, int max_stops);
double constraint_cost(const RouteNetwork& routes, const CityGraph& city, int num_routes,
                       int min_stops, int max_stops);

/// Binds the cost function to one city and problem size.
class CostModel {
 public:
  CostModel(const CityGraph& city, const ShortestPathData& sp, CostWeights weights,
            int num_routes, int min_stops, int max_stops);

  CostBreakdown evaluate(const RouteNetwork& routes) const;
  double total(const RouteNetwork& routes) const { return evaluate(routes).total; }

  const CostWeights& weights() const { return weights_; }
  double passenger_scale() const { return passenger_scale_; }
  double operator_scale() const { return operator_scale_; }
  int num_routes() const { return num_routes_; }
  int min_stops() const { return min_stops_; }
  int max_stops() const { return max_stops_; }
  const CityGraph& city() const { return *city_; }

 private:
  const CityGraph* city_;
  CostWeights weights_;
  int num_routes_;
  int min_stops_;
  int max_stops_;
  double passenger_scale_;
  double operator_scale_;
};

CostBreakdown total_cost(const RouteNetwork& routes, const CityGraph& city,
                         const ShortestPathData& sp, const CostWeights& weights,
                         int num_routes, int min_stops, int max_stops);

}  // namespace tndp
