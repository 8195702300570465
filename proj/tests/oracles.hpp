#pragma once

#include <limits>
#include <vector>

#include <Eigen/Core>

#include "tndp/city.hpp"

namespace tndp::testing {

/// Exhaustive itinerary enumeration: every sequence of up to `max_legs`
/// rides, each boarding a route at the current stop and alighting at any
/// other stop of that route. A penalty is charged for every boarding after
/// the first.
inline Eigen::MatrixXd enumerate_itineraries(const RouteNetwork& routes, const CityGraph& city,
                                             double transfer_penalty, int max_legs) {
  const int n = city.size();
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd best = Eigen::MatrixXd::Constant(n, n, inf);
  struct Frame {
    NodeId node;
    int legs;
    double time;
  };
  for (NodeId s = 0; s < n; ++s) {
    best(s, s) = 0.0;
    std::vector<Frame> stack{{s, 0, 0.0}};
    while (!stack.empty()) {
      const Frame f = stack.back();
      stack.pop_back();
      if (f.legs == max_legs) continue;
      for (const Route& r : routes) {
        for (std::size_t p = 0; p < r.size(); ++p) {
          if (r[p] != f.node) continue;
          for (std::size_t q = 0; q < r.size(); ++q) {
            if (q == p) continue;
            double ride = 0.0;
            const std::size_t lo = std::min(p, q), hi = std::max(p, q);
            for (std::size_t k = lo; k < hi; ++k) ride += *city.edge_time(r[k], r[k + 1]);
            const double t = f.time + ride + (f.legs > 0 ? transfer_penalty : 0.0);
            if (t < best(s, r[q])) best(s, r[q]) = t;
            stack.push_back({r[q], f.legs + 1, t});
          }
        }
      }
    }
  }
  return best;
}

}  // namespace tndp::testing
