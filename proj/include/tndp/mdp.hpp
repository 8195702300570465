#pragma once

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "tndp/city.hpp"
#include "tndp/cost.hpp"

namespace tndp {

using Rng = std::mt19937_64;

enum class HaltChoice { kContinue, kHalt };

/// (finished routes, route in progress, mode). `dead_end` is raised when an
/// extend step found no legal extension; the following halt step is then
/// forced to commit the route.
struct MdpState {
  RouteNetwork finished_routes;
  Route current_route;
  bool extend_mode = true;
  int step_index = 0;
  bool dead_end = false;

  bool operator==(const MdpState&) const = default;
};

/// An extension path, or a halt-mode decision. An empty Route is the forced
/// pass taken when no extension is legal.
using MdpAction = std::variant<Route, HaltChoice>;

struct StepResult {
  MdpState next;
  double reward = 0.0;
  bool terminal = false;
};

class IllegalAction : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Joins an extension to the route at whichever end it is street-adjacent
/// to, preferring the end of the route.
Route combine(const Route& route, const Route& extension, const CityGraph& city);

/// The construction MDP for one city, cost function and problem size.
class Environment {
 public:
  Environment(const CityGraph& city, const ShortestPathData& sp, CostModel cost);

  const CityGraph& city() const { return *city_; }
  const ShortestPathData& shortest_paths() const { return *sp_; }
  const CostModel& cost_model() const { return cost_; }
  int num_routes() const { return cost_.num_routes(); }
  int min_stops() const { return cost_.min_stops(); }
  int max_stops() const { return cost_.max_stops(); }
  double alpha() const { return cost_.weights().alpha; }
  /// Distinct per constructed environment; copies share it.
  std::uint64_t id() const { return id_; }

  MdpState initial_state(RouteNetwork initial_routes = {}) const;

  /// Legal extensions in extend mode, ordered by (first stop, last stop).
  /// With an empty route these are all shortest paths of at most MAX stops;
  /// otherwise shortest paths (or single street neighbours) that attach to
  /// either end, share no stop with the route and fit the remaining budget.
  std::vector<Route> extend_actions(const MdpState& state) const;
  std::vector<HaltChoice> halt_actions(const MdpState& state) const;

  bool is_terminal(const MdpState& state) const {
    return static_cast<int>(state.finished_routes.size()) >= num_routes();
  }

  /// Applies a legal action. Throws IllegalAction otherwise.
  StepResult step(const MdpState& state, const MdpAction& action) const;

 private:
  bool is_legal_extension(const MdpState& state, const Route& extension) const;

  const CityGraph* city_;
  const ShortestPathData* sp_;
  CostModel cost_;
  std::uint64_t id_;
};

struct Decision {
  std::size_t index = 0;
  double log_prob = 0.0;
};

/// Chooses actions during a rollout. Only called when more than one action
/// is legal.
class Policy {
 public:
  virtual ~Policy() = default;
  /// Called by rollout() before the first decision of an episode.
  virtual void begin_episode() {}
  virtual Decision choose_extension(const Environment& env, const MdpState& state,
                                    const std::vector<Route>& candidates, Rng& rng) = 0;
  virtual Decision choose_halt(const Environment& env, const MdpState& state,
                               const std::vector<HaltChoice>& options, Rng& rng) = 0;
};

/// Uniform choice among legal actions.
class RandomPolicy final : public Policy {
 public:
  Decision choose_extension(const Environment& env, const MdpState& state,
                            const std::vector<Route>& candidates, Rng& rng) override;
  Decision choose_halt(const Environment& env, const MdpState& state,
                       const std::vector<HaltChoice>& options, Rng& rng) override;
};

/// One decision point of a trajectory, kept for policy-gradient replay.
struct TrajectoryStep {
  MdpState state;
  std::size_t chosen = 0;
  std::size_t num_options = 0;
};

struct RolloutResult {
  RouteNetwork network;
  std::vector<double> log_probs;
  std::vector<TrajectoryStep> trajectory;
  double reward = 0.0;
  CostBreakdown cost;
  int steps = 0;
};

struct RolloutOptions {
  bool record_trajectory = false;
};

/// Runs the MDP from `initial_routes` until S routes exist.
RolloutResult rollout(Policy& policy, const Environment& env, const RouteNetwork& initial_routes,
                      Rng& rng, const RolloutOptions& options = {});

}  // namespace tndp
