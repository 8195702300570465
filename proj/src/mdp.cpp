#include "tndp/mdp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace tndp {

Route combine(const Route& route, const Route& extension, const CityGraph& city) {
  if (route.empty()) return extension;
  if (extension.empty()) return route;
  Route out;
  out.reserve(route.size() + extension.size());
  if (city.has_edge(route.back(), extension.front())) {
    out = route;
    out.insert(out.end(), extension.begin(), extension.end());
  } else if (city.has_edge(extension.back(), route.front())) {
    out = extension;
    out.insert(out.end(), route.begin(), route.end());
  } else {
    throw IllegalAction("extension does not attach to either end of the route");
  }
  return out;
}

namespace {
std::atomic<std::uint64_t> next_environment_id{1};
}  // namespace

Environment::Environment(const CityGraph& city, const ShortestPathData& sp, CostModel cost)
    : city_(&city), sp_(&sp), cost_(std::move(cost)), id_(next_environment_id++) {}

MdpState Environment::initial_state(RouteNetwork initial_routes) const {
  if (static_cast<int>(initial_routes.size()) >= num_routes()) {
    throw std::invalid_argument("initial network already has S routes");
  }
  MdpState s;
  s.finished_routes = std::move(initial_routes);
  return s;
}

std::vector<Route> Environment::extend_actions(const MdpState& state) const {
  const int n = city_->size();
  const Route& r = state.current_route;
  const int budget = max_stops() - static_cast<int>(r.size());
  std::vector<Route> out;
  if (r.empty()) {
    for (NodeId i = 0; i < n; ++i) {
      for (NodeId j = 0; j < n; ++j) {
        if (i != j && static_cast<int>(sp_->path(i, j).size()) <= budget) {
          out.push_back(sp_->path(i, j));
        }
      }
    }
    return out;
  }
  if (budget <= 0) return out;

  std::vector<char> on_route(static_cast<std::size_t>(n), 0);
  for (NodeId v : r) on_route[static_cast<std::size_t>(v)] = 1;
  auto fits = [&](const Route& a) {
    if (static_cast<int>(a.size()) > budget) return false;
    return std::none_of(a.begin(), a.end(),
                        [&](NodeId v) { return on_route[static_cast<std::size_t>(v)] != 0; });
  };

  // Keyed by (first, last); a shortest path is unique per key.
  std::vector<char> taken(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
  auto key = [n](NodeId a, NodeId b) {
    return static_cast<std::size_t>(a) * static_cast<std::size_t>(n) +
           static_cast<std::size_t>(b);
  };
  auto consider = [&](NodeId first, NodeId last) {
    if (taken[key(first, last)]) return;
    taken[key(first, last)] = 1;
    const Route single{first};
    const Route& a = first == last ? single : sp_->path(first, last);
    if (fits(a)) out.push_back(a);
  };
  for (NodeId u : city_->neighbors(r.back())) {
    if (on_route[static_cast<std::size_t>(u)]) continue;
    for (NodeId j = 0; j < n; ++j) consider(u, j);
  }
  for (NodeId w : city_->neighbors(r.front())) {
    if (on_route[static_cast<std::size_t>(w)]) continue;
    for (NodeId i = 0; i < n; ++i) consider(i, w);
  }
  std::sort(out.begin(), out.end(), [](const Route& a, const Route& b) {
    return std::pair(a.front(), a.back()) < std::pair(b.front(), b.back());
  });
  return out;
}

std::vector<HaltChoice> Environment::halt_actions(const MdpState& state) const {
  const int len = static_cast<int>(state.current_route.size());
  if (state.dead_end || len >= max_stops()) return {HaltChoice::kHalt};
  if (len < min_stops()) return {HaltChoice::kContinue};
  return {HaltChoice::kContinue, HaltChoice::kHalt};
}

bool Environment::is_legal_extension(const MdpState& state, const Route& a) const {
  const int n = city_->size();
  const Route& r = state.current_route;
  if (a.empty()) return false;
  if (std::any_of(a.begin(), a.end(), [n](NodeId v) { return v < 0 || v >= n; })) return false;
  if (static_cast<int>(a.size()) > max_stops() - static_cast<int>(r.size())) return false;
  if (r.empty()) return a.size() >= 2 && a == sp_->path(a.front(), a.back());
  if (a.size() > 1 && a != sp_->path(a.front(), a.back())) return false;
  for (NodeId v : a) {
    if (std::find(r.begin(), r.end(), v) != r.end()) return false;
  }
  return city_->has_edge(a.front(), r.back()) || city_->has_edge(a.back(), r.front());
}

StepResult Environment::step(const MdpState& state, const MdpAction& action) const {
  if (is_terminal(state)) throw IllegalAction("episode already terminated");
  StepResult result;
  MdpState& next = result.next;
  next = state;
  next.step_index = state.step_index + 1;
  next.extend_mode = !state.extend_mode;

  if (state.extend_mode) {
    const Route* extension = std::get_if<Route>(&action);
    if (extension == nullptr) throw IllegalAction("halt decision taken in extend mode");
    if (extension->empty()) {
      if (!extend_actions(state).empty()) {
        throw IllegalAction("pass taken while legal extensions exist");
      }
      next.dead_end = true;
      return result;
    }
    if (!is_legal_extension(state, *extension)) throw IllegalAction("illegal extension");
    next.current_route = combine(state.current_route, *extension, *city_);
    return result;
  }

  const HaltChoice* choice = std::get_if<HaltChoice>(&action);
  if (choice == nullptr) throw IllegalAction("extension taken in halt mode");
  const auto legal = halt_actions(state);
  if (std::find(legal.begin(), legal.end(), *choice) == legal.end()) {
    throw IllegalAction("halt decision not permitted by the stop limits");
  }
  if (*choice == HaltChoice::kHalt) {
    next.finished_routes.push_back(state.current_route);
    next.current_route.clear();
    next.dead_end = false;
    if (is_terminal(next)) {
      result.terminal = true;
      result.reward = -cost_.total(next.finished_routes);
    }
  }
  return result;
}

Decision RandomPolicy::choose_extension(const Environment&, const MdpState&,
                                        const std::vector<Route>& candidates, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return {pick(rng), -std::log(static_cast<double>(candidates.size()))};
}

Decision RandomPolicy::choose_halt(const Environment&, const MdpState&,
                                   const std::vector<HaltChoice>& options, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
  return {pick(rng), -std::log(static_cast<double>(options.size()))};
}

RolloutResult rollout(Policy& policy, const Environment& env, const RouteNetwork& initial_routes,
                      Rng& rng, const RolloutOptions& options) {
  RolloutResult result;
  MdpState state = env.initial_state(initial_routes);
  policy.begin_episode();
  while (true) {
    MdpAction action;
    Decision decision;
    std::size_t num_options = 0;
    if (state.extend_mode) {
      auto candidates = env.extend_actions(state);
      num_options = candidates.size();
      if (candidates.empty()) {
        action = Route{};
      } else {
        if (candidates.size() > 1) {
          decision = policy.choose_extension(env, state, candidates, rng);
        }
        action = std::move(candidates[decision.index]);
      }
    } else {
      const auto choices = env.halt_actions(state);
      num_options = choices.size();
      if (choices.size() > 1) decision = policy.choose_halt(env, state, choices, rng);
      action = choices[decision.index];
    }
    if (options.record_trajectory && num_options > 1) {
      result.trajectory.push_back({state, decision.index, num_options});
    }
    result.log_probs.push_back(decision.log_prob);
    StepResult step = env.step(state, action);
    result.reward += step.reward;
    ++result.steps;
    state = std::move(step.next);
    if (step.terminal) break;
  }
  result.network = std::move(state.finished_routes);
  result.cost = env.cost_model().evaluate(result.network);
  return result;
}

}  // namespace tndp
