#include "tndp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "tndp/parallel.hpp"

namespace tndp {

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("epochs and batch size must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must be in (0, 1)");
  }
  if (num_routes < 1 || min_stops < 1 || max_stops < min_stops) {
    throw std::invalid_argument("need S >= 1 and 1 <= MIN <= MAX");
  }
  if (!(alpha_min >= 0.0 && alpha_max <= 1.0 && alpha_min <= alpha_max)) {
    throw std::invalid_argument("alpha range must lie in [0, 1]");
  }
  if (!(policy_lr > 0.0 && baseline_lr > 0.0 && grad_clip > 0.0)) {
    throw std::invalid_argument("learning rates and clip norm must be positive");
  }
  if (validation_alphas.empty()) throw std::invalid_argument("no validation alphas");
}

CityGraph augment(const CityGraph& city, const AugmentFactors& f) {
  Point centroid;
  for (const Point& p : city.positions()) {
    centroid.x += p.x;
    centroid.y += p.y;
  }
  centroid.x /= city.size();
  centroid.y /= city.size();
  const double c = std::cos(f.angle), s = std::sin(f.angle);
  std::vector<Point> positions;
  positions.reserve(city.positions().size());
  for (const Point& p : city.positions()) {
    const double dx = f.scale * (p.x - centroid.x), dy = f.scale * (p.y - centroid.y);
    positions.push_back({centroid.x + c * dx - s * dy, centroid.y + s * dx + c * dy});
  }
  std::vector<StreetEdge> edges = city.edges();
  for (auto& e : edges) e.time *= f.scale;
  return CityGraph(std::move(positions), std::move(edges), f.demand * city.demand());
}

CityGraph augment(const CityGraph& city, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale(0.4, 1.6);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> demand(0.8, 1.2);
  AugmentFactors f;
  f.scale = scale(rng);
  f.angle = angle(rng);
  f.demand = demand(rng);
  return augment(city, f);
}

void Adam::step(ParamSet<double>& params) {
  if (m_.empty()) {
    for (const auto& v : params.values) {
      m_.push_back(ad::Matrix<double>::Zero(v.rows(), v.cols()));
      v_.push_back(ad::Matrix<double>::Zero(v.rows(), v.cols()));
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.values.size(); ++k) {
    const auto& g = params.grads[k];
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g.cwiseProduct(g);
    params.values[k].array() -=
        lr_ * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
  }
}

double clip_grad_norm(ParamSet<double>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& g : params.grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    for (auto& g : params.grads) g *= max_norm / norm;
  }
  return norm;
}

namespace {

CostModel make_cost(const PreparedCity& c, double alpha, const TrainConfig& config) {
  return CostModel(c.city, c.sp, {alpha, config.beta, config.transfer_penalty},
                   config.num_routes, config.min_stops, config.max_stops);
}

void require_finite(const ParamSet<double>& set, const char* which) {
  for (std::size_t k = 0; k < set.grads.size(); ++k) {
    if (!set.grads[k].allFinite()) {
      throw std::runtime_error(std::string("non-finite ") + which + " gradient in " +
                               set.names[k]);
    }
  }
}

}  // namespace

double reinforce_step(PolicyParams<double>& params, Adam& policy_opt, Adam& baseline_opt,
                      const std::vector<Episode>& episodes, const TrainConfig& config,
                      std::mt19937_64& rng, bool update_baseline) {
  if (episodes.empty()) throw std::invalid_argument("empty batch");
  params.policy().zero_grad();
  params.baseline().zero_grad();
  const double weight = 1.0 / static_cast<double>(episodes.size());
  double total_cost = 0.0;
  for (const Episode& ep : episodes) {
    const Environment env(ep.city->city, ep.city->sp, make_cost(*ep.city, ep.alpha, config));
    NeuralPolicy policy(params, NeuralPolicy::Mode::kSample);
    const RolloutResult out = rollout(policy, env, {}, rng, {true});
    const double reward = out.reward;
    if (!std::isfinite(reward)) {
      throw std::runtime_error("non-finite episode reward (alpha " + std::to_string(ep.alpha) +
                               ", cost " + std::to_string(out.cost.total) + ")");
    }
    total_cost += out.cost.total;
    const double baseline = baseline_predict(params, ep.city->city, config.num_routes, ep.alpha);
    if (!out.trajectory.empty()) {
      ad::Tape<double> tape(true);
      const ad::Var log_prob = trajectory_log_prob(tape, params, env, out.trajectory);
      // Minimises -(G - b) log pi; every decision shares the terminal return.
      tape.backward(log_prob, -(reward - baseline) * weight);
    }
    ad::Tape<double> tape(true);
    const ad::Var prediction =
        baseline_forward(tape, params, ep.city->city, config.num_routes, ep.alpha);
    tape.backward(ad::squared_error(tape, prediction, reward), weight);
  }
  require_finite(params.policy(), "policy");
  require_finite(params.baseline(), "baseline");
  clip_grad_norm(params.policy(), config.grad_clip);
  clip_grad_norm(params.baseline(), config.grad_clip);
  policy_opt.step(params.policy());
  if (update_baseline) baseline_opt.step(params.baseline());
  return total_cost * weight;
}

double validation_cost(const PolicyParams<double>& params,
                       const std::vector<PreparedCity>& cities, const TrainConfig& config) {
  double sum = 0.0;
  std::size_t count = 0;
  NeuralPolicy policy(params, NeuralPolicy::Mode::kGreedy);
  for (double alpha : config.validation_alphas) {
    for (const auto& c : cities) {
      const Environment env(c.city, c.sp, make_cost(c, alpha, config));
      Rng rng(0);
      sum += rollout(policy, env, {}, rng).cost.total;
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

TrainResult train(const TrainConfig& config, const std::vector<CityGraph>& dataset,
                  const ProgressSink& progress) {
  config.validate();
  if (dataset.size() < 2) throw std::invalid_argument("training needs at least two cities");
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(config.validation_fraction * dataset.size())), 1,
      dataset.size() - 1);
  const std::size_t n_train = dataset.size() - n_val;

  std::vector<PreparedCity> train_cities, val_cities;
  for (std::size_t k = 0; k < dataset.size(); ++k) {
    (k < n_train ? train_cities : val_cities).emplace_back(dataset[k]);
  }

  PolicyParams<double> params(config.policy, config.seed);
  {
    std::vector<FeatureTensor> features;
    std::vector<Eigen::RowVectorXd> summaries;
    for (const auto& c : train_cities) {
      features.push_back(featurize(c.city, c.sp, MdpState{}, 0.0));
      summaries.push_back(baseline_city_summary(c.city, config.num_routes));
    }
    params.stats() = normalize_fit(features, summaries);
  }

  TrainResult result;
  result.params = params;
  result.validation_costs.push_back(validation_cost(params, val_cities, config));
  if (progress) progress({0, 0, 0.0, result.validation_costs.back()});

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> alpha_dist(config.alpha_min, config.alpha_max);
  Adam policy_opt(config.policy_lr);
  Adam baseline_opt(config.baseline_lr);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    int batch_index = 0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(config.batch_size));
      std::vector<PreparedCity> augmented;
      augmented.reserve(end - start);
      std::vector<Episode> episodes;
      for (std::size_t k = start; k < end; ++k) {
        const CityGraph& base = train_cities[order[k]].city;
        augmented.emplace_back(config.augment ? augment(base, rng) : base);
      }
      for (const auto& c : augmented) episodes.push_back({&c, alpha_dist(rng)});
      const double mean_cost =
          reinforce_step(params, policy_opt, baseline_opt, episodes, config, rng);
      if (progress) progress({epoch, ++batch_index, mean_cost, std::nullopt});
    }
    const double val = validation_cost(params, val_cities, config);
    result.validation_costs.push_back(val);
    if (val < result.validation_costs[static_cast<std::size_t>(result.best_epoch)]) {
      result.best_epoch = epoch;
      result.params = params;
    }
    if (progress) progress({epoch, 0, 0.0, val});
  }
  return result;
}

std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t city, std::uint64_t sample) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(city), static_cast<std::uint32_t>(city >> 32),
                    static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(sample >> 32)};
  return std::mt19937_64(seq);
}

std::vector<std::vector<CityBest>> evaluate_policy_prefixes(
    const PolicyParams<double>& params, const std::vector<PreparedCity>& cities, double alpha,
    const std::vector<int>& sample_counts, const EvalOptions& options) {
  if (sample_counts.empty()) throw std::invalid_argument("no sample counts given");
  if (!std::is_sorted(sample_counts.begin(), sample_counts.end()) || sample_counts.front() < 1) {
    throw std::invalid_argument("sample counts must be positive and ascending");
  }
  std::vector<std::vector<CityBest>> out(sample_counts.size(),
                                         std::vector<CityBest>(cities.size()));
  parallel_for(cities.size(), options.workers, [&](std::size_t c) {
    const auto& pc = cities[c];
    const Environment env(pc.city, pc.sp,
                          CostModel(pc.city, pc.sp, {alpha, options.beta, options.transfer_penalty},
                                    options.num_routes, options.min_stops, options.max_stops));
    NeuralPolicy policy(params, NeuralPolicy::Mode::kSample);
    CityBest best;
    std::size_t next = 0;
    for (int j = 0; j < sample_counts.back(); ++j) {
      Rng rng = sample_stream(options.seed, c, static_cast<std::uint64_t>(j));
      RolloutResult r = rollout(policy, env, {}, rng);
      if (j == 0 || r.cost.total < best.cost.total) {
        best.cost = r.cost;
        best.network = std::move(r.network);
      }
      while (next < sample_counts.size() && sample_counts[next] == j + 1) out[next++][c] = best;
    }
  });
  return out;
}

std::vector<CityBest> evaluate_policy(const PolicyParams<double>& params,
                                      const std::vector<PreparedCity>& cities, double alpha,
                                      int samples, const EvalOptions& options) {
  if (samples < 1) throw std::invalid_argument("need at least one sample");
  return std::move(evaluate_policy_prefixes(params, cities, alpha, {samples}, options).front());
}

}  // namespace tndp
