#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "tndp/city.hpp"
#include "tndp/cost.hpp"
#include "tndp/mdp.hpp"
#include "tndp/policy.hpp"

namespace tndp {

struct TrainConfig {
  int epochs = 5;
  int batch_size = 64;
  double validation_fraction = 0.1;
  int num_routes = 10;
  int min_stops = 2;
  int max_stops = 15;
  double alpha_min = 0.0;
  double alpha_max = 1.0;
  double policy_lr = 1e-4;
  double baseline_lr = 5e-4;
  double grad_clip = 1.0;
  double beta = 5.0;
  Seconds transfer_penalty = 300.0;
  bool augment = true;
  std::vector<double> validation_alphas{0.0, 0.5, 1.0};
  std::uint64_t seed = 0;
  PolicyConfig policy;

  void validate() const;
};

/// Scale, rotation (radians) and demand factor applied by augment().
struct AugmentFactors {
  double scale = 1.0;
  double angle = 0.0;
  double demand = 1.0;
};

/// Scales positions and street times by `scale`, rotates positions about
/// their centroid and scales demand. Topology is unchanged.
CityGraph augment(const CityGraph& city, const AugmentFactors& factors);
/// Draws scale in [0.4, 1.6], angle in [0, 2 pi) and demand in [0.8, 1.2].
CityGraph augment(const CityGraph& city, std::mt19937_64& rng);

/// Adam with bias correction, updating one parameter set in place.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet<double>& params);

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<ad::Matrix<double>> m_, v_;
};

/// Rescales all gradients of the set so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_grad_norm(ParamSet<double>& params, double max_norm);

struct ProgressRecord {
  int epoch = 0;
  int batch = 0;  // 0 for the end-of-epoch validation record
  double mean_cost = 0.0;
  std::optional<double> validation_cost;
};
using ProgressSink = std::function<void(const ProgressRecord&)>;

struct TrainResult {
  PolicyParams<double> params;
  /// Index 0 is the untrained policy.
  std::vector<double> validation_costs;
  int best_epoch = 0;
};

/// REINFORCE with a learned baseline. Weights from the epoch with the
/// lowest validation cost are returned. Throws std::runtime_error on a
/// non-finite reward or gradient.
TrainResult train(const TrainConfig& config, const std::vector<CityGraph>& dataset,
                  const ProgressSink& progress = {});

/// One REINFORCE update on the given (city, alpha) episodes. Exposed for
/// tests; train() calls it once per batch. Returns the mean episode cost.
struct Episode {
  const PreparedCity* city;
  double alpha;
};
double reinforce_step(PolicyParams<double>& params, Adam& policy_opt, Adam& baseline_opt,
                      const std::vector<Episode>& episodes, const TrainConfig& config,
                      std::mt19937_64& rng, bool update_baseline = true);

/// Mean greedy single-rollout cost over cities and the configured alphas.
double validation_cost(const PolicyParams<double>& params,
                       const std::vector<PreparedCity>& cities, const TrainConfig& config);

struct EvalOptions {
  int num_routes = 10;
  int min_stops = 2;
  int max_stops = 15;
  double beta = 5.0;
  Seconds transfer_penalty = 300.0;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct CityBest {
  RouteNetwork network;
  CostBreakdown cost;
};

/// Best of `samples` stochastic rollouts per city. Sample j of city c is
/// drawn from a stream determined by (seed, c, j) alone, so a larger sample
/// count always contains the smaller one's samples.
std::vector<CityBest> evaluate_policy(const PolicyParams<double>& params,
                                      const std::vector<PreparedCity>& cities, double alpha,
                                      int samples, const EvalOptions& options);

/// evaluate_policy() at several ascending sample counts from one pass:
/// result[k][c] is the best of the first sample_counts[k] samples of city c.
std::vector<std::vector<CityBest>> evaluate_policy_prefixes(
    const PolicyParams<double>& params, const std::vector<PreparedCity>& cities, double alpha,
    const std::vector<int>& sample_counts, const EvalOptions& options);

/// Stream for one nested sample.
std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t city, std::uint64_t sample);

}  // namespace tndp
