#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tndp/autodiff.hpp"
#include "tndp/city.hpp"
#include "tndp/mdp.hpp"

namespace tndp {

inline constexpr int kNodeFeatures = 4;  // x, y, demand total, finished routes through node
inline constexpr int kEdgeFeatures = 6;  // demand, street flag, street time, SP time, transit link, self
inline constexpr int kLinkChannel = 4;
inline constexpr int kBaselineCityFeatures = 4;  // n, total demand, mean street time, S

/// Inputs to the backbone for one (city, finished routes) pair. The route in
/// progress is not part of the backbone input; it reaches the heads through
/// `on_current_route` so node embeddings stay fixed while a route is built.
struct FeatureTensor {
  Eigen::MatrixXd node;             // n x kNodeFeatures
  Eigen::MatrixXd edge;             // n^2 x kEdgeFeatures, row i*n + j
  Eigen::VectorXd on_current_route;  // n
  double alpha = 0.0;
};

FeatureTensor featurize(const CityGraph& city, const ShortestPathData& sp, const MdpState& state,
                        double alpha);

/// Per-channel shift and scale. Channels with zero variance are only shifted.
struct ChannelStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  /// Rows are samples, columns channels. Population standard deviation.
  static ChannelStats fit(const std::vector<const Eigen::MatrixXd*>& blocks);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
};

struct NormalizationStats {
  ChannelStats node;
  ChannelStats edge;
  ChannelStats baseline;
};

/// City summary fed to the baseline: n, total demand, mean street time, S.
Eigen::RowVectorXd baseline_city_summary(const CityGraph& city, int num_routes);

/// Fits statistics over the initial-state features of the given cities.
NormalizationStats normalize_fit(const std::vector<FeatureTensor>& samples,
                                 const std::vector<Eigen::RowVectorXd>& baseline_rows);
FeatureTensor normalize_apply(const NormalizationStats& stats, const FeatureTensor& features);

struct PolicyConfig {
  int embed_dim = 64;
  int num_layers = 3;
  int num_heads = 4;
  int head_hidden = 64;
  int baseline_hidden = 32;
  /// Extension candidates kept by the demand-per-second prefilter.
  int max_candidates = 40;
  double attention_slope = 0.2;
};

/// Named weight matrices with matching gradient accumulators.
template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<ad::Matrix<T>> values;
  // Accumulators written by backward passes, including through const views.
  mutable std::vector<ad::Matrix<T>> grads;

  int add(std::string name, ad::Matrix<T> init) {
    names.push_back(std::move(name));
    grads.push_back(ad::Matrix<T>::Zero(init.rows(), init.cols()));
    values.push_back(std::move(init));
    return static_cast<int>(values.size()) - 1;
  }
  void zero_grad() {
    for (auto& g : grads) g.setZero();
  }
  std::size_t num_scalars() const {
    std::size_t total = 0;
    for (const auto& v : values) total += static_cast<std::size_t>(v.size());
    return total;
  }
};

/// Weights of backbone, heads and baseline, plus the frozen input statistics.
template <typename T>
class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  ParamSet<T>& policy() { return policy_; }
  const ParamSet<T>& policy() const { return policy_; }
  ParamSet<T>& baseline() { return baseline_; }
  const ParamSet<T>& baseline() const { return baseline_; }
  NormalizationStats& stats() { return stats_; }
  const NormalizationStats& stats() const { return stats_; }

  template <typename U>
  PolicyParams<U> cast() const;

  struct LayerSlots {
    int src, dst, value, edge, attn, out, out_b, ff1, ff1_b, ff2, ff2_b;
  };
  struct Slots {
    int in_w, in_b;
    std::vector<LayerSlots> layers;
    int ext_w1, ext_ctx, ext_scalar, ext_b1, ext_w2, ext_b2;
    int halt_w1, halt_b1, halt_w2, halt_b2;
    int base_w1, base_b1, base_w2, base_b2, base_w3, base_b3;
  };
  const Slots& slots() const { return slots_; }

 private:
  template <typename U>
  friend class PolicyParams;

  void build_slots(bool initialise, std::uint64_t seed);

  PolicyConfig config_;
  ParamSet<T> policy_;
  ParamSet<T> baseline_;
  NormalizationStats stats_;
  Slots slots_{};
};

/// Extension candidates after the demand-per-second prefilter, as indices
/// into the full candidate list in their original order.
std::vector<std::size_t> prune_candidates(const Environment& env, const MdpState& state,
                                          const std::vector<Route>& candidates,
                                          int max_candidates);

/// Backbone node embeddings (n x d) for normalised features.
template <typename T>
ad::Var forward_backbone(ad::Tape<T>& tape, const PolicyParams<T>& params,
                         const FeatureTensor& normalized);

/// Logits (k x 1) over the given extension candidates.
template <typename T>
ad::Var extension_logits(ad::Tape<T>& tape, const PolicyParams<T>& params, ad::Var embeddings,
                         const Environment& env, const MdpState& state,
                         const std::vector<Route>& candidates);

/// Unmasked halt logit (1 x 1).
template <typename T>
ad::Var halt_logit(ad::Tape<T>& tape, const PolicyParams<T>& params, ad::Var embeddings,
                   const Environment& env, const MdpState& state);

/// Predicted final reward (1 x 1). Depends on baseline weights only.
template <typename T>
ad::Var baseline_forward(ad::Tape<T>& tape, const PolicyParams<T>& params, const CityGraph& city,
                         int num_routes, double alpha);

/// Sum of log-probabilities of the recorded decisions. Steps must come from
/// rollouts in `env`; forced single-option steps are absent from trajectories.
template <typename T>
ad::Var trajectory_log_prob(ad::Tape<T>& tape, const PolicyParams<T>& params,
                            const Environment& env, const std::vector<TrajectoryStep>& steps);

/// Probability distribution over extension candidates (after pruning,
/// pruned-away candidates get probability zero).
std::vector<double> score_extensions(const PolicyParams<double>& params, const Environment& env,
                                     const MdpState& state, const std::vector<Route>& candidates);

/// Halt probability after masking by the legal halt actions.
double halt_probability(const PolicyParams<double>& params, const Environment& env,
                        const MdpState& state);

double baseline_predict(const PolicyParams<double>& params, const CityGraph& city, int num_routes,
                        double alpha);

/// The learned planner's policy. Node embeddings and their projections
/// through the extension head's first layer are cached per finished-route
/// set, so each extension step costs O(total candidate length). The cache
/// survives across episodes in the same environment; `params` must not
/// change while the policy is in use.
class NeuralPolicy final : public Policy {
 public:
  enum class Mode { kSample, kGreedy };

  NeuralPolicy(const PolicyParams<double>& params, Mode mode)
      : params_(&params), mode_(mode) {}

  void begin_episode() override {}
  Decision choose_extension(const Environment& env, const MdpState& state,
                            const std::vector<Route>& candidates, Rng& rng) override;
  Decision choose_halt(const Environment& env, const MdpState& state,
                       const std::vector<HaltChoice>& options, Rng& rng) override;

 private:
  struct Projections {
    ad::Matrix<double> embeddings;  // n x d
    Eigen::MatrixXd first, last, member, route_context;  // n x hidden
    Eigen::RowVectorXd global_context;                   // includes the bias
  };
  const Projections& projections(const Environment& env, const MdpState& state);
  void prepare_environment(const Environment& env);
  ad::Matrix<double> infer_backbone(const Environment& env, const MdpState& state);

  const PolicyParams<double>* params_;
  Mode mode_;
  std::uint64_t cached_env_ = 0;
  std::map<RouteNetwork, Projections> cache_;
  // Per layer: normalised edge features (link channel cleared) times the
  // layer's edge weights, and the row added for a linked pair.
  std::vector<ad::Matrix<double>> edge_base_;
  std::vector<Eigen::RowVectorXd> link_delta_;
};

void save_checkpoint(const PolicyParams<double>& params, const std::filesystem::path& path);
PolicyParams<double> load_checkpoint(const std::filesystem::path& path);

}  // namespace tndp
