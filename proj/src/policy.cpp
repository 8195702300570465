#include "tndp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

namespace tndp {

namespace {

constexpr int kPathFeatures = 4;     // stops / MAX, time / max T, demand covered, appends at end
constexpr int kContextScalars = 3;   // alpha, |r| / MAX, |R| / S
constexpr int kHaltScalars = 5;      // |r| / MAX, time / max T, alpha, |R| / S, demand covered
constexpr int kCheckpointVersion = 1;

template <typename T>
ad::Matrix<T> to_matrix(const Eigen::MatrixXd& m) {
  return m.cast<T>();
}

template <typename T>
ad::Var param(ad::Tape<T>& tape, const ParamSet<T>& set, int slot) {
  const auto idx = static_cast<std::size_t>(slot);
  return tape.parameter(set.values[idx], tape.recording() ? &set.grads[idx] : nullptr);
}

// Demand between ordered pairs that the extended route would serve directly
// but the current route does not, and the driving time the extension adds.
struct ExtensionSummary {
  double covered = 0.0;
  double added_time = 0.0;
  bool appends = true;
};

ExtensionSummary summarize_extension(const CityGraph& city, const Route& route,
                                     const Route& ext) {
  ExtensionSummary s;
  const auto& demand = city.demand();
  for (std::size_t a = 0; a < ext.size(); ++a) {
    for (std::size_t b = 0; b < ext.size(); ++b) {
      if (a != b) s.covered += demand(ext[a], ext[b]);
    }
    for (NodeId v : route) s.covered += demand(ext[a], v) + demand(v, ext[a]);
  }
  for (std::size_t k = 1; k < ext.size(); ++k) {
    s.added_time += city.street_times()(ext[k - 1], ext[k]);
  }
  if (!route.empty()) {
    if (city.has_edge(route.back(), ext.front())) {
      s.added_time += city.street_times()(route.back(), ext.front());
    } else {
      s.appends = false;
      s.added_time += city.street_times()(ext.back(), route.front());
    }
  }
  return s;
}

double route_one_way_time(const CityGraph& city, const Route& route) {
  double t = 0.0;
  for (std::size_t k = 1; k < route.size(); ++k) t += city.street_times()(route[k - 1], route[k]);
  return t;
}

double route_demand(const CityGraph& city, const Route& route) {
  double d = 0.0;
  for (NodeId u : route) {
    for (NodeId v : route) d += city.demand()(u, v);
  }
  return d;
}

template <typename T>
ad::Matrix<T> xavier(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  ad::Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

}  // namespace

FeatureTensor featurize(const CityGraph& city, const ShortestPathData& sp, const MdpState& state,
                        double alpha) {
  const int n = city.size();
  FeatureTensor f;
  f.alpha = alpha;
  f.node.resize(n, kNodeFeatures);
  Eigen::MatrixXd link = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd through = Eigen::VectorXd::Zero(n);
  for (const Route& r : state.finished_routes) {
    for (NodeId u : r) {
      through(u) += 1.0;
      for (NodeId v : r) {
        if (u != v) link(u, v) = 1.0;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    f.node(i, 0) = city.positions()[static_cast<std::size_t>(i)].x;
    f.node(i, 1) = city.positions()[static_cast<std::size_t>(i)].y;
    f.node(i, 2) = city.demand().row(i).sum();
    f.node(i, 3) = through(i);
  }
  f.edge.resize(static_cast<Eigen::Index>(n) * n, kEdgeFeatures);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * n + j;
      const bool street = city.has_edge(i, j);
      f.edge(row, 0) = city.demand()(i, j);
      f.edge(row, 1) = street ? 1.0 : 0.0;
      f.edge(row, 2) = street ? city.street_times()(i, j) : 0.0;
      f.edge(row, 3) = sp.time(i, j);
      f.edge(row, 4) = link(i, j);
      f.edge(row, 5) = i == j ? 1.0 : 0.0;
    }
  }
  f.on_current_route = Eigen::VectorXd::Zero(n);
  for (NodeId v : state.current_route) f.on_current_route(v) = 1.0;
  return f;
}

ChannelStats ChannelStats::fit(const std::vector<const Eigen::MatrixXd*>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("cannot fit statistics on an empty dataset");
  const Eigen::Index channels = blocks.front()->cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(channels);
  double count = 0.0;
  for (const auto* b : blocks) {
    if (b->cols() != channels) throw std::invalid_argument("channel count mismatch");
    sum += b->colwise().sum().transpose();
    count += static_cast<double>(b->rows());
  }
  if (count == 0.0) throw std::invalid_argument("cannot fit statistics on an empty dataset");
  ChannelStats s;
  s.mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(channels);
  for (const auto* b : blocks) {
    sq += (b->rowwise() - s.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  s.scale = (sq / count).array().sqrt();
  for (Eigen::Index c = 0; c < channels; ++c) {
    if (!(s.scale(c) > 1e-12 * std::max(1.0, std::abs(s.mean(c))))) s.scale(c) = 1.0;
  }
  return s;
}

Eigen::MatrixXd ChannelStats::apply(const Eigen::MatrixXd& rows) const {
  Eigen::MatrixXd out = rows.rowwise() - mean.transpose();
  return out.array().rowwise() / scale.transpose().array();
}

Eigen::RowVectorXd baseline_city_summary(const CityGraph& city, int num_routes) {
  Eigen::RowVectorXd s(kBaselineCityFeatures);
  double street_total = 0.0;
  for (const auto& e : city.edges()) street_total += e.time;
  s << city.size(), city.total_demand(),
      city.edges().empty() ? 0.0 : street_total / static_cast<double>(city.edges().size()),
      num_routes;
  return s;
}

NormalizationStats normalize_fit(const std::vector<FeatureTensor>& samples,
                                 const std::vector<Eigen::RowVectorXd>& baseline_rows) {
  std::vector<const Eigen::MatrixXd*> nodes;
  std::vector<const Eigen::MatrixXd*> edges;
  for (const auto& s : samples) {
    nodes.push_back(&s.node);
    edges.push_back(&s.edge);
  }
  std::vector<Eigen::MatrixXd> base_blocks;
  base_blocks.reserve(baseline_rows.size());
  for (const auto& r : baseline_rows) base_blocks.emplace_back(r);
  std::vector<const Eigen::MatrixXd*> base;
  for (const auto& b : base_blocks) base.push_back(&b);
  NormalizationStats stats;
  stats.node = ChannelStats::fit(nodes);
  stats.edge = ChannelStats::fit(edges);
  stats.baseline = ChannelStats::fit(base);
  return stats;
}

FeatureTensor normalize_apply(const NormalizationStats& stats, const FeatureTensor& features) {
  FeatureTensor out = features;
  out.node = stats.node.apply(features.node);
  out.edge = stats.edge.apply(features.edge);
  return out;
}

template <typename T>
PolicyParams<T>::PolicyParams(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
  if (config.embed_dim % config.num_heads != 0) {
    throw std::invalid_argument("embedding width must be divisible by the number of heads");
  }
  build_slots(true, seed);
  stats_.node = {Eigen::VectorXd::Zero(kNodeFeatures), Eigen::VectorXd::Ones(kNodeFeatures)};
  stats_.edge = {Eigen::VectorXd::Zero(kEdgeFeatures), Eigen::VectorXd::Ones(kEdgeFeatures)};
  stats_.baseline = {Eigen::VectorXd::Zero(kBaselineCityFeatures),
                     Eigen::VectorXd::Ones(kBaselineCityFeatures)};
}

template <typename T>
void PolicyParams<T>::build_slots(bool initialise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int d = config_.embed_dim;
  const int h = config_.head_hidden;
  const int hb = config_.baseline_hidden;
  auto weight = [&](ParamSet<T>& set, const std::string& name, int rows, int cols) {
    return set.add(name, initialise ? xavier<T>(rows, cols, rng) : ad::Matrix<T>(rows, cols));
  };
  auto bias = [&](ParamSet<T>& set, const std::string& name, int cols) {
    return set.add(name, ad::Matrix<T>::Zero(1, cols));
  };
  slots_.in_w = weight(policy_, "input.weight", kNodeFeatures, d);
  slots_.in_b = bias(policy_, "input.bias", d);
  slots_.layers.clear();
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.src = weight(policy_, p + "source", d, d);
    s.dst = weight(policy_, p + "target", d, d);
    s.value = weight(policy_, p + "value", d, d);
    s.edge = weight(policy_, p + "edge", kEdgeFeatures, d);
    s.attn = weight(policy_, p + "attention", d, config_.num_heads);
    s.out = weight(policy_, p + "output", d, d);
    s.out_b = bias(policy_, p + "output_bias", d);
    s.ff1 = weight(policy_, p + "ff1", d, 2 * d);
    s.ff1_b = bias(policy_, p + "ff1_bias", 2 * d);
    s.ff2 = weight(policy_, p + "ff2", 2 * d, d);
    s.ff2_b = bias(policy_, p + "ff2_bias", d);
    slots_.layers.push_back(s);
  }
  slots_.ext_w1 = weight(policy_, "extend.candidate", 3 * d + kPathFeatures, h);
  slots_.ext_ctx = weight(policy_, "extend.context", 2 * d, h);
  slots_.ext_scalar = weight(policy_, "extend.scalars", kContextScalars, h);
  slots_.ext_b1 = bias(policy_, "extend.bias", h);
  slots_.ext_w2 = weight(policy_, "extend.score", h, 1);
  slots_.ext_b2 = bias(policy_, "extend.score_bias", 1);
  slots_.halt_w1 = weight(policy_, "halt.hidden", 2 * d + kHaltScalars, h);
  slots_.halt_b1 = bias(policy_, "halt.bias", h);
  slots_.halt_w2 = weight(policy_, "halt.score", h, 1);
  slots_.halt_b2 = bias(policy_, "halt.score_bias", 1);
  slots_.base_w1 = weight(baseline_, "baseline.hidden1", 1 + kBaselineCityFeatures, hb);
  slots_.base_b1 = bias(baseline_, "baseline.bias1", hb);
  slots_.base_w2 = weight(baseline_, "baseline.hidden2", hb, hb);
  slots_.base_b2 = bias(baseline_, "baseline.bias2", hb);
  slots_.base_w3 = weight(baseline_, "baseline.output", hb, 1);
  slots_.base_b3 = bias(baseline_, "baseline.output_bias", 1);
}

template <typename T>
template <typename U>
PolicyParams<U> PolicyParams<T>::cast() const {
  PolicyParams<U> out;
  out.config_ = config_;
  out.stats_ = stats_;
  out.slots_ = typename PolicyParams<U>::Slots{};
  out.slots_.in_w = slots_.in_w;
  out.slots_.in_b = slots_.in_b;
  for (const auto& l : slots_.layers) {
    out.slots_.layers.push_back({l.src, l.dst, l.value, l.edge, l.attn, l.out, l.out_b, l.ff1,
                                 l.ff1_b, l.ff2, l.ff2_b});
  }
  out.slots_.ext_w1 = slots_.ext_w1;
  out.slots_.ext_ctx = slots_.ext_ctx;
  out.slots_.ext_scalar = slots_.ext_scalar;
  out.slots_.ext_b1 = slots_.ext_b1;
  out.slots_.ext_w2 = slots_.ext_w2;
  out.slots_.ext_b2 = slots_.ext_b2;
  out.slots_.halt_w1 = slots_.halt_w1;
  out.slots_.halt_b1 = slots_.halt_b1;
  out.slots_.halt_w2 = slots_.halt_w2;
  out.slots_.halt_b2 = slots_.halt_b2;
  out.slots_.base_w1 = slots_.base_w1;
  out.slots_.base_b1 = slots_.base_b1;
  out.slots_.base_w2 = slots_.base_w2;
  out.slots_.base_b2 = slots_.base_b2;
  out.slots_.base_w3 = slots_.base_w3;
  out.slots_.base_b3 = slots_.base_b3;
  auto copy = [](const ParamSet<T>& from, ParamSet<U>& to) {
    for (std::size_t k = 0; k < from.values.size(); ++k) {
      to.add(from.names[k], from.values[k].template cast<U>());
    }
  };
  copy(policy_, out.policy_);
  copy(baseline_, out.baseline_);
  return out;
}

std::vector<std::size_t> prune_candidates(const Environment& env, const MdpState& state,
                                          const std::vector<Route>& candidates,
                                          int max_candidates) {
  std::vector<std::size_t> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_candidates <= 0 || static_cast<int>(candidates.size()) <= max_candidates) return idx;
  std::vector<double> ratio(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto s = summarize_extension(env.city(), state.current_route, candidates[k]);
    ratio[k] = s.added_time > 0.0 ? s.covered / s.added_time : 0.0;
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return ratio[a] > ratio[b]; });
  idx.resize(static_cast<std::size_t>(max_candidates));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
ad::Var forward_backbone(ad::Tape<T>& tape, const PolicyParams<T>& params,
                         const FeatureTensor& normalized) {
  const auto& P = params.policy();
  const auto& s = params.slots();
  const T slope = static_cast<T>(params.config().attention_slope);
  const ad::Var nodes = tape.constant(to_matrix<T>(normalized.node));
  const ad::Var edges = tape.constant(to_matrix<T>(normalized.edge));
  ad::Var h = ad::add_row(tape, ad::matmul(tape, nodes, param(tape, P, s.in_w)),
                          param(tape, P, s.in_b));
  for (const auto& l : s.layers) {
    const ad::Var src = ad::matmul(tape, h, param(tape, P, l.src));
    const ad::Var dst = ad::matmul(tape, h, param(tape, P, l.dst));
    const ad::Var edge = ad::matmul(tape, edges, param(tape, P, l.edge));
    const ad::Var mixed = ad::leaky_relu(tape, ad::pair_sum(tape, src, dst, edge), slope);
    const ad::Var logits = ad::matmul(tape, mixed, param(tape, P, l.attn));
    const ad::Var values = ad::matmul(tape, h, param(tape, P, l.value));
    const ad::Var message = ad::attend(tape, logits, values, params.config().num_heads);
    const ad::Var update = ad::relu(
        tape, ad::add_row(tape, ad::matmul(tape, message, param(tape, P, l.out)),
                          param(tape, P, l.out_b)));
    h = ad::layer_norm(tape, ad::add(tape, h, update));
    const ad::Var hidden = ad::relu(
        tape,
        ad::add_row(tape, ad::matmul(tape, h, param(tape, P, l.ff1)), param(tape, P, l.ff1_b)));
    const ad::Var ff = ad::add_row(tape, ad::matmul(tape, hidden, param(tape, P, l.ff2)),
                                   param(tape, P, l.ff2_b));
    h = ad::layer_norm(tape, ad::add(tape, h, ff));
  }
  return h;
}

namespace {

// Per-candidate path features: stops / MAX, added one-way drive time
// / max T, directly served demand / mean row demand, appends at the end.
Eigen::MatrixXd path_features(const Environment& env, const MdpState& state,
                              const std::vector<Route>& candidates) {
  const CityGraph& city = env.city();
  const double max_time = env.shortest_paths().max_time();
  const double demand_unit = std::max(city.total_demand() / city.size(), 1e-12);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(candidates.size()), kPathFeatures);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Route& a = candidates[c];
    const auto summary = summarize_extension(city, state.current_route, a);
    const auto row = static_cast<Eigen::Index>(c);
    out(row, 0) = static_cast<double>(a.size()) / env.max_stops();
    out(row, 1) = summary.added_time / max_time;
    out(row, 2) = summary.covered / demand_unit;
    out(row, 3) = summary.appends ? 1.0 : 0.0;
  }
  return out;
}

Eigen::RowVectorXd context_scalars(const Environment& env, const MdpState& state) {
  Eigen::RowVectorXd s(kContextScalars);
  s << env.alpha(), static_cast<double>(state.current_route.size()) / env.max_stops(),
      static_cast<double>(state.finished_routes.size()) / env.num_routes();
  return s;
}

Eigen::RowVectorXd halt_scalars(const Environment& env, const MdpState& state) {
  const CityGraph& city = env.city();
  const Route& route = state.current_route;
  Eigen::RowVectorXd s(kHaltScalars);
  s << static_cast<double>(route.size()) / env.max_stops(),
      route_one_way_time(city, route) / env.shortest_paths().max_time(), env.alpha(),
      static_cast<double>(state.finished_routes.size()) / env.num_routes(),
      route_demand(city, route) / std::max(city.total_demand(), 1e-12);
  return s;
}

}  // namespace

template <typename T>
ad::Var extension_logits(ad::Tape<T>& tape, const PolicyParams<T>& params, ad::Var embeddings,
                         const Environment& env, const MdpState& state,
                         const std::vector<Route>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("no extension candidates to score");
  const auto& P = params.policy();
  const auto& s = params.slots();
  const Route& route = state.current_route;

  std::vector<int> firsts, lasts;
  std::vector<std::vector<int>> members;
  for (const Route& a : candidates) {
    firsts.push_back(a.front());
    lasts.push_back(a.back());
    members.emplace_back(a.begin(), a.end());
  }
  const ad::Var candidate_input = ad::concat_cols(
      tape, {ad::gather_rows(tape, embeddings, firsts), ad::gather_rows(tape, embeddings, lasts),
             ad::group_mean_rows(tape, embeddings, members),
             tape.constant(to_matrix<T>(path_features(env, state, candidates)))});

  const ad::Var context = ad::concat_cols(
      tape, {ad::group_mean_rows(tape, embeddings, {std::vector<int>(route.begin(), route.end())}),
             ad::mean_rows(tape, embeddings)});
  const ad::Var scalars =
      tape.constant(to_matrix<T>(Eigen::MatrixXd(context_scalars(env, state))));
  const ad::Var context_bias = ad::add(
      tape,
      ad::add(tape, ad::matmul(tape, context, param(tape, P, s.ext_ctx)),
              ad::matmul(tape, scalars, param(tape, P, s.ext_scalar))),
      param(tape, P, s.ext_b1));
  const ad::Var hidden = ad::relu(
      tape, ad::add_row(tape, ad::matmul(tape, candidate_input, param(tape, P, s.ext_w1)),
                        context_bias));
  return ad::add_row(tape, ad::matmul(tape, hidden, param(tape, P, s.ext_w2)),
                     param(tape, P, s.ext_b2));
}

template <typename T>
ad::Var halt_logit(ad::Tape<T>& tape, const PolicyParams<T>& params, ad::Var embeddings,
                   const Environment& env, const MdpState& state) {
  const auto& P = params.policy();
  const auto& s = params.slots();
  const Route& route = state.current_route;
  const ad::Var input = ad::concat_cols(
      tape,
      {ad::mean_rows(tape, embeddings),
       ad::group_mean_rows(tape, embeddings, {std::vector<int>(route.begin(), route.end())}),
       tape.constant(to_matrix<T>(Eigen::MatrixXd(halt_scalars(env, state))))});
  const ad::Var hidden = ad::relu(
      tape, ad::add_row(tape, ad::matmul(tape, input, param(tape, P, s.halt_w1)),
                        param(tape, P, s.halt_b1)));
  return ad::add_row(tape, ad::matmul(tape, hidden, param(tape, P, s.halt_w2)),
                     param(tape, P, s.halt_b2));
}

template <typename T>
ad::Var baseline_forward(ad::Tape<T>& tape, const PolicyParams<T>& params, const CityGraph& city,
                         int num_routes, double alpha) {
  const auto& B = params.baseline();
  const auto& s = params.slots();
  const Eigen::MatrixXd summary =
      params.stats().baseline.apply(Eigen::MatrixXd(baseline_city_summary(city, num_routes)));
  ad::Matrix<T> input(1, 1 + kBaselineCityFeatures);
  input(0, 0) = static_cast<T>(alpha);
  for (int c = 0; c < kBaselineCityFeatures; ++c) input(0, 1 + c) = static_cast<T>(summary(0, c));
  ad::Var h = ad::relu(
      tape, ad::add_row(tape, ad::matmul(tape, tape.constant(input), param(tape, B, s.base_w1)),
                        param(tape, B, s.base_b1)));
  h = ad::relu(tape, ad::add_row(tape, ad::matmul(tape, h, param(tape, B, s.base_w2)),
                                 param(tape, B, s.base_b2)));
  return ad::add_row(tape, ad::matmul(tape, h, param(tape, B, s.base_w3)),
                     param(tape, B, s.base_b3));
}

template <typename T>
ad::Var trajectory_log_prob(ad::Tape<T>& tape, const PolicyParams<T>& params,
                            const Environment& env, const std::vector<TrajectoryStep>& steps) {
  std::vector<ad::Var> terms;
  const RouteNetwork* embedded_for = nullptr;
  ad::Var embeddings;
  for (const auto& step : steps) {
    const MdpState& state = step.state;
    if (embedded_for == nullptr || *embedded_for != state.finished_routes) {
      const FeatureTensor features = normalize_apply(
          params.stats(), featurize(env.city(), env.shortest_paths(), state, env.alpha()));
      embeddings = forward_backbone(tape, params, features);
      embedded_for = &state.finished_routes;
    }
    if (state.extend_mode) {
      const auto candidates = env.extend_actions(state);
      const auto kept =
          prune_candidates(env, state, candidates, params.config().max_candidates);
      const auto pos = std::find(kept.begin(), kept.end(), step.chosen);
      if (pos == kept.end()) throw std::logic_error("recorded extension was pruned");
      if (kept.size() < 2) continue;
      std::vector<Route> subset;
      subset.reserve(kept.size());
      for (std::size_t k : kept) subset.push_back(candidates[k]);
      const ad::Var logits = extension_logits(tape, params, embeddings, env, state, subset);
      terms.push_back(
          ad::log_softmax_pick(tape, logits, static_cast<std::size_t>(pos - kept.begin())));
    } else {
      const auto options = env.halt_actions(state);
      if (options.size() < 2) continue;
      const ad::Var logit = halt_logit(tape, params, embeddings, env, state);
      const bool halt = options[step.chosen] == HaltChoice::kHalt;
      terms.push_back(ad::log_sigmoid(tape, logit, halt ? T(1) : T(-1)));
    }
  }
  return ad::sum_scalars(tape, terms);
}

std::vector<double> score_extensions(const PolicyParams<double>& params, const Environment& env,
                                     const MdpState& state, const std::vector<Route>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("no extension candidates to score");
  ad::Tape<double> tape(false);
  const ad::Var y = forward_backbone(
      tape, params,
      normalize_apply(params.stats(),
                      featurize(env.city(), env.shortest_paths(), state, env.alpha())));
  const auto kept = prune_candidates(env, state, candidates, params.config().max_candidates);
  std::vector<Route> subset;
  for (std::size_t k : kept) subset.push_back(candidates[k]);
  const auto& logits = tape.value(extension_logits(tape, params, y, env, state, subset));
  const double m = logits.maxCoeff();
  std::vector<double> probs(candidates.size(), 0.0);
  double z = 0.0;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    probs[kept[k]] = std::exp(logits(static_cast<Eigen::Index>(k), 0) - m);
    z += probs[kept[k]];
  }
  for (double& p : probs) p /= z;
  return probs;
}

double halt_probability(const PolicyParams<double>& params, const Environment& env,
                        const MdpState& state) {
  const auto options = env.halt_actions(state);
  if (options.size() == 1) return options.front() == HaltChoice::kHalt ? 1.0 : 0.0;
  ad::Tape<double> tape(false);
  const ad::Var y = forward_backbone(
      tape, params,
      normalize_apply(params.stats(),
                      featurize(env.city(), env.shortest_paths(), state, env.alpha())));
  const double x = tape.value(halt_logit(tape, params, y, env, state))(0, 0);
  return 1.0 / (1.0 + std::exp(-x));
}

double baseline_predict(const PolicyParams<double>& params, const CityGraph& city, int num_routes,
                        double alpha) {
  ad::Tape<double> tape(false);
  return tape.value(baseline_forward(tape, params, city, num_routes, alpha))(0, 0);
}

namespace {

using RowMatrix = ad::Matrix<double>;

void layer_norm_rows(RowMatrix& x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    x.row(r) = (x.row(r).array() - mean) / std::sqrt(var + 1e-5);
  }
}

}  // namespace

void NeuralPolicy::prepare_environment(const Environment& env) {
  const CityGraph& city = env.city();
  const auto& P = params_->policy();
  const auto& s = params_->slots();
  const ChannelStats& es = params_->stats().edge;
  // Edge features with the transit-link channel cleared; links enter as a
  // rank-one correction per linked pair.
  FeatureTensor raw = featurize(city, env.shortest_paths(), MdpState{}, env.alpha());
  const Eigen::MatrixXd normalized = es.apply(raw.edge);
  edge_base_.clear();
  link_delta_.clear();
  for (const auto& l : s.layers) {
    const Eigen::MatrixXd w = P.values[static_cast<std::size_t>(l.edge)];
    edge_base_.push_back(normalized * w);
    link_delta_.push_back(w.row(kLinkChannel) / es.scale(kLinkChannel));
  }
}

ad::Matrix<double> NeuralPolicy::infer_backbone(const Environment& env, const MdpState& state) {
  const CityGraph& city = env.city();
  const int n = city.size();
  const auto& P = params_->policy();
  const auto& s = params_->slots();
  const auto& cfg = params_->config();
  const double slope = cfg.attention_slope;
  const int heads = cfg.num_heads;
  auto value = [&](int slot) -> const RowMatrix& { return P.values[static_cast<std::size_t>(slot)]; };

  std::vector<char> linked(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
  Eigen::MatrixXd node(n, kNodeFeatures);
  node.col(3).setZero();
  for (const Route& r : state.finished_routes) {
    for (NodeId u : r) {
      node(u, 3) += 1.0;
      for (NodeId v : r) {
        if (u != v) linked[static_cast<std::size_t>(u) * static_cast<std::size_t>(n) +
                           static_cast<std::size_t>(v)] = 1;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    node(i, 0) = city.positions()[static_cast<std::size_t>(i)].x;
    node(i, 1) = city.positions()[static_cast<std::size_t>(i)].y;
    node(i, 2) = city.demand().row(i).sum();
  }
  RowMatrix h = params_->stats().node.apply(node) * value(s.in_w);
  h.rowwise() += value(s.in_b).row(0);

  const Eigen::Index d = h.cols();
  const Eigen::Index dh = d / heads;
  RowMatrix z;
  RowMatrix weights(n, heads);
  for (std::size_t li = 0; li < s.layers.size(); ++li) {
    const auto& l = s.layers[li];
    const RowMatrix src = h * value(l.src);
    const RowMatrix dst = h * value(l.dst);
    const RowMatrix vals = h * value(l.value);
    z = edge_base_[li];
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const Eigen::Index row = static_cast<Eigen::Index>(i) * n + j;
        z.row(row) += src.row(i) + dst.row(j);
        if (linked[static_cast<std::size_t>(row)]) z.row(row) += link_delta_[li];
      }
    }
    z = z.cwiseMax(slope * z);
    const RowMatrix logits = z * value(l.attn);
    RowMatrix message = RowMatrix::Zero(n, d);
    for (int i = 0; i < n; ++i) {
      auto block = logits.middleRows(static_cast<Eigen::Index>(i) * n, n);
      weights = (block.rowwise() - block.colwise().maxCoeff()).array().exp();
      weights.array().rowwise() /= weights.colwise().sum().array();
      for (int hd = 0; hd < heads; ++hd) {
        message.block(i, hd * dh, 1, dh) =
            weights.col(hd).transpose() * vals.middleCols(hd * dh, dh);
      }
    }
    RowMatrix update = message * value(l.out);
    update.rowwise() += value(l.out_b).row(0);
    h += update.cwiseMax(0.0);
    layer_norm_rows(h);
    RowMatrix hidden = h * value(l.ff1);
    hidden.rowwise() += value(l.ff1_b).row(0);
    RowMatrix ff = hidden.cwiseMax(0.0) * value(l.ff2);
    ff.rowwise() += value(l.ff2_b).row(0);
    h += ff;
    layer_norm_rows(h);
  }
  return h;
}

const NeuralPolicy::Projections& NeuralPolicy::projections(const Environment& env,
                                                            const MdpState& state) {
  constexpr std::size_t kMaxCachedSets = 512;
  if (cached_env_ != env.id()) {
    cache_.clear();
    prepare_environment(env);
    cached_env_ = env.id();
  }
  if (cache_.size() >= kMaxCachedSets) cache_.clear();
  if (auto it = cache_.find(state.finished_routes); it != cache_.end()) return it->second;
  Projections& entry = cache_[state.finished_routes];
  const auto& P = params_->policy();
  const auto& s = params_->slots();
  const Eigen::Index d = params_->config().embed_dim;
  entry.embeddings = infer_backbone(env, state);
  const Eigen::MatrixXd Y = entry.embeddings;
  const Eigen::MatrixXd w1 = P.values[static_cast<std::size_t>(s.ext_w1)];
  const Eigen::MatrixXd ctx = P.values[static_cast<std::size_t>(s.ext_ctx)];
  entry.first = Y * w1.topRows(d);
  entry.last = Y * w1.middleRows(d, d);
  entry.member = Y * w1.middleRows(2 * d, d);
  entry.route_context = Y * ctx.topRows(d);
  entry.global_context = Y.colwise().mean() * ctx.bottomRows(d) +
                          Eigen::MatrixXd(P.values[static_cast<std::size_t>(s.ext_b1)]);
  return entry;
}

Decision NeuralPolicy::choose_extension(const Environment& env, const MdpState& state,
                                        const std::vector<Route>& candidates, Rng& rng) {
  const auto kept = prune_candidates(env, state, candidates, params_->config().max_candidates);
  if (kept.size() == 1) return {kept.front(), 0.0};
  const Projections& proj = projections(env, state);
  const auto& P = params_->policy();
  const auto& s = params_->slots();
  const Eigen::MatrixXd w1 = P.values[static_cast<std::size_t>(s.ext_w1)];
  const Eigen::VectorXd w2 =
      Eigen::MatrixXd(P.values[static_cast<std::size_t>(s.ext_w2)]).col(0);
  const double b2 = P.values[static_cast<std::size_t>(s.ext_b2)](0, 0);

  Eigen::RowVectorXd context = proj.global_context +
                               context_scalars(env, state) *
                                   Eigen::MatrixXd(P.values[static_cast<std::size_t>(s.ext_scalar)]);
  const Route& route = state.current_route;
  if (!route.empty()) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(context.size());
    for (NodeId v : route) acc += proj.route_context.row(v);
    context += acc / static_cast<double>(route.size());
  }

  std::vector<Route> subset;
  subset.reserve(kept.size());
  for (std::size_t k : kept) subset.push_back(candidates[k]);
  const Eigen::MatrixXd feats = path_features(env, state, subset) * w1.bottomRows(kPathFeatures);
  std::vector<double> logits(kept.size());
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const Route& a = subset[k];
    Eigen::RowVectorXd members = Eigen::RowVectorXd::Zero(context.size());
    for (NodeId v : a) members += proj.member.row(v);
    const Eigen::RowVectorXd pre = proj.first.row(a.front()) + proj.last.row(a.back()) +
                                   members / static_cast<double>(a.size()) +
                                   feats.row(static_cast<Eigen::Index>(k)) + context;
    logits[k] = pre.cwiseMax(0.0).dot(w2) + b2;
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> weights(kept.size());
  double z = 0.0;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    weights[k] = std::exp(logits[k] - m);
    z += weights[k];
  }
  std::size_t pick = 0;
  if (mode_ == Mode::kGreedy) {
    pick = static_cast<std::size_t>(std::max_element(weights.begin(), weights.end()) -
                                    weights.begin());
  } else {
    std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
    pick = dist(rng);
  }
  return {kept[pick], std::log(weights[pick] / z)};
}

Decision NeuralPolicy::choose_halt(const Environment& env, const MdpState& state,
                                   const std::vector<HaltChoice>& options, Rng& rng) {
  ad::Tape<double> tape(false);
  const ad::Var y = tape.constant(projections(env, state).embeddings);
  const double x = tape.value(halt_logit(tape, *params_, y, env, state))(0, 0);
  const double p_halt = 1.0 / (1.0 + std::exp(-x));
  bool halt = false;
  if (mode_ == Mode::kGreedy) {
    halt = p_halt >= 0.5;
  } else {
    halt = std::bernoulli_distribution(p_halt)(rng);
  }
  const HaltChoice want = halt ? HaltChoice::kHalt : HaltChoice::kContinue;
  const auto index =
      static_cast<std::size_t>(std::find(options.begin(), options.end(), want) - options.begin());
  const double log_prob = halt ? (x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)))
                               : (x <= 0 ? -std::log1p(std::exp(x)) : -x - std::log1p(std::exp(-x)));
  return {index, log_prob};
}

namespace {

nlohmann::json stats_to_json(const ChannelStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"scale", std::vector<double>(s.scale.data(), s.scale.data() + s.scale.size())}};
}

ChannelStats stats_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto scale = j.at("scale").get<std::vector<double>>();
  if (mean.size() != scale.size()) throw std::runtime_error("checkpoint: stats size mismatch");
  ChannelStats s;
  s.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  s.scale =
      Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  return s;
}

nlohmann::json params_to_json(const ParamSet<double>& set) {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t k = 0; k < set.values.size(); ++k) {
    const auto& m = set.values[k];
    out[set.names[k]] = {{"rows", m.rows()},
                         {"cols", m.cols()},
                         {"data", std::vector<double>(m.data(), m.data() + m.size())}};
  }
  return out;
}

void params_from_json(const nlohmann::json& j, ParamSet<double>& set) {
  for (std::size_t k = 0; k < set.values.size(); ++k) {
    const auto& entry = j.at(set.names[k]);
    auto& m = set.values[k];
    if (entry.at("rows").get<Eigen::Index>() != m.rows() ||
        entry.at("cols").get<Eigen::Index>() != m.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + set.names[k]);
    }
    const auto data = entry.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != m.size()) {
      throw std::runtime_error("checkpoint: size mismatch for " + set.names[k]);
    }
    std::copy(data.begin(), data.end(), m.data());
  }
}

}  // namespace

void save_checkpoint(const PolicyParams<double>& params, const std::filesystem::path& path) {
  const auto& c = params.config();
  nlohmann::json j;
  j["format"] = "tndp-policy";
  j["version"] = kCheckpointVersion;
  j["config"] = {{"embed_dim", c.embed_dim},
                 {"num_layers", c.num_layers},
                 {"num_heads", c.num_heads},
                 {"head_hidden", c.head_hidden},
                 {"baseline_hidden", c.baseline_hidden},
                 {"max_candidates", c.max_candidates},
                 {"attention_slope", c.attention_slope}};
  j["normalization"] = {{"node", stats_to_json(params.stats().node)},
                        {"edge", stats_to_json(params.stats().edge)},
                        {"baseline", stats_to_json(params.stats().baseline)}};
  j["policy"] = params_to_json(params.policy());
  j["baseline"] = params_to_json(params.baseline());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

PolicyParams<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("format", "") != "tndp-policy") {
    throw std::runtime_error(path.string() + " is not a policy checkpoint");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  PolicyConfig c;
  const auto& jc = j.at("config");
  c.embed_dim = jc.at("embed_dim");
  c.num_layers = jc.at("num_layers");
  c.num_heads = jc.at("num_heads");
  c.head_hidden = jc.at("head_hidden");
  c.baseline_hidden = jc.at("baseline_hidden");
  c.max_candidates = jc.at("max_candidates");
  c.attention_slope = jc.at("attention_slope");
  PolicyParams<double> params(c, 0);
  params_from_json(j.at("policy"), params.policy());
  params_from_json(j.at("baseline"), params.baseline());
  const auto& jn = j.at("normalization");
  params.stats().node = stats_from_json(jn.at("node"));
  params.stats().edge = stats_from_json(jn.at("edge"));
  params.stats().baseline = stats_from_json(jn.at("baseline"));
  return params;
}

template class PolicyParams<double>;
template class PolicyParams<long double>;
template PolicyParams<long double> PolicyParams<double>::cast<long double>() const;
template PolicyParams<double> PolicyParams<long double>::cast<double>() const;

#define TNDP_INSTANTIATE(T)                                                                     \
  template ad::Var forward_backbone<T>(ad::Tape<T>&, const PolicyParams<T>&,                    \
                                       const FeatureTensor&);                                   \
  template ad::Var extension_logits<T>(ad::Tape<T>&, const PolicyParams<T>&, ad::Var,           \
                                       const Environment&, const MdpState&,                     \
                                       const std::vector<Route>&);                              \
  template ad::Var halt_logit<T>(ad::Tape<T>&, const PolicyParams<T>&, ad::Var,                 \
                                 const Environment&, const MdpState&);                          \
  template ad::Var baseline_forward<T>(ad::Tape<T>&, const PolicyParams<T>&, const CityGraph&,  \
                                       int, double);                                            \
  template ad::Var trajectory_log_prob<T>(ad::Tape<T>&, const PolicyParams<T>&,                 \
                                          const Environment&,                                   \
                                          const std::vector<TrajectoryStep>&);

TNDP_INSTANTIATE(double)
TNDP_INSTANTIATE(long double)
#undef TNDP_INSTANTIATE

}  // namespace tndp
