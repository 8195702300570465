#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "support.hpp"
#include "tndp/policy.hpp"

using namespace tndp;

using tndp::testing::geometric_city;

namespace {

struct World {
  World(CityGraph c, int S, int MIN, int MAX, double alpha)
      : city(std::move(c)),
        sp(all_pairs_shortest_paths(city)),
        env(city, sp, CostModel(city, sp, {alpha, 5.0, 300.0}, S, MIN, MAX)) {}
  CityGraph city;
  ShortestPathData sp;
  Environment env;
};

PolicyConfig tiny_config() {
  PolicyConfig c;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.head_hidden = 8;
  c.baseline_hidden = 6;
  return c;
}

void fit_stats(PolicyParams<double>& params, const World& w) {
  const FeatureTensor f = featurize(w.city, w.sp, w.env.initial_state(), w.env.alpha());
  params.stats() = normalize_fit({f}, {baseline_city_summary(w.city, w.env.num_routes())});
}

double relative_error(long double a, long double b) {
  const long double scale = std::max({std::abs(a), std::abs(b), 1e-6L});
  return static_cast<double>(std::abs(a - b) / scale);
}

}  // namespace

TEST(Normalization, FitsMeanAndPopulationScale) {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 1, 5, 3, 5;
  b << 5, 5, 7, 5;
  const auto s = ChannelStats::fit({&a, &b});
  EXPECT_DOUBLE_EQ(s.mean(0), 4.0);
  EXPECT_DOUBLE_EQ(s.scale(0), std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(s.mean(1), 5.0);
  EXPECT_DOUBLE_EQ(s.scale(1), 1.0);
  const Eigen::MatrixXd z = s.apply(a);
  EXPECT_DOUBLE_EQ(z(0, 0), -3.0 / std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(z(0, 1), 0.0);
  EXPECT_THROW(ChannelStats::fit({}), std::invalid_argument);
}

TEST(Features, Shapes) {
  std::mt19937_64 rng(1);
  World w(geometric_city(6, rng), 2, 2, 4, 0.3);
  MdpState s = w.env.initial_state({{0, 1}});
  const auto f = featurize(w.city, w.sp, s, 0.3);
  EXPECT_EQ(f.node.rows(), 6);
  EXPECT_EQ(f.node.cols(), kNodeFeatures);
  EXPECT_EQ(f.edge.rows(), 36);
  EXPECT_EQ(f.edge.cols(), kEdgeFeatures);
  EXPECT_EQ(f.node(0, 3), 1.0);
  EXPECT_EQ(f.edge(0 * 6 + 1, 4), 1.0);
  EXPECT_EQ(f.edge(2 * 6 + 2, 5), 1.0);
  EXPECT_EQ(f.alpha, 0.3);
}

TEST(Policy, DistributionsAreProper) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    World w(geometric_city(9, rng), 3, 2, 5, 0.5);
    PolicyConfig config = tiny_config();
    config.max_candidates = 10;
    PolicyParams<double> params(config, 100 + trial);
    fit_stats(params, w);
    NeuralPolicy policy(params, NeuralPolicy::Mode::kSample);
    Rng roll(trial);
    const auto out = rollout(policy, w.env, {}, roll, {true});
    for (const auto& step : out.trajectory) {
      if (step.state.extend_mode) {
        const auto candidates = w.env.extend_actions(step.state);
        const auto p = score_extensions(params, w.env, step.state, candidates);
        ASSERT_EQ(p.size(), candidates.size());
        double sum = 0.0;
        int nonzero = 0;
        for (double x : p) {
          EXPECT_GE(x, 0.0);
          sum += x;
          nonzero += x > 0.0;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_LE(nonzero, 10);
        EXPECT_GT(p[step.chosen], 0.0);
      } else {
        const double h = halt_probability(params, w.env, step.state);
        EXPECT_GT(h, 0.0);
        EXPECT_LT(h, 1.0);
      }
    }
  }
}

TEST(Policy, HaltMaskIsExact) {
  std::mt19937_64 rng(3);
  World w(geometric_city(7, rng), 2, 3, 4, 0.5);
  PolicyParams<double> params(tiny_config(), 7);
  MdpState s;
  s.extend_mode = false;
  s.current_route = {w.city.edges().front().from, w.city.edges().front().to};
  EXPECT_EQ(halt_probability(params, w.env, s), 0.0);
  s.dead_end = true;
  EXPECT_EQ(halt_probability(params, w.env, s), 1.0);
}

TEST(Policy, PruningKeepsBestDemandPerSecond) {
  std::mt19937_64 rng(4);
  World w(geometric_city(12, rng), 3, 2, 6, 0.5);
  const MdpState s = w.env.initial_state();
  const auto candidates = w.env.extend_actions(s);
  ASSERT_GT(candidates.size(), 40u);
  const auto kept = prune_candidates(w.env, s, candidates, 40);
  ASSERT_EQ(kept.size(), 40u);
  EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
  auto ratio = [&](const Route& a) {
    double d = 0.0, t = 0.0;
    for (NodeId u : a) {
      for (NodeId v : a) d += w.city.demand()(u, v);
    }
    for (std::size_t k = 1; k < a.size(); ++k) t += *w.city.edge_time(a[k - 1], a[k]);
    return d / t;
  };
  double worst_kept = 1e300;
  for (std::size_t k : kept) worst_kept = std::min(worst_kept, ratio(candidates[k]));
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (std::find(kept.begin(), kept.end(), k) == kept.end()) {
      EXPECT_LE(ratio(candidates[k]), worst_kept + 1e-12);
    }
  }
  EXPECT_EQ(prune_candidates(w.env, s, candidates, 0).size(), candidates.size());
}

TEST(Policy, RelabelingNodesPermutesDistribution) {
  std::mt19937_64 rng(5);
  const CityGraph city = geometric_city(7, rng);
  const int n = city.size();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Point> pos(n);
  std::vector<StreetEdge> edges;
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i) {
    pos[perm[i]] = city.positions()[i];
    for (int j = 0; j < n; ++j) d(perm[i], perm[j]) = city.demand()(i, j);
  }
  for (const auto& e : city.edges()) edges.push_back({perm[e.from], perm[e.to], e.time});
  World a(city, 3, 2, 5, 0.4);
  World b(CityGraph(pos, edges, d), 3, 2, 5, 0.4);
  PolicyConfig config = tiny_config();
  config.max_candidates = 0;
  PolicyParams<double> params(config, 9);
  fit_stats(params, a);

  auto relabel = [&](const Route& r) {
    Route out;
    for (NodeId v : r) out.push_back(perm[v]);
    return out;
  };
  MdpState sa = a.env.initial_state({a.sp.path(0, 3)});
  sa.current_route = a.sp.path(5, 6);
  MdpState sb = b.env.initial_state({relabel(sa.finished_routes[0])});
  sb.current_route = relabel(sa.current_route);
  const auto ca = a.env.extend_actions(sa);
  const auto cb = b.env.extend_actions(sb);
  ASSERT_EQ(ca.size(), cb.size());
  const auto pa = score_extensions(params, a.env, sa, ca);
  const auto pb = score_extensions(params, b.env, sb, cb);
  for (std::size_t k = 0; k < ca.size(); ++k) {
    const auto it = std::find(cb.begin(), cb.end(), relabel(ca[k]));
    ASSERT_NE(it, cb.end());
    EXPECT_NEAR(pa[k], pb[static_cast<std::size_t>(it - cb.begin())], 1e-10);
  }
  sa.extend_mode = sb.extend_mode = false;
  EXPECT_NEAR(halt_probability(params, a.env, sa), halt_probability(params, b.env, sb), 1e-10);
}

TEST(Policy, GreedyIsDeterministic) {
  std::mt19937_64 rng(6);
  World w(geometric_city(10, rng), 3, 2, 5, 0.5);
  PolicyParams<double> params(tiny_config(), 11);
  fit_stats(params, w);
  NeuralPolicy policy(params, NeuralPolicy::Mode::kGreedy);
  Rng r1(1), r2(2);
  EXPECT_EQ(rollout(policy, w.env, {}, r1).network, rollout(policy, w.env, {}, r2).network);
}

TEST(Policy, RolloutLogProbsMatchReplay) {
  std::mt19937_64 rng(7);
  World w(geometric_city(9, rng), 3, 2, 5, 0.7);
  PolicyConfig config = tiny_config();
  config.max_candidates = 12;
  PolicyParams<double> params(config, 13);
  fit_stats(params, w);
  NeuralPolicy policy(params, NeuralPolicy::Mode::kSample);
  Rng roll(5);
  const auto out = rollout(policy, w.env, {}, roll, {true});
  double sum = 0.0;
  for (double lp : out.log_probs) sum += lp;
  ad::Tape<double> tape(false);
  const double replay = tape.value(trajectory_log_prob(tape, params, w.env, out.trajectory))(0, 0);
  EXPECT_NEAR(sum, replay, 1e-9);
}

TEST(Policy, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  World w(geometric_city(6, rng), 2, 2, 4, 0.6);
  PolicyParams<double> seed_params(tiny_config(), 21);
  fit_stats(seed_params, w);
  NeuralPolicy policy(seed_params, NeuralPolicy::Mode::kSample);
  Rng roll(3);
  const auto traj = rollout(policy, w.env, {}, roll, {true}).trajectory;
  ASSERT_FALSE(traj.empty());

  auto params = seed_params.cast<long double>();
  auto log_prob = [&]() {
    ad::Tape<long double> tape(false);
    return tape.value(trajectory_log_prob(tape, params, w.env, traj))(0, 0);
  };
  params.policy().zero_grad();
  {
    ad::Tape<long double> tape(true);
    tape.backward(trajectory_log_prob(tape, params, w.env, traj));
  }
  const long double h = 1e-7L;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.policy().values.size(); ++k) {
    auto& value = params.policy().values[k];
    for (Eigen::Index e = 0; e < value.size(); e += 3) {
      const long double saved = value.data()[e];
      value.data()[e] = saved + h;
      const long double up = log_prob();
      value.data()[e] = saved - h;
      const long double down = log_prob();
      value.data()[e] = saved;
      const long double numeric = (up - down) / (2 * h);
      worst = std::max(worst, relative_error(params.policy().grads[k].data()[e], numeric));
    }
  }
  EXPECT_LT(worst, 1e-4);

  auto baseline = [&]() {
    ad::Tape<long double> tape(false);
    return tape.value(baseline_forward(tape, params, w.city, 2, 0.6))(0, 0);
  };
  params.baseline().zero_grad();
  {
    ad::Tape<long double> tape(true);
    tape.backward(baseline_forward(tape, params, w.city, 2, 0.6));
  }
  worst = 0.0;
  for (std::size_t k = 0; k < params.baseline().values.size(); ++k) {
    auto& value = params.baseline().values[k];
    for (Eigen::Index e = 0; e < value.size(); ++e) {
      const long double saved = value.data()[e];
      value.data()[e] = saved + h;
      const long double up = baseline();
      value.data()[e] = saved - h;
      const long double down = baseline();
      value.data()[e] = saved;
      worst = std::max(worst,
                       relative_error(params.baseline().grads[k].data()[e], (up - down) / (2 * h)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Policy, BaselineTouchesOnlyBaselineWeights) {
  std::mt19937_64 rng(9);
  World w(geometric_city(6, rng), 2, 2, 4, 0.6);
  PolicyParams<double> params(tiny_config(), 4);
  params.policy().zero_grad();
  params.baseline().zero_grad();
  ad::Tape<double> tape(true);
  tape.backward(baseline_forward(tape, params, w.city, 2, 0.2));
  for (const auto& g : params.policy().grads) EXPECT_EQ(g.norm(), 0.0);
  double total = 0.0;
  for (const auto& g : params.baseline().grads) total += g.norm();
  EXPECT_GT(total, 0.0);
  EXPECT_EQ(baseline_predict(params, w.city, 2, 0.2), baseline_predict(params, w.city, 2, 0.2));
}

TEST(Checkpoint, RoundTrip) {
  std::mt19937_64 rng(10);
  World w(geometric_city(7, rng), 2, 2, 4, 0.5);
  PolicyParams<double> params(tiny_config(), 77);
  fit_stats(params, w);
  const auto path = std::filesystem::temp_directory_path() / "tndp_checkpoint_test.json";
  save_checkpoint(params, path);
  const auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  ASSERT_EQ(loaded.policy().values.size(), params.policy().values.size());
  for (std::size_t k = 0; k < params.policy().values.size(); ++k) {
    EXPECT_EQ(loaded.policy().values[k], params.policy().values[k]);
  }
  for (std::size_t k = 0; k < params.baseline().values.size(); ++k) {
    EXPECT_EQ(loaded.baseline().values[k], params.baseline().values[k]);
  }
  const MdpState s = w.env.initial_state();
  const auto c = w.env.extend_actions(s);
  EXPECT_EQ(score_extensions(params, w.env, s, c), score_extensions(loaded, w.env, s, c));
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), std::runtime_error);
}
