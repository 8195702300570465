#include "tndp/bench.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <tuple>

#include "tndp/bco.hpp"
#include "tndp/io.hpp"
#include "tndp/parallel.hpp"
#include "tndp/policy.hpp"
#include "tndp/trainer.hpp"

#ifndef TNDP_SOURCE_DATA_DIR
#define TNDP_SOURCE_DATA_DIR "data"
#endif

namespace tndp {

const std::vector<InstanceInfo>& benchmark_registry() {
  static const std::vector<InstanceInfo> registry{
      {"Mandl", 15, 20, 6, 2, 8, 352.7},
      {"Mumford0", 30, 90, 12, 2, 15, 354.2},
      {"Mumford1", 70, 210, 15, 10, 30, 858.5},
      {"Mumford2", 110, 385, 56, 10, 22, 1394.3},
      {"Mumford3", 127, 425, 60, 12, 25, 1703.2},
  };
  return registry;
}

const InstanceInfo* find_instance_info(const std::string& name) {
  for (const auto& info : benchmark_registry()) {
    if (info.name == name) return &info;
  }
  return nullptr;
}

InstanceFiles instance_files(const std::filesystem::path& dir, const std::string& name) {
  InstanceFiles f;
  f.travel_times = dir / (name + "TravelTimes.txt");
  f.demand = dir / (name + "Demand.txt");
  const auto coords = dir / (name + "Coords.txt");
  if (std::filesystem::exists(coords)) f.coords = coords;
  return f;
}

std::vector<Point> mds_positions(const Eigen::MatrixXd& drive_times, double speed) {
  const Eigen::Index n = drive_times.rows();
  const Eigen::MatrixXd d2 = (drive_times * speed).array().square().matrix();
  const Eigen::MatrixXd centre =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd gram = -0.5 * centre * d2 * centre;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  std::vector<Point> out(static_cast<std::size_t>(n));
  // Eigenvalues come in ascending order; the last two span the embedding.
  for (int axis = 0; axis < 2 && axis < n; ++axis) {
    const Eigen::Index k = n - 1 - axis;
    const double s = std::sqrt(std::max(eig.eigenvalues()(k), 0.0));
    for (Eigen::Index i = 0; i < n; ++i) {
      (axis == 0 ? out[static_cast<std::size_t>(i)].x : out[static_cast<std::size_t>(i)].y) =
          s * eig.eigenvectors()(i, k);
    }
  }
  return out;
}

BenchmarkInstance load_instance(const InstanceFiles& files, const InstanceInfo& info,
                                bool check_statistics) {
  BenchmarkInstance inst;
  inst.info = info;
  inst.raw_times = read_matrix_file(files.travel_times);
  const int n = static_cast<int>(inst.raw_times.rows());
  inst.raw_demand = read_matrix_file(files.demand, n);
  if (inst.raw_demand.rows() != n) {
    throw InvalidInstance(info.name + ": demand has " + std::to_string(inst.raw_demand.rows()) +
                          " rows, travel times " + std::to_string(n));
  }
  if (files.coords) inst.raw_coords = read_matrix_file(*files.coords, n, 2);
  if (inst.raw_coords && inst.raw_coords->rows() != n) {
    throw InvalidInstance(info.name + ": coordinate file has the wrong number of rows");
  }

  Eigen::MatrixXd demand = inst.raw_demand;
  if (!demand.isApprox(demand.transpose(), 0.0)) {
    demand = 0.5 * (demand + demand.transpose()).eval();
    inst.warnings.push_back("asymmetric demand matrix was symmetrised by averaging");
  }
  if (demand.diagonal().cwiseAbs().maxCoeff() > 0.0) {
    demand.diagonal().setZero();
    inst.warnings.push_back("non-zero demand on the diagonal was dropped");
  }
  constexpr double kMinute = 60.0;
  std::vector<Point> positions(static_cast<std::size_t>(n));
  if (inst.raw_coords) {
    for (int i = 0; i < n; ++i) {
      positions[static_cast<std::size_t>(i)] = {1000.0 * (*inst.raw_coords)(i, 0),
                                                1000.0 * (*inst.raw_coords)(i, 1)};
    }
  }
  try {
    inst.city = city_from_matrices(inst.raw_times, demand, positions, kMinute);
  } catch (const InvalidCity& e) {
    throw InvalidInstance(info.name + ": " + e.what());
  }
  if (!inst.city.is_strongly_connected()) {
    throw InvalidInstance(info.name + ": street network is not connected");
  }
  if (!inst.raw_coords) {
    // 15 m/s turns drive times into plausible planar distances.
    const auto sp = all_pairs_shortest_paths(inst.city);
    inst.city = CityGraph(mds_positions(sp.times(), 15.0), inst.city.edges(), demand);
    inst.warnings.push_back("no coordinate file; positions embedded from drive times");
  }
  if (check_statistics) {
    const auto edges = static_cast<int>(inst.city.undirected_edge_count());
    if (n != info.n || edges != info.edges) {
      throw InvalidInstance(info.name + ": expected n = " + std::to_string(info.n) + " and " +
                            std::to_string(info.edges) + " streets, found n = " +
                            std::to_string(n) + " and " + std::to_string(edges));
    }
  }
  return inst;
}

BenchmarkInstance load_instance(const std::filesystem::path& data_dir, const std::string& name) {
  const InstanceInfo* info = find_instance_info(name);
  if (info == nullptr) throw InvalidInstance("unknown benchmark instance '" + name + "'");
  return load_instance(instance_files(data_dir / name, name), *info);
}

void write_instance(const BenchmarkInstance& instance, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& suffix, const Eigen::MatrixXd& m) {
    const auto path = dir / (instance.info.name + suffix);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_matrix(out, m);
  };
  write("TravelTimes.txt", instance.raw_times);
  write("Demand.txt", instance.raw_demand);
  if (instance.raw_coords) write("Coords.txt", *instance.raw_coords);
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("TNDP_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return TNDP_SOURCE_DATA_DIR;
}

bool is_learned_method(const std::string& method) { return method != "bco"; }

namespace {

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

}  // namespace

SuiteConfig SuiteConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  SuiteConfig c;
  c.data_dir = default_data_dir();
  if (j.contains("data_dir")) c.data_dir = resolve(j.at("data_dir").get<std::string>(), base);
  for (const auto& item : j.at("instances")) {
    SuiteInstance inst;
    if (item.is_string()) {
      inst.name = item.get<std::string>();
    } else {
      inst.name = item.at("name").get<std::string>();
      if (item.contains("dir")) inst.dir = resolve(item.at("dir").get<std::string>(), base);
      if (item.contains("S")) {
        InstanceInfo info;
        info.name = inst.name;
        info.n = item.value("n", 0);
        info.edges = item.value("edges", 0);
        info.num_routes = item.at("S").get<int>();
        info.min_stops = item.at("MIN").get<int>();
        info.max_stops = item.at("MAX").get<int>();
        inst.info = info;
      }
    }
    c.instances.push_back(std::move(inst));
  }
  c.methods = j.at("methods").get<std::vector<std::string>>();
  c.alphas = j.at("alphas").get<std::vector<double>>();
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("budgets")) {
    const auto& b = j.at("budgets");
    c.bco_iterations = b.value("bco_iterations", c.bco_iterations);
    c.lp_small = b.value("lp_small", c.lp_small);
    c.lp_large = b.value("lp_large", c.lp_large);
  }
  c.beta = j.value("beta", c.beta);
  c.transfer_penalty = j.value("transfer_penalty", c.transfer_penalty);
  if (j.contains("checkpoint")) c.checkpoint = resolve(j.at("checkpoint").get<std::string>(), base);
  c.workers = j.value("workers", c.workers);
  c.validate();
  return c;
}

void SuiteConfig::validate() const {
  if (instances.empty() || methods.empty() || alphas.empty() || seeds.empty()) {
    throw std::invalid_argument("suite needs instances, methods, alphas and seeds");
  }
  for (const auto& m : methods) {
    if (std::find_if(std::begin(kMethods), std::end(kMethods),
                     [&](const char* k) { return m == k; }) == std::end(kMethods)) {
      throw std::invalid_argument("unknown method '" + m + "'");
    }
    if (is_learned_method(m) && !checkpoint) {
      throw std::invalid_argument("method '" + m + "' needs a checkpoint");
    }
  }
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("alpha outside [0, 1]");
  }
  for (const auto& inst : instances) {
    if (!inst.info && find_instance_info(inst.name) == nullptr) {
      throw std::invalid_argument("instance '" + inst.name +
                                  "' is not a registry instance and gives no S, MIN, MAX");
    }
  }
  if (bco_iterations < 0 || lp_small < 1 || lp_large < 1 || workers < 1) {
    throw std::invalid_argument("budgets and workers must be positive");
  }
}

nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json j{{"format", "tndp-result"}, {"version", 1},  {"instance", r.instance},
                   {"method", r.method},      {"alpha", r.alpha}, {"seed", r.seed}};
  if (r.error) {
    j["error"] = *r.error;
    return j;
  }
  j["cost"] = {{"total", r.cost.total},
               {"passenger", r.cost.passenger_cost},
               {"operator", r.cost.operator_cost},
               {"constraint", r.cost.constraint_cost},
               {"unserved_fraction", r.cost.unserved_fraction}};
  j["connected"] = r.connected;
  j["structurally_valid"] = r.structurally_valid;
  j["wall_seconds"] = r.wall_seconds;
  j["network"] = r.network;
  return j;
}

ExperimentResult result_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tndp-result" || j.value("version", 0) != 1) {
    throw std::invalid_argument("not a version 1 result record");
  }
  ExperimentResult r;
  r.instance = j.at("instance").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.alpha = j.at("alpha").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("error")) {
    r.error = j.at("error").get<std::string>();
    return r;
  }
  const auto& c = j.at("cost");
  r.cost.total = c.at("total").get<double>();
  r.cost.passenger_cost = c.at("passenger").get<double>();
  r.cost.operator_cost = c.at("operator").get<double>();
  r.cost.constraint_cost = c.at("constraint").get<double>();
  r.cost.unserved_fraction = c.at("unserved_fraction").get<double>();
  r.connected = j.at("connected").get<bool>();
  r.structurally_valid = j.at("structurally_valid").get<bool>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.network = j.at("network").get<RouteNetwork>();
  return r;
}

std::vector<ExperimentResult> read_results(std::istream& in) {
  std::vector<ExperimentResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(result_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

namespace {

struct LoadedInstance {
  std::string name;
  InstanceInfo info;
  std::unique_ptr<PreparedCity> city;
  std::string error;
};

ExperimentResult run_one(const LoadedInstance& inst, const std::string& method, double alpha,
                         std::uint64_t seed, const SuiteConfig& config,
                         const PolicyParams<double>* policy) {
  ExperimentResult r{inst.name, method, alpha, seed, {}, false, false, 0.0, {}, std::nullopt};
  if (!inst.city) {
    r.error = inst.error;
    return r;
  }
  const InstanceInfo& info = inst.info;
  const CostWeights weights{alpha, config.beta, config.transfer_penalty};
  const auto start = std::chrono::steady_clock::now();
  if (method == "lp-100" || method == "lp-40k") {
    EvalOptions opt;
    opt.num_routes = info.num_routes;
    opt.min_stops = info.min_stops;
    opt.max_stops = info.max_stops;
    opt.beta = config.beta;
    opt.transfer_penalty = config.transfer_penalty;
    opt.seed = seed;
    const std::vector<PreparedCity> one{*inst.city};
    const int samples = method == "lp-100" ? config.lp_small : config.lp_large;
    CityBest best = evaluate_policy(*policy, one, alpha, samples, opt).front();
    r.network = std::move(best.network);
    r.cost = best.cost;
  } else {
    BcoConfig bc;
    bc.mix = parse_bee_mix(method);
    bc.iterations = config.bco_iterations;
    bc.weights = weights;
    bc.num_routes = info.num_routes;
    bc.min_stops = info.min_stops;
    bc.max_stops = info.max_stops;
    bc.seed = seed;
    std::mt19937_64 rng = sample_stream(seed, 2, 0);
    const RouteNetwork initial = initial_network(inst.city->city, inst.city->sp, info.num_routes,
                                                 info.min_stops, info.max_stops, rng);
    BcoResult res = run_bco(*inst.city, bc, initial, policy);
    r.network = std::move(res.best);
    r.cost = res.best_cost;
  }
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const NetworkReport report = validate_network(r.network, inst.city->city, info.num_routes,
                                                info.min_stops, info.max_stops);
  r.connected = report.connected;
  r.structurally_valid = report.structurally_valid();
  return r;
}

}  // namespace

std::vector<ExperimentResult> run_suite(const SuiteConfig& config,
                                        const std::function<void(const ExperimentResult&)>& sink) {
  config.validate();
  std::vector<LoadedInstance> instances;
  for (const auto& si : config.instances) {
    LoadedInstance li;
    li.name = si.name;
    const InstanceInfo* known = find_instance_info(si.name);
    li.info = si.info ? *si.info : *known;
    try {
      const auto dir = si.dir.empty() ? config.data_dir / si.name : si.dir;
      BenchmarkInstance b = load_instance(instance_files(dir, si.name), li.info, li.info.n > 0);
      li.city = std::make_unique<PreparedCity>(std::move(b.city));
    } catch (const std::exception& e) {
      li.error = std::string("load failed: ") + e.what();
    }
    instances.push_back(std::move(li));
  }
  std::optional<PolicyParams<double>> policy;
  if (config.checkpoint) policy = load_checkpoint(*config.checkpoint);

  struct Job {
    std::size_t instance;
    std::string method;
    double alpha;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (const auto& m : config.methods) {
      for (double a : config.alphas) {
        for (auto s : config.seeds) jobs.push_back({i, m, a, s});
      }
    }
  }
  std::vector<ExperimentResult> results(jobs.size());
  std::mutex sink_mutex;
  parallel_for(jobs.size(), config.workers, [&](std::size_t k) {
    const Job& job = jobs[k];
    try {
      results[k] = run_one(instances[job.instance], job.method, job.alpha, job.seed, config,
                           policy ? &*policy : nullptr);
    } catch (const std::exception& e) {
      results[k] = {instances[job.instance].name, job.method, job.alpha, job.seed, {}, false,
                    false, 0.0, {}, std::string(e.what())};
    }
    if (sink) {
      std::lock_guard lock(sink_mutex);
      sink(results[k]);
    }
  });
  return results;
}

std::vector<AggregateRow> aggregate(const std::vector<ExperimentResult>& results) {
  std::map<std::tuple<std::string, std::string, double>, std::vector<const ExperimentResult*>>
      groups;
  for (const auto& r : results) groups[{r.instance, r.method, r.alpha}].push_back(&r);
  std::vector<AggregateRow> rows;
  for (const auto& [key, members] : groups) {
    AggregateRow row;
    std::tie(row.instance, row.method, row.alpha) = key;
    std::vector<double> totals;
    for (const auto* r : members) {
      if (r->error) {
        ++row.failures;
        continue;
      }
      totals.push_back(r->cost.total);
      row.mean_passenger += r->cost.passenger_cost;
      row.mean_operator += r->cost.operator_cost;
    }
    row.runs = static_cast<int>(totals.size());
    if (row.runs > 0) {
      for (double t : totals) row.mean_total += t;
      row.mean_total /= row.runs;
      row.mean_passenger /= row.runs;
      row.mean_operator /= row.runs;
    }
    if (row.runs > 1) {
      double ss = 0.0;
      for (double t : totals) ss += (t - row.mean_total) * (t - row.mean_total);
      row.std_total = std::sqrt(ss / (row.runs - 1));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "# tndp-aggregate 1\n"
      << "instance,method,alpha,runs,failures,mean_total,std_total,std_percent,"
         "mean_passenger_s,mean_operator_s\n";
  for (const auto& r : rows) {
    const double pct = r.runs > 0 && r.mean_total != 0.0 ? 100.0 * r.std_total / r.mean_total : 0.0;
    out << r.instance << ',' << r.method << ',' << format_number(r.alpha) << ',' << r.runs << ','
        << r.failures << ',' << format_number(r.mean_total) << ',' << format_number(r.std_total)
        << ',' << format_number(pct) << ',' << format_number(r.mean_passenger) << ','
        << format_number(r.mean_operator) << '\n';
  }
}

void write_pareto_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::vector<const AggregateRow*>> lines;
  for (const auto& r : rows) {
    if (r.runs == 0) continue;
    if (r.method == "lp-40k" && r.alpha != 0.0 && r.alpha != 0.5 && r.alpha != 1.0) continue;
    lines[{r.instance, r.method}].push_back(&r);
  }
  for (auto& [key, members] : lines) {
    if (members.size() < 2) {
      throw std::invalid_argument(key.second + " on " + key.first +
                                  " has fewer than two alpha values");
    }
    std::sort(members.begin(), members.end(),
              [](const AggregateRow* a, const AggregateRow* b) { return a->alpha < b->alpha; });
  }
  out << "# tndp-pareto 1\n" << "instance,method,alpha,passenger_minutes,operator_minutes\n";
  for (const auto& [key, members] : lines) {
    for (const auto* r : members) {
      out << key.first << ',' << key.second << ',' << format_number(r->alpha) << ','
          << format_number(r->mean_passenger / 60.0) << ',' << format_number(r->mean_operator / 60.0)
          << '\n';
    }
  }
}

}  // namespace tndp
