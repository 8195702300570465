#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "tndp/bco.hpp"
#include "tndp/bench.hpp"
#include "tndp/citygen.hpp"
#include "tndp/io.hpp"
#include "tndp/policy.hpp"
#include "tndp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tndp;

namespace {

// Problem sizes left unset on the command line fall back to the registry
// entry of a benchmark instance, then to these.
constexpr int kDefaultRoutes = 10;
constexpr int kDefaultMinStops = 2;
constexpr int kDefaultMaxStops = 15;

struct SizeFlags {
  std::optional<int> num_routes, min_stops, max_stops;
};

void add_size_flags(CLI::App* cmd, SizeFlags& s) {
  cmd->add_option("-S,--routes", s.num_routes, "Number of routes");
  cmd->add_option("--min-stops", s.min_stops, "Minimum stops per route");
  cmd->add_option("--max-stops", s.max_stops, "Maximum stops per route");
}

struct Problem {
  std::string name;
  CityGraph city;
  int num_routes = kDefaultRoutes;
  int min_stops = kDefaultMinStops;
  int max_stops = kDefaultMaxStops;
};

// A directory is read as a benchmark instance named after it; anything else
// as a single city file.
Problem load_problem(const fs::path& path, const SizeFlags& flags) {
  Problem p;
  std::optional<InstanceInfo> info;
  if (fs::is_directory(path)) {
    p.name = path.filename().string();
    if (p.name.empty()) p.name = path.parent_path().filename().string();
    const InstanceInfo* known = find_instance_info(p.name);
    InstanceInfo i = known ? *known : InstanceInfo{p.name, 0, 0, 0, 0, 0, 0.0};
    BenchmarkInstance inst = load_instance(instance_files(path, p.name), i, known != nullptr);
    for (const auto& w : inst.warnings) std::cerr << "warning: " << w << "\n";
    p.city = std::move(inst.city);
    if (known) info = *known;
  } else {
    p.name = path.stem().string();
    p.city = read_city_file(path);
  }
  p.num_routes = flags.num_routes.value_or(info ? info->num_routes : kDefaultRoutes);
  p.min_stops = flags.min_stops.value_or(info ? info->min_stops : kDefaultMinStops);
  p.max_stops = flags.max_stops.value_or(info ? info->max_stops : kDefaultMaxStops);
  return p;
}

json cost_json(const CostBreakdown& c) {
  return {{"total", c.total},
          {"passenger_cost_s", c.passenger_cost},
          {"operator_cost_s", c.operator_cost},
          {"constraint_cost", c.constraint_cost},
          {"unserved_fraction", c.unserved_fraction}};
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// solve ----------------------------------------------------------------------

struct SolveArgs {
  fs::path city;
  std::string algorithm = "bco";
  double alpha = 0.5;
  double beta = 5.0;
  double transfer_penalty = 300.0;
  SizeFlags size;
  std::uint64_t seed = 0;
  fs::path checkpoint;
  int iterations = 400;
  int samples = 100;
  fs::path output = "solution.json";
  fs::path trace;
  int workers = 1;
};

int run_solve(const SolveArgs& a) {
  const Problem p = load_problem(a.city, a.size);
  const PreparedCity prepared(p.city);
  const CostWeights weights{a.alpha, a.beta, a.transfer_penalty};
  const bool learned = a.algorithm != "bco";
  if (learned && a.checkpoint.empty())
    throw std::invalid_argument(a.algorithm + " needs --checkpoint");
  std::optional<PolicyParams<double>> policy;
  if (learned) policy = load_checkpoint(a.checkpoint);

  std::optional<std::ofstream> trace;
  if (!a.trace.empty()) trace = open_output(a.trace);
  const auto start = std::chrono::steady_clock::now();
  RouteNetwork network;
  CostBreakdown cost;
  if (a.algorithm == "lp") {
    EvalOptions opt{p.num_routes, p.min_stops, p.max_stops, a.beta, a.transfer_penalty, a.seed,
                    a.workers};
    // Trace records the best-so-far at doubling sample counts.
    std::vector<int> counts;
    for (int k = 1; k < a.samples; k *= 2) counts.push_back(k);
    counts.push_back(a.samples);
    const std::vector<PreparedCity> one{prepared};
    const auto prefixes = evaluate_policy_prefixes(*policy, one, a.alpha, counts, opt);
    for (std::size_t k = 0; k < counts.size() && trace; ++k)
      *trace << json{{"samples", counts[k]}, {"best_cost", prefixes[k][0].cost.total}}.dump()
             << "\n";
    network = prefixes.back()[0].network;
    cost = prefixes.back()[0].cost;
  } else {
    BcoConfig bc;
    bc.mix = parse_bee_mix(a.algorithm);
    bc.iterations = a.iterations;
    bc.weights = weights;
    bc.num_routes = p.num_routes;
    bc.min_stops = p.min_stops;
    bc.max_stops = p.max_stops;
    bc.seed = a.seed;
    bc.workers = a.workers;
    std::mt19937_64 rng = sample_stream(a.seed, 2, 0);
    const RouteNetwork initial = initial_network(prepared.city, prepared.sp, p.num_routes,
                                                 p.min_stops, p.max_stops, rng);
    BcoResult res = run_bco(prepared, bc, initial, policy ? &*policy : nullptr);
    // Entry 0 is the starting network.
    for (std::size_t i = 0; i < res.trace.size() && trace; ++i)
      *trace << json{{"iteration", i}, {"best_cost", res.trace[i]}}.dump() << "\n";
    network = std::move(res.best);
    cost = res.best_cost;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const NetworkReport report =
      validate_network(network, prepared.city, p.num_routes, p.min_stops, p.max_stops);
  json out{{"format", "tndp-solution"},
           {"version", 1},
           {"instance", p.name},
           {"algorithm", a.algorithm},
           {"alpha", a.alpha},
           {"beta", a.beta},
           {"transfer_penalty_s", a.transfer_penalty},
           {"num_routes", p.num_routes},
           {"min_stops", p.min_stops},
           {"max_stops", p.max_stops},
           {"seed", a.seed},
           {"routes", network},
           {"cost", cost_json(cost)},
           {"connected", report.connected},
           {"structurally_valid", report.structurally_valid()},
           {"wall_seconds", seconds}};
  write_json_file(a.output, out);
  std::cout << p.name << " " << a.algorithm << " alpha=" << a.alpha << " cost=" << cost.total
            << (report.ok() ? "" : " (infeasible)") << "\n";
  return report.ok() ? 0 : 2;
}

// train ----------------------------------------------------------------------

PolicyConfig policy_config_from_json(const json& j) {
  PolicyConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.baseline_hidden = j.value("baseline_hidden", c.baseline_hidden);
  c.max_candidates = j.value("max_candidates", c.max_candidates);
  c.attention_slope = j.value("attention_slope", c.attention_slope);
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.num_routes = j.value("num_routes", c.num_routes);
  c.min_stops = j.value("min_stops", c.min_stops);
  c.max_stops = j.value("max_stops", c.max_stops);
  c.alpha_min = j.value("alpha_min", c.alpha_min);
  c.alpha_max = j.value("alpha_max", c.alpha_max);
  c.policy_lr = j.value("policy_lr", c.policy_lr);
  c.baseline_lr = j.value("baseline_lr", c.baseline_lr);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.beta = j.value("beta", c.beta);
  c.transfer_penalty = j.value("transfer_penalty", c.transfer_penalty);
  c.augment = j.value("augment", c.augment);
  c.validation_alphas = j.value("validation_alphas", c.validation_alphas);
  c.seed = j.value("seed", c.seed);
  if (j.contains("policy")) c.policy = policy_config_from_json(j.at("policy"));
  return c;
}

struct TrainArgs {
  fs::path config;
  fs::path dataset;
  fs::path output = "policy.ckpt";
  fs::path log;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  TrainConfig config;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw std::runtime_error("cannot read " + a.config.string());
    config = train_config_from_json(json::parse(in));
  }
  if (a.seed) config.seed = *a.seed;
  config.validate();
  const std::vector<CityGraph> dataset = read_dataset(a.dataset);
  std::optional<std::ofstream> log;
  if (!a.log.empty()) log = open_output(a.log);
  const ProgressSink sink = [&](const ProgressRecord& r) {
    // Batch 0 is the end-of-epoch validation record and has no training cost.
    json rec{{"epoch", r.epoch}, {"batch", r.batch}};
    rec["mean_cost"] = r.batch > 0 ? json(r.mean_cost) : json(nullptr);
    rec["validation_cost"] = r.validation_cost ? json(*r.validation_cost) : json(nullptr);
    if (log) *log << rec.dump() << std::endl;
    if (r.validation_cost)
      std::cout << "epoch " << r.epoch << " validation cost " << *r.validation_cost << std::endl;
  };
  const TrainResult result = train(config, dataset, sink);
  save_checkpoint(result.params, a.output);
  std::cout << "best epoch " << result.best_epoch << " validation cost "
            << result.validation_costs[static_cast<std::size_t>(result.best_epoch)] << "\n";
  return 0;
}

// evaluate -------------------------------------------------------------------

struct EvaluateArgs {
  fs::path checkpoint;
  std::vector<fs::path> cities;
  double alpha = 0.5;
  double beta = 5.0;
  double transfer_penalty = 300.0;
  SizeFlags size;
  int samples = 100;
  std::uint64_t seed = 0;
  int workers = 1;
  fs::path output;
};

int run_evaluate(const EvaluateArgs& a) {
  const PolicyParams<double> params = load_checkpoint(a.checkpoint);
  std::vector<std::string> names;
  std::vector<PreparedCity> cities;
  std::optional<Problem> sizes;
  for (const auto& path : a.cities) {
    // A dataset directory holds a manifest; expand it into its cities.
    if (fs::is_directory(path) && fs::exists(path / "manifest.json")) {
      const auto dataset = read_dataset(path);
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        names.push_back(path.filename().string() + "/" + std::to_string(i));
        cities.emplace_back(dataset[i]);
      }
      continue;
    }
    Problem p = load_problem(path, a.size);
    if (!sizes) sizes = p;
    names.push_back(p.name);
    cities.emplace_back(std::move(p.city));
  }
  if (cities.empty()) throw std::invalid_argument("no cities given");
  EvalOptions opt;
  opt.num_routes = a.size.num_routes.value_or(sizes ? sizes->num_routes : kDefaultRoutes);
  opt.min_stops = a.size.min_stops.value_or(sizes ? sizes->min_stops : kDefaultMinStops);
  opt.max_stops = a.size.max_stops.value_or(sizes ? sizes->max_stops : kDefaultMaxStops);
  opt.beta = a.beta;
  opt.transfer_penalty = a.transfer_penalty;
  opt.seed = a.seed;
  opt.workers = a.workers;
  const auto best = evaluate_policy(params, cities, a.alpha, a.samples, opt);
  std::optional<std::ofstream> out;
  if (!a.output.empty()) out = open_output(a.output);
  double sum = 0.0;
  for (std::size_t i = 0; i < best.size(); ++i) {
    sum += best[i].cost.total;
    if (out)
      *out << json{{"city", names[i]}, {"routes", best[i].network},
                   {"cost", cost_json(best[i].cost)}}.dump()
           << "\n";
  }
  std::cout << "cities " << best.size() << " mean cost " << sum / static_cast<double>(best.size())
            << "\n";
  return 0;
}

// generate -------------------------------------------------------------------

struct GenerateArgs {
  fs::path output;
  int count = 100;
  std::uint64_t seed = 0;
  std::string generator;
  GenConfig config;
};

int run_generate(GenerateArgs a) {
  if (!a.generator.empty()) a.config.generator = parse_generator(a.generator);
  a.config.validate();
  const auto entries = write_dataset(a.output, a.count, a.config, a.seed);
  std::cout << "wrote " << entries.size() << " cities to " << a.output.string() << "\n";
  return 0;
}

// bench ----------------------------------------------------------------------

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    static const char* digits = "0123456789abcdef";
    hex << digits[digest[i] >> 4] << digits[digest[i] & 15];
  }
  return hex.str();
}

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

struct FetchArgs {
  std::string url;
  std::string sha256;
  fs::path archive;
  fs::path data_dir;
};

// Downloads (or takes) an archive, checks its digest if one is given, and
// copies every <Name>TravelTimes/Demand/Coords file of a registry instance
// into data_dir/<Name>.
int run_fetch(const FetchArgs& a) {
  const fs::path data_dir = a.data_dir.empty() ? default_data_dir() : a.data_dir;
  const fs::path work = fs::temp_directory_path() / ("tndp-fetch-" + std::to_string(::getpid()));
  fs::create_directories(work);
  fs::path archive = a.archive;
  if (archive.empty()) {
    if (a.url.empty()) throw std::invalid_argument("give --url or --archive");
    archive = work / "download";
    const std::string cmd = "curl -fL --retry 3 -o " + shell_quote(archive.string()) + " " +
                            shell_quote(a.url);
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("download failed: " + a.url);
  }
  const std::string digest = sha256_file(archive);
  std::cout << "sha256 " << digest << "  " << archive.string() << "\n";
  if (!a.sha256.empty() && a.sha256 != digest)
    throw std::runtime_error("checksum mismatch: expected " + a.sha256);
  const fs::path extract = work / "extract";
  fs::create_directories(extract);
  const std::string untar = "cd " + shell_quote(extract.string()) + " && cmake -E tar xf " +
                            shell_quote(fs::absolute(archive).string());
  if (std::system(untar.c_str()) != 0) throw std::runtime_error("cannot unpack archive");
  int copied = 0;
  for (const auto& entry : fs::recursive_directory_iterator(extract)) {
    if (!entry.is_regular_file()) continue;
    const std::string file = entry.path().filename().string();
    for (const auto& info : benchmark_registry()) {
      for (const char* suffix : {"TravelTimes.txt", "Demand.txt", "Coords.txt"}) {
        if (file != info.name + suffix) continue;
        fs::create_directories(data_dir / info.name);
        fs::copy_file(entry.path(), data_dir / info.name / file,
                      fs::copy_options::overwrite_existing);
        ++copied;
      }
    }
  }
  fs::remove_all(work);
  std::cout << "copied " << copied << " files into " << data_dir.string() << "\n";
  for (const auto& info : benchmark_registry()) {
    try {
      load_instance(data_dir, info.name);
      std::cout << info.name << ": ok\n";
    } catch (const std::exception& e) {
      std::cout << info.name << ": " << e.what() << "\n";
    }
  }
  return copied > 0 ? 0 : 1;
}

struct BenchRunArgs {
  fs::path config;
  fs::path output = "results.jsonl";
  std::optional<int> workers;
};

int run_bench(const BenchRunArgs& a) {
  std::ifstream in(a.config);
  if (!in) throw std::runtime_error("cannot read " + a.config.string());
  SuiteConfig config = SuiteConfig::from_json(json::parse(in), a.config.parent_path());
  if (a.workers) config.workers = *a.workers;
  std::ofstream out = open_output(a.output);
  int failures = 0;
  run_suite(config, [&](const ExperimentResult& r) {
    out << to_json(r).dump() << std::endl;
    std::cout << r.instance << " " << r.method << " alpha=" << r.alpha << " seed=" << r.seed;
    if (r.error) {
      ++failures;
      std::cout << " FAILED: " << *r.error << "\n";
    } else {
      std::cout << " cost=" << r.cost.total << " (" << r.wall_seconds << " s)\n";
    }
  });
  return failures == 0 ? 0 : 2;
}

std::vector<ExperimentResult> read_results_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_results(in);
}

int run_tables(const fs::path& results, const fs::path& output, bool pareto) {
  const auto rows = aggregate(read_results_file(results));
  std::ofstream file;
  if (!output.empty()) file = open_output(output);
  std::ostream& out = output.empty() ? std::cout : file;
  if (pareto)
    write_pareto_csv(out, rows);
  else
    write_aggregate_csv(out, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transit network design: route planning by bee colony search and a learned policy"};
  app.require_subcommand(1);

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "Design a route network for one city");
  s->add_option("city", solve.city, "City file, or benchmark instance directory")
      ->required()
      ->check(CLI::ExistingPath);
  s->add_option("-a,--algorithm", solve.algorithm, "bco, nbco, no2nb or lp")
      ->check(CLI::IsMember({"bco", "nbco", "no2nb", "lp"}));
  s->add_option("--alpha", solve.alpha, "Passenger weight in [0, 1]")->check(CLI::Range(0.0, 1.0));
  s->add_option("--beta", solve.beta, "Constraint weight");
  s->add_option("--transfer-penalty", solve.transfer_penalty, "Seconds charged per transfer");
  add_size_flags(s, solve.size);
  s->add_option("--seed", solve.seed);
  s->add_option("--checkpoint", solve.checkpoint, "Policy for nbco, no2nb and lp");
  s->add_option("--iterations", solve.iterations, "Bee colony iterations");
  s->add_option("--samples", solve.samples, "Rollouts for lp")->check(CLI::PositiveNumber);
  s->add_option("-o,--output", solve.output, "Solution file (JSON)");
  s->add_option("--trace", solve.trace, "Best cost per iteration (JSON lines)");
  s->add_option("--workers", solve.workers)->check(CLI::PositiveNumber);

  TrainArgs train_args;
  auto* t = app.add_subcommand("train", "Train the route-planning policy");
  t->add_option("--dataset", train_args.dataset, "Directory written by `generate`")
      ->required()
      ->check(CLI::ExistingDirectory);
  t->add_option("--config", train_args.config, "Training configuration (JSON)")
      ->check(CLI::ExistingFile);
  t->add_option("--seed", train_args.seed, "Overrides the configured seed");
  t->add_option("-o,--output", train_args.output, "Checkpoint path");
  t->add_option("--log", train_args.log, "Progress records (JSON lines)");

  EvaluateArgs eval;
  auto* e = app.add_subcommand("evaluate", "Best-of-k policy rollouts on held-out cities");
  e->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("cities", eval.cities, "City files, instance or dataset directories")
      ->required()
      ->check(CLI::ExistingPath);
  e->add_option("--alpha", eval.alpha)->check(CLI::Range(0.0, 1.0));
  e->add_option("--beta", eval.beta);
  e->add_option("--transfer-penalty", eval.transfer_penalty);
  add_size_flags(e, eval.size);
  e->add_option("--samples", eval.samples)->check(CLI::PositiveNumber);
  e->add_option("--seed", eval.seed);
  e->add_option("--workers", eval.workers)->check(CLI::PositiveNumber);
  e->add_option("-o,--output", eval.output, "Per-city results (JSON lines)");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a dataset of synthetic cities");
  g->add_option("-o,--output", gen.output, "Dataset directory")->required();
  g->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  g->add_option("-n,--nodes", gen.config.n);
  g->add_option("--seed", gen.seed);
  g->add_option("--generator", gen.generator, "Fixed street process (default: mixed)");
  g->add_option("--side", gen.config.side, "Square side in metres");
  g->add_option("--speed", gen.config.speed, "Vehicle speed in metres per second");
  g->add_option("--edge-delete-prob", gen.config.edge_delete_prob);
  g->add_option("--demand-min", gen.config.demand_min);
  g->add_option("--demand-max", gen.config.demand_max);

  auto* b = app.add_subcommand("bench", "Benchmark instances and experiment suites");
  b->require_subcommand(1);
  FetchArgs fetch;
  auto* bf = b->add_subcommand("fetch", "Install benchmark instance files");
  bf->add_option("--url", fetch.url, "Archive to download");
  bf->add_option("--archive", fetch.archive, "Local archive instead of downloading")
      ->check(CLI::ExistingFile);
  bf->add_option("--sha256", fetch.sha256, "Expected archive digest");
  bf->add_option("--data-dir", fetch.data_dir, "Defaults to $TNDP_DATA_DIR");
  BenchRunArgs run;
  auto* br = b->add_subcommand("run", "Run an experiment suite");
  br->add_option("config", run.config, "Suite configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  br->add_option("-o,--output", run.output, "Results (JSON lines)");
  br->add_option("--workers", run.workers)->check(CLI::PositiveNumber);
  fs::path results, table_out;
  auto* ba = b->add_subcommand("aggregate", "Mean and standard deviation per configuration");
  auto* bp = b->add_subcommand("pareto", "Passenger and operator cost fronts per method");
  for (auto* cmd : {ba, bp}) {
    cmd->add_option("results", results, "Results file")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--output", table_out, "CSV path (default: stdout)");
  }

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) return run_solve(solve);
    if (t->parsed()) return run_train(train_args);
    if (e->parsed()) return run_evaluate(eval);
    if (g->parsed()) return run_generate(gen);
    if (bf->parsed()) return run_fetch(fetch);
    if (br->parsed()) return run_bench(run);
    if (ba->parsed()) return run_tables(results, table_out, false);
    if (bp->parsed()) return run_tables(results, table_out, true);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
