#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tndp/city.hpp"
#include "tndp/cost.hpp"

namespace tndp {

/// Published statistics of a benchmark instance. `edges` counts undirected
/// street adjacencies; `area_km2` is informational only.
struct InstanceInfo {
  std::string name;
  int n = 0;
  int edges = 0;
  int num_routes = 0;
  int min_stops = 0;
  int max_stops = 0;
  double area_km2 = 0.0;
};

/// Mandl and Mumford0-3.
const std::vector<InstanceInfo>& benchmark_registry();
const InstanceInfo* find_instance_info(const std::string& name);

/// Travel times in minutes ("Inf" where no street), demand, and optional
/// coordinates in km, one "x y" row per node.
struct InstanceFiles {
  std::filesystem::path travel_times;
  std::filesystem::path demand;
  std::optional<std::filesystem::path> coords;
};

/// <dir>/<Name>TravelTimes.txt and so on; the coordinate file is optional.
InstanceFiles instance_files(const std::filesystem::path& dir, const std::string& name);

class InvalidInstance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BenchmarkInstance {
  InstanceInfo info;
  CityGraph city;
  /// Matrices as read, before unit conversion or symmetrisation.
  Eigen::MatrixXd raw_times;
  Eigen::MatrixXd raw_demand;
  std::optional<Eigen::MatrixXd> raw_coords;
  std::vector<std::string> warnings;
};

/// Parses and validates an instance. An asymmetric demand matrix is
/// replaced by (D + D^T) / 2 with a warning; without a coordinate file node
/// positions come from classical MDS on street-network drive times. With
/// `check_statistics`, n and the street count must equal `info`. Throws
/// ParseError or InvalidInstance.
BenchmarkInstance load_instance(const InstanceFiles& files, const InstanceInfo& info,
                                bool check_statistics = true);
/// Registry instance under `data_dir`/<name>.
BenchmarkInstance load_instance(const std::filesystem::path& data_dir, const std::string& name);

/// Writes the raw matrices back in the input format.
void write_instance(const BenchmarkInstance& instance, const std::filesystem::path& dir);

/// Planar embedding whose distances approximate drive time x speed.
std::vector<Point> mds_positions(const Eigen::MatrixXd& drive_times, double speed);

/// $TNDP_DATA_DIR if set, otherwise the data directory of the source tree.
std::filesystem::path default_data_dir();

// Experiment suites ---------------------------------------------------------

inline constexpr const char* kMethods[] = {"bco", "nbco", "no2nb", "lp-100", "lp-40k"};
bool is_learned_method(const std::string& method);

struct SuiteInstance {
  std::string name;
  /// Directory holding the instance files; empty means data_dir/name.
  std::filesystem::path dir;
  /// Problem sizes for instances outside the registry.
  std::optional<InstanceInfo> info;
};

struct SuiteConfig {
  std::vector<SuiteInstance> instances;
  std::vector<std::string> methods;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
  int bco_iterations = 400;
  int lp_small = 100;
  int lp_large = 40000;
  double beta = 5.0;
  Seconds transfer_penalty = 300.0;
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path data_dir;
  int workers = 1;

  /// Keys: instances (names or {name, dir, n, edges, S, MIN, MAX}),
  /// methods, alphas, seeds, and optional budgets {bco_iterations,
  /// lp_small, lp_large}, beta, transfer_penalty, checkpoint, data_dir,
  /// workers. Relative paths resolve against `base`.
  static SuiteConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  void validate() const;
};

struct ExperimentResult {
  std::string instance;
  std::string method;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  CostBreakdown cost;
  bool connected = false;
  bool structurally_valid = false;
  double wall_seconds = 0.0;
  RouteNetwork network;
  /// Set when the run failed; the other fields are then meaningless.
  std::optional<std::string> error;
};

nlohmann::json to_json(const ExperimentResult& r);
ExperimentResult result_from_json(const nlohmann::json& j);

/// Every (instance, method, alpha, seed) combination. Runs execute on
/// `workers` threads; `sink` is called under a lock in completion order and
/// the returned vector is in combination order. A failed run is recorded
/// with its error and the suite continues.
std::vector<ExperimentResult> run_suite(const SuiteConfig& config,
                                        const std::function<void(const ExperimentResult&)>& sink = {});

std::vector<ExperimentResult> read_results(std::istream& jsonl);

struct AggregateRow {
  std::string instance;
  std::string method;
  double alpha = 0.0;
  int runs = 0;
  int failures = 0;
  double mean_total = 0.0;
  double std_total = 0.0;  // sample standard deviation
  double mean_passenger = 0.0;
  double mean_operator = 0.0;
};

/// Groups successful runs by (instance, method, alpha) in that order.
std::vector<AggregateRow> aggregate(const std::vector<ExperimentResult>& results);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);

/// (instance, method, alpha, mean C_p, mean C_o) with costs in minutes,
/// rows ordered by alpha within each method. lp-40k keeps only alpha in
/// {0, 0.5, 1}. Throws std::invalid_argument if a method has fewer than two
/// alpha values.
void write_pareto_csv(std::ostream& out, const std::vector<AggregateRow>& rows);

}  // namespace tndp
