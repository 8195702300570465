#include "tndp/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace tndp {

namespace {

constexpr const char* kCityHeader = "tndp-city 1";

double parse_token(const std::string& token, const std::string& where) {
  std::string lower;
  for (char c : token) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "inf" || lower == "+inf") return std::numeric_limits<double>::infinity();
  double value = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(where + ": cannot parse '" + token + "' as a number");
  }
  return value;
}

bool next_content_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

void expect_section(std::istream& in, const std::string& name) {
  std::string line;
  if (!next_content_line(in, line)) throw ParseError("missing section '" + name + "'");
  std::istringstream ss(line);
  std::string word;
  ss >> word;
  if (word != name) throw ParseError("expected section '" + name + "', found '" + word + "'");
}

}  // namespace

Eigen::MatrixXd read_matrix(std::istream& in, const std::string& what, int expected, int cols) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (expected < 0 || static_cast<int>(rows.size()) < expected) {
    if (!next_content_line(in, line)) break;
    std::istringstream ss(line);
    std::vector<double> row;
    std::string token;
    const std::string where = what + " row " + std::to_string(rows.size() + 1);
    while (ss >> token) row.push_back(parse_token(token, where));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(where + ": expected " + std::to_string(rows.front().size()) +
                       " values, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(what + ": no rows");
  if (expected >= 0 && static_cast<int>(rows.size()) != expected) {
    throw ParseError(what + ": expected " + std::to_string(expected) + " rows, found " +
                     std::to_string(rows.size()));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = static_cast<Eigen::Index>(rows.front().size());
  const Eigen::Index want_cols = cols >= 0 ? cols : n;
  if (m != want_cols) {
    throw ParseError(what + ": expected " + std::to_string(want_cols) + " columns, found " +
                     std::to_string(m));
  }
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return out;
}

Eigen::MatrixXd read_matrix_file(const std::filesystem::path& path, int expected, int cols) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_matrix(in, path.filename().string(), expected, cols);
}

std::string format_number(double value) {
  if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, ptr);
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_number(m(i, j));
    }
    out << '\n';
  }
}

CityGraph city_from_matrices(const Eigen::MatrixXd& travel_times, const Eigen::MatrixXd& demand,
                             std::vector<Point> positions, double time_scale) {
  const auto n = travel_times.rows();
  if (travel_times.cols() != n || demand.rows() != n || demand.cols() != n) {
    throw InvalidCity("travel-time and demand matrices must both be n x n");
  }
  std::vector<StreetEdge> edges;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && std::isfinite(travel_times(i, j))) {
        edges.push_back({static_cast<NodeId>(i), static_cast<NodeId>(j),
                         travel_times(i, j) * time_scale});
      }
    }
  }
  return CityGraph(std::move(positions), std::move(edges), demand);
}

Eigen::MatrixXd travel_time_matrix(const CityGraph& city) { return city.street_times(); }

void write_city(std::ostream& out, const CityGraph& city) {
  out << kCityHeader << '\n' << "coords\n";
  Eigen::MatrixXd coords(city.size(), 2);
  for (int i = 0; i < city.size(); ++i) {
    coords(i, 0) = city.positions()[i].x;
    coords(i, 1) = city.positions()[i].y;
  }
  write_matrix(out, coords);
  out << "travel_times\n";
  write_matrix(out, travel_time_matrix(city));
  out << "demand\n";
  write_matrix(out, city.demand());
}

void write_city_file(const std::filesystem::path& path, const CityGraph& city) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_city(out, city);
}

CityGraph read_city(std::istream& in) {
  std::string line;
  if (!next_content_line(in, line) || line.rfind(kCityHeader, 0) != 0) {
    throw ParseError("not a city file (missing '" + std::string(kCityHeader) + "' header)");
  }
  expect_section(in, "coords");
  // Coordinates are read row by row until the next section name.
  std::vector<Point> positions;
  while (next_content_line(in, line)) {
    std::istringstream ss(line);
    std::string a, b, extra;
    ss >> a;
    if (a == "travel_times") break;
    if (!(ss >> b) || (ss >> extra)) {
      throw ParseError("coords row " + std::to_string(positions.size() + 1) +
                       ": expected two values");
    }
    const std::string where = "coords row " + std::to_string(positions.size() + 1);
    positions.push_back({parse_token(a, where), parse_token(b, where)});
  }
  const int n = static_cast<int>(positions.size());
  const Eigen::MatrixXd times = read_matrix(in, "travel_times", n);
  expect_section(in, "demand");
  const Eigen::MatrixXd demand = read_matrix(in, "demand", n);
  return city_from_matrices(times, demand, std::move(positions), 1.0);
}

CityGraph read_city_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return read_city(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace tndp
