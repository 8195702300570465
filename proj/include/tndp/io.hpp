#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tndp/city.hpp"

namespace tndp {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Whitespace-separated matrix, one row per line. The token "Inf" (any
/// case) reads as +infinity. Blank lines are skipped. With `expected` >= 0
/// exactly that many rows are read; otherwise rows are read to the end.
/// The matrix must be square unless `cols` >= 0 fixes the column count.
Eigen::MatrixXd read_matrix(std::istream& in, const std::string& what, int expected = -1,
                            int cols = -1);
Eigen::MatrixXd read_matrix_file(const std::filesystem::path& path, int expected = -1,
                                 int cols = -1);

/// Writes values in shortest round-trip form; infinities as "Inf".
void write_matrix(std::ostream& out, const Eigen::MatrixXd& m);

/// Shortest decimal string that parses back to the same double.
std::string format_number(double value);

/// Street graph from a travel-time matrix: finite off-diagonal entries are
/// edges. `time_scale` converts matrix units to seconds.
CityGraph city_from_matrices(const Eigen::MatrixXd& travel_times, const Eigen::MatrixXd& demand,
                             std::vector<Point> positions, double time_scale);

/// Travel-time matrix of a city in seconds (Inf off-street, 0 diagonal).
Eigen::MatrixXd travel_time_matrix(const CityGraph& city);

/// Single-file city format: a header line, then "coords", "travel_times"
/// (seconds) and "demand" sections in the matrix format above.
void write_city(std::ostream& out, const CityGraph& city);
void write_city_file(const std::filesystem::path& path, const CityGraph& city);
CityGraph read_city(std::istream& in);
CityGraph read_city_file(const std::filesystem::path& path);

}  // namespace tndp
