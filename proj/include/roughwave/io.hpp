#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "roughwave/fields.hpp"

namespace roughwave {

using Json = nlohmann::json;

/// Contents of an RWF1 file: magic "RWF1", then int64 little-endian dim, k
/// and one cell count per axis, then row-major float64 values per cell.
struct Rwf1Array {
    int dim = 1;
    int k = 1;
    std::array<std::int64_t, 3> cells{1, 1, 1};
    std::vector<double> values;

    std::int64_t num_cells() const { return cells[0] * cells[1] * cells[2]; }
    /// Number of float64 entries stored per cell (k for states, k*k for matrices).
    std::int64_t entries_per_cell() const { return num_cells() ? static_cast<std::int64_t>(values.size()) / num_cells() : 0; }
};

void write_rwf1(const std::filesystem::path& path, const Rwf1Array& array);
Rwf1Array read_rwf1(const std::filesystem::path& path);

/// RWF1 array for a per-cell array on the given grid.
Rwf1Array make_rwf1(const Grid& grid, int k, std::vector<double> values);
void write_rwf1(const std::filesystem::path& path, const Grid& grid, int k, const std::vector<double>& values);
void write_rwf1(const std::filesystem::path& path, const Grid& grid, int k, const Eigen::VectorXd& state);

/// Checks that an array was stored on the same spatial layout as grid.
void check_layout(const Rwf1Array& array, const Grid& grid, const std::string& what);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);

Json grid_to_json(const Grid& grid);
Grid grid_from_json(const Json& j);

/// Coefficient field as a.rwf, b.rwf, optional q_*.rwf plus field.json
/// holding grid, bounds and kernel metadata.
void write_field(const std::filesystem::path& dir, const CoefficientField& field);
CoefficientField read_field(const std::filesystem::path& dir);

/// CSV with a header row and equal-length numeric columns.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns);
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;
};
CsvTable read_csv(const std::filesystem::path& path);

/// Energy series with columns t, E.
void write_energy_csv(const std::filesystem::path& path, const std::vector<double>& t, const std::vector<double>& e);

/// Shortest decimal that round-trips a double.
std::string format_double(double v);

} // namespace roughwave
