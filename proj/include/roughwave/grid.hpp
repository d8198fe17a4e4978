#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace roughwave {

/// Uniform tensor-product grid of cells plus a uniform time axis.
///
/// States live at cell centres; a state vector of width k stores the k
/// components of each cell contiguously, cells in row-major order (last
/// axis fastest).
struct Grid {
    int dim = 1;
    std::array<int, 3> cells{1, 1, 1};
    std::array<double, 3> h{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    double dt = 1.0;
    int n_steps = 0;

    int num_cells() const { return cells[0] * cells[1] * cells[2]; }
    double cell_volume() const;
    double extent(int axis) const { return cells[axis] * h[axis]; }
    double t_end() const { return dt * n_steps; }

    /// Linear cell index from per-axis indices (unused axes must be 0).
    int index(std::array<int, 3> ijk) const;
    std::array<int, 3> multi_index(int cell) const;
    std::array<double, 3> center(int cell) const;
    double center(int axis, int i) const { return origin[axis] + (i + 0.5) * h[axis]; }

    /// Total length of a state vector of width k.
    std::int64_t state_size(int k) const { return static_cast<std::int64_t>(k) * num_cells(); }

    bool same_space(const Grid& other) const;
    bool operator==(const Grid& other) const;
};

/// "cell 7 (2,1)": linear index and per-axis indices, for error messages.
std::string describe_cell(const Grid& grid, int cell);

/// Build a grid on [0, extent] per axis with n_steps = ceil(t_end / dt).
/// A single extent value applies to every axis.
Grid build_grid(int dim, const std::vector<int>& cells_per_axis, const std::vector<double>& extent,
                double dt, double t_end, const std::vector<double>& origin = {});

/// Same spatial layout with a different time axis.
Grid with_time_axis(const Grid& grid, double dt, double t_end);

} // namespace roughwave
