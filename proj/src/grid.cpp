#include "roughwave/grid.hpp"

#include <cmath>
#include <sstream>

#include "roughwave/error.hpp"

namespace roughwave {

double Grid::cell_volume() const
{
    double v = 1.0;
    for (int a = 0; a < dim; ++a) v *= h[a];
    return v;
}

int Grid::index(std::array<int, 3> ijk) const
{
    return (ijk[0] * cells[1] + ijk[1]) * cells[2] + ijk[2];
}

std::array<int, 3> Grid::multi_index(int cell) const
{
    std::array<int, 3> ijk{};
    ijk[2] = cell % cells[2];
    cell /= cells[2];
    ijk[1] = cell % cells[1];
    ijk[0] = cell / cells[1];
    return ijk;
}

std::array<double, 3> Grid::center(int cell) const
{
    const auto ijk = multi_index(cell);
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = 0; a < dim; ++a) x[a] = center(a, ijk[a]);
    return x;
}

bool Grid::same_space(const Grid& other) const
{
    if (dim != other.dim) return false;
    for (int a = 0; a < 3; ++a) {
        if (cells[a] != other.cells[a]) return false;
        if (std::abs(h[a] - other.h[a]) > 1e-14 * std::max(1.0, h[a])) return false;
        if (std::abs(origin[a] - other.origin[a]) > 1e-14 * std::max(1.0, std::abs(origin[a]))) return false;
    }
    return true;
}

bool Grid::operator==(const Grid& other) const
{
    return same_space(other) && n_steps == other.n_steps &&
           std::abs(dt - other.dt) <= 1e-14 * std::max(dt, other.dt);
}

namespace {

int step_count(double dt, double t_end)
{
    // Absorb representation error so that 1.0 / 1e-3 gives 1000 steps, not 1001.
    const double ratio = t_end / dt;
    const double nearest = std::round(ratio);
    if (std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, nearest)) return static_cast<int>(nearest);
    return static_cast<int>(std::ceil(ratio));
}

} // namespace

Grid build_grid(int dim, const std::vector<int>& cells_per_axis, const std::vector<double>& extent,
                double dt, double t_end, const std::vector<double>& origin)
{
    if (dim < 1 || dim > 3) throw InvalidArgument("grid dimension must be 1, 2, or 3");
    if (static_cast<int>(cells_per_axis.size()) != dim) {
        std::ostringstream os;
        os << "expected " << dim << " cell counts, got " << cells_per_axis.size();
        throw InvalidArgument(os.str());
    }
    if (extent.size() != 1 && static_cast<int>(extent.size()) != dim)
        throw InvalidArgument("extent must be a single value or one value per axis");
    if (!origin.empty() && static_cast<int>(origin.size()) != dim)
        throw InvalidArgument("origin must have one value per axis");
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    if (!(t_end > 0.0)) throw InvalidArgument("t_end must be positive");

    Grid g;
    g.dim = dim;
    for (int a = 0; a < dim; ++a) {
        const int n = cells_per_axis[a];
        if (n < 2) {
            std::ostringstream os;
            os << "axis " << a << " needs at least 2 cells, got " << n;
            throw InvalidArgument(os.str());
        }
        const double len = extent.size() == 1 ? extent[0] : extent[a];
        if (!(len > 0.0)) throw InvalidArgument("extent must be positive on every axis");
        g.cells[a] = n;
        g.h[a] = len / n;
        g.origin[a] = origin.empty() ? 0.0 : origin[a];
    }
    g.dt = dt;
    g.n_steps = step_count(dt, t_end);
    return g;
}

Grid with_time_axis(const Grid& grid, double dt, double t_end)
{
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    if (!(t_end > 0.0)) throw InvalidArgument("t_end must be positive");
    Grid g = grid;
    g.dt = dt;
    g.n_steps = step_count(dt, t_end);
    return g;
}

std::string describe_cell(const Grid& grid, int cell)
{
    const auto ijk = grid.multi_index(cell);
    std::ostringstream os;
    os << "cell " << cell << " (";
    for (int a = 0; a < grid.dim; ++a) os << (a ? "," : "") << ijk[a];
    os << ")";
    return os.str();
}

} // namespace roughwave
