#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "roughwave/fields.hpp"

namespace roughwave {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class Boundary { Periodic, AcousticFree };

/// y = blockdiag(blocks) x for per-cell k x k blocks.
Eigen::VectorXd apply_cell_blocks(std::span<const double> blocks, int k, const Eigen::VectorXd& x,
                                  bool transpose = false);

/// Block-diagonal symmetric positive definite operator built from a.
class MassOperator {
public:
    MassOperator() = default;
    MassOperator(int k, std::vector<double> blocks);

    int k() const { return k_; }
    int cells() const { return static_cast<int>(factors_.size()); }
    CellMatrix block(int cell) const { return {blocks_.data() + static_cast<std::size_t>(cell) * k_ * k_, k_, k_}; }
    std::span<const double> blocks() const { return blocks_; }
    double lower() const { return lower_; }
    double upper() const { return upper_; }

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const;
    Eigen::VectorXd solve(const Eigen::VectorXd& v) const;
    SparseMatrix matrix() const;

private:
    int k_ = 0;
    std::vector<double> blocks_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
    double lower_ = 0.0;
    double upper_ = 0.0;
};

/// Throws InvalidCoefficient naming the first cell whose block is not SPD.
MassOperator assemble_mass(const CoefficientField& field);
MassOperator assemble_mass(const Grid& grid, int k, std::vector<double> blocks);

/// Discrete p(grad) = sum_j p_j d/dx_j with centred differences; exactly
/// antisymmetric as a matrix.
class SkewOperator {
public:
    SkewOperator() = default;
    SkewOperator(SparseMatrix matrix, std::vector<RowMatrix> symbols, Boundary boundary, int k);

    const SparseMatrix& matrix() const { return matrix_; }
    const std::vector<RowMatrix>& symbols() const { return symbols_; }
    Boundary boundary() const { return boundary_; }
    int k() const { return k_; }
    Eigen::Index size() const { return matrix_.rows(); }

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const { return matrix_ * u; }
    SkewOperator negated() const;

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    void export_coordinate(std::ostream& os) const;

private:
    SparseMatrix matrix_;
    std::vector<RowMatrix> symbols_;
    Boundary boundary_ = Boundary::Periodic;
    int k_ = 0;
};

/// AcousticFree needs k = dim + 1 with p_j coupling only component 0 and j.
SkewOperator assemble_skew(const std::vector<RowMatrix>& symbols, const Grid& grid, Boundary boundary);

/// Exact one-step weights for the convolution of exp(-t / tau) with the
/// piecewise-linear interpolant of u:
///   s_{n+1} = decay * s_n + from_old * u_n + from_new * u_{n+1}.
struct PronyStep {
    double decay;
    double from_old;
    double from_new;
};
PronyStep prony_step(double tau, double dt);

/// Advance the auxiliary states of every Prony term by one step.
std::vector<Eigen::VectorXd> prony_advance(const std::vector<Eigen::VectorXd>& aux, const Eigen::VectorXd& u_old,
                                           const Eigen::VectorXd& u_new, double dt,
                                           const std::vector<PronyTerm>& terms);

/// Convolution operator R[u](t) = int q(t - s) u(s) ds on a uniform time
/// axis. History entries are u(t_0), u(t_1), ... with t_0 the causal start.
class MemoryOperator {
public:
    MemoryOperator() = default;
    explicit MemoryOperator(MemoryKernel kernel) : kernel_(std::move(kernel)) {}

    const MemoryKernel& kernel() const { return kernel_; }
    bool is_zero() const { return kernel_.is_zero(); }

    /// R[u](t_n): exact recursion for Prony kernels, trapezoid for tabulated.
    Eigen::VectorXd apply(std::span<const Eigen::VectorXd> history, int n, double dt) const;

    /// R[u](t_m) for every m = 0..history.size()-1.
    std::vector<Eigen::VectorXd> apply_all(std::span<const Eigen::VectorXd> history, double dt) const;

    /// Per-cell blocks q(m dt), m = 0..count-1, laid out [m][cell][k][k].
    std::vector<double> sample_blocks(double dt, int count) const;

private:
    MemoryKernel kernel_;
};

inline Eigen::VectorXd apply_memory(const MemoryOperator& r, std::span<const Eigen::VectorXd> history, int n,
                                    double dt)
{
    return r.apply(history, n, dt);
}

/// Assembled A u' + P u + B u + R[u] = f on a grid.
class DiscreteSystem {
public:
    DiscreteSystem(CoefficientField field, std::vector<RowMatrix> symbols, Boundary boundary);

    const Grid& grid() const { return field_.grid(); }
    int k() const { return field_.k(); }
    Eigen::Index size() const { return grid().state_size(k()); }
    const CoefficientField& coefficients() const { return field_; }
    const MassOperator& mass() const { return mass_; }
    const SkewOperator& skew() const { return *skew_; }
    const MemoryOperator& memory() const { return memory_; }
    const std::vector<RowMatrix>& symbols() const { return skew_->symbols(); }
    Boundary boundary() const { return skew_->boundary(); }

    bool has_lower_order() const { return has_b_; }
    Eigen::VectorXd apply_lower_order(const Eigen::VectorXd& u, bool transpose = false) const;
    SparseMatrix lower_order_matrix() const;

    /// Same spatial operator, new coefficients (must share grid and k).
    DiscreteSystem with_coefficients(CoefficientField field) const;
    DiscreteSystem with_time_axis(double dt, double t_end) const;

    /// Time reversal of a memory-free system: P -> -P, B -> -B.
    DiscreteSystem reversed() const;

    /// Largest characteristic speed max |eig(a^{-1} sum_j p_j xi_j)| over
    /// cells and sampled unit xi (1 degree steps in 2D, 2048-point
    /// Fibonacci sphere in 3D).
    double max_characteristic_speed() const;

private:
    DiscreteSystem(CoefficientField field, std::shared_ptr<const SkewOperator> skew, MassOperator mass);

    CoefficientField field_;
    std::shared_ptr<const SkewOperator> skew_;
    MassOperator mass_;
    MemoryOperator memory_;
    bool has_b_ = false;
};

/// Unit direction samples used for wavespeed sweeps in the given dimension.
std::vector<std::array<double, 3>> direction_samples(int dim);

/// Largest |lambda| solving (sum_j p_j xi_j) v = lambda a v.
double characteristic_speed(const RowMatrix& a, const std::vector<RowMatrix>& symbols,
                            const std::array<double, 3>& xi);

/// E = 1/2 <u, A u> with the cell-volume weighted inner product.
double energy(const MassOperator& mass, const Eigen::VectorXd& u, double cell_volume);
double energy(const DiscreteSystem& system, const Eigen::VectorXd& u);

/// Volume-weighted grid inner product and norm.
double grid_dot(const Grid& grid, const Eigen::VectorXd& u, const Eigen::VectorXd& v);
double grid_norm(const Grid& grid, const Eigen::VectorXd& u);

} // namespace roughwave
