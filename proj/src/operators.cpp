#include "roughwave/operators.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "roughwave/error.hpp"

namespace roughwave {

namespace {

using Triplet = Eigen::Triplet<double>;


void check_blocks(int k, std::span<const double> blocks, const Grid* grid)
{
    if (k < 1 || blocks.size() % (static_cast<std::size_t>(k) * k) != 0)
        throw DimensionMismatch("mass blocks do not divide into k x k cells");
    const int cells = static_cast<int>(blocks.size() / (static_cast<std::size_t>(k) * k));
    if (grid && cells != grid->num_cells()) throw DimensionMismatch("mass blocks do not match the grid");
    for (int c = 0; c < cells; ++c) {
        CellMatrix m(blocks.data() + static_cast<std::size_t>(c) * k * k, k, k);
        const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
        const bool sym = m.allFinite() && (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (!sym || llt.info() != Eigen::Success) {
            const std::string where = grid ? describe_cell(*grid, c) : "cell " + std::to_string(c);
            throw InvalidCoefficient("mass block is not symmetric positive definite at " + where);
        }
    }
}

} // namespace

Eigen::VectorXd apply_cell_blocks(std::span<const double> blocks, int k, const Eigen::VectorXd& x, bool transpose)
{
    const auto kk = static_cast<std::size_t>(k) * k;
    if (blocks.size() / kk * k != static_cast<std::size_t>(x.size()))
        throw DimensionMismatch("state size does not match cell blocks");
    Eigen::VectorXd y(x.size());
    const Eigen::Index cells = x.size() / k;
    for (Eigen::Index c = 0; c < cells; ++c) {
        CellMatrix m(blocks.data() + c * kk, k, k);
        if (transpose)
            y.segment(c * k, k).noalias() = m.transpose() * x.segment(c * k, k);
        else
            y.segment(c * k, k).noalias() = m * x.segment(c * k, k);
    }
    return y;
}

// -------------------------------------------------------------- MassOperator

MassOperator::MassOperator(int k, std::vector<double> blocks) : k_(k), blocks_(std::move(blocks))
{
    check_blocks(k_, blocks_, nullptr);
    const int cells = static_cast<int>(blocks_.size() / (static_cast<std::size_t>(k_) * k_));
    factors_.reserve(cells);
    lower_ = std::numeric_limits<double>::infinity();
    upper_ = 0.0;
    for (int c = 0; c < cells; ++c) {
        Eigen::MatrixXd m = block(c);
        factors_.emplace_back(m);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        lower_ = std::min(lower_, es.eigenvalues()(0));
        upper_ = std::max(upper_, es.eigenvalues()(k_ - 1));
    }
}

Eigen::VectorXd MassOperator::apply(const Eigen::VectorXd& u) const
{
    return apply_cell_blocks(blocks_, k_, u);
}

Eigen::VectorXd MassOperator::solve(const Eigen::VectorXd& v) const
{
    if (v.size() != static_cast<Eigen::Index>(factors_.size()) * k_)
        throw DimensionMismatch("state size does not match mass operator");
    Eigen::VectorXd x(v.size());
    for (std::size_t c = 0; c < factors_.size(); ++c) {
        const auto off = static_cast<Eigen::Index>(c) * k_;
        x.segment(off, k_) = factors_[c].solve(v.segment(off, k_));
    }
    return x;
}

SparseMatrix MassOperator::matrix() const
{
    std::vector<Triplet> t;
    t.reserve(blocks_.size());
    for (int c = 0; c < cells(); ++c)
        for (int i = 0; i < k_; ++i)
            for (int j = 0; j < k_; ++j) {
                const double v = blocks_[(static_cast<std::size_t>(c) * k_ + i) * k_ + j];
                if (v != 0.0) t.emplace_back(c * k_ + i, c * k_ + j, v);
            }
    SparseMatrix m(static_cast<Eigen::Index>(cells()) * k_, static_cast<Eigen::Index>(cells()) * k_);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

MassOperator assemble_mass(const CoefficientField& field)
{
    return assemble_mass(field.grid(), field.k(), field.a_values());
}

MassOperator assemble_mass(const Grid& grid, int k, std::vector<double> blocks)
{
    check_blocks(k, blocks, &grid);
    return MassOperator(k, std::move(blocks));
}

// -------------------------------------------------------------- SkewOperator

SkewOperator::SkewOperator(SparseMatrix matrix, std::vector<RowMatrix> symbols, Boundary boundary, int k)
    : matrix_(std::move(matrix)), symbols_(std::move(symbols)), boundary_(boundary), k_(k)
{
}

SkewOperator SkewOperator::negated() const
{
    std::vector<RowMatrix> neg;
    neg.reserve(symbols_.size());
    for (const auto& p : symbols_) neg.push_back(-p);
    SparseMatrix m = -matrix_;
    return SkewOperator(std::move(m), std::move(neg), boundary_, k_);
}

void SkewOperator::export_coordinate(std::ostream& os) const
{
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << matrix_.rows() << ' ' << matrix_.cols() << ' ' << matrix_.nonZeros() << '\n';
    os << std::setprecision(17);
    for (Eigen::Index r = 0; r < matrix_.outerSize(); ++r)
        for (SparseMatrix::InnerIterator it(matrix_, r); it; ++it)
            os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

SkewOperator assemble_skew(const std::vector<RowMatrix>& symbols, const Grid& grid, Boundary boundary)
{
    if (static_cast<int>(symbols.size()) != grid.dim)
        throw DimensionMismatch("need one symbol matrix per spatial axis");
    const int k = static_cast<int>(symbols.front().rows());
    for (const auto& p : symbols) {
        if (p.rows() != k || p.cols() != k) throw DimensionMismatch("symbol matrices must all be k x k");
        const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
        if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-14 * scale)
            throw InvalidArgument("symbol matrices p_j must be symmetric");
    }

    if (boundary == Boundary::AcousticFree) {
        if (k != grid.dim + 1)
            throw UnsupportedConfiguration("AcousticFree closure needs k = dim + 1 (pressure plus velocity)");
        for (int j = 0; j < grid.dim; ++j)
            for (int r = 0; r < k; ++r)
                for (int c = 0; c < k; ++c) {
                    const bool coupling = (r == 0 && c == j + 1) || (c == 0 && r == j + 1);
                    if (!coupling && symbols[j](r, c) != 0.0)
                        throw UnsupportedConfiguration(
                            "AcousticFree closure needs p_j to couple only pressure and velocity component j");
                }
    }

    const int cells = grid.num_cells();
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(cells) * grid.dim * 2 * k * k);
    for (int axis = 0; axis < grid.dim; ++axis) {
        const RowMatrix& p = symbols[axis];
        if (p.cwiseAbs().maxCoeff() == 0.0) continue;
        const double w = 1.0 / (2.0 * grid.h[axis]);
        const int n = grid.cells[axis];
        for (int c = 0; c < cells; ++c) {
            auto ijk = grid.multi_index(c);
            const int i = ijk[axis];
            if (boundary == Boundary::Periodic) {
                ijk[axis] = (i + 1) % n;
                const int up = grid.index(ijk);
                ijk[axis] = (i + n - 1) % n;
                const int down = grid.index(ijk);
                for (int r = 0; r < k; ++r)
                    for (int q = 0; q < k; ++q) {
                        if (p(r, q) == 0.0) continue;
                        t.emplace_back(c * k + r, up * k + q, w * p(r, q));
                        t.emplace_back(c * k + r, down * k + q, -w * p(r, q));
                    }
            } else {
                // Pressure gradient with odd ghosts (p = 0 on the wall); the
                // velocity divergence uses the negated transpose, which is the
                // matching even-ghost closure.
                const double sigma = p(axis + 1, 0);
                std::vector<std::pair<int, double>> row;
                if (i + 1 < n) {
                    ijk[axis] = i + 1;
                    row.emplace_back(grid.index(ijk), w);
                } else {
                    row.emplace_back(c, -w);
                }
                if (i > 0) {
                    ijk[axis] = i - 1;
                    row.emplace_back(grid.index(ijk), -w);
                } else {
                    row.emplace_back(c, w);
                }
                const int vel = axis + 1;
                for (const auto& [col, val] : row) {
                    t.emplace_back(c * k + vel, col * k, sigma * val);
                    t.emplace_back(col * k, c * k + vel, -sigma * val);
                }
            }
        }
    }
    const auto size = static_cast<Eigen::Index>(cells) * k;
    SparseMatrix m(size, size);
    m.setFromTriplets(t.begin(), t.end());
    m.prune(0.0);
    return SkewOperator(std::move(m), symbols, boundary, k);
}

// -------------------------------------------------------------------- memory

PronyStep prony_step(double tau, double dt)
{
    if (!(tau > 0.0) || !(dt > 0.0)) throw InvalidArgument("Prony step needs positive tau and dt");
    const double x = dt / tau;
    const double e = std::exp(-x);
    // With r = dt - s: i0 = int_0^dt e^{-r/tau} dr, i1 = int_0^dt r e^{-r/tau} dr.
    // u_n carries weight r / dt, u_{n+1} carries 1 - r / dt.
    const double one_minus_e = -std::expm1(-x);
    const double i0 = tau * one_minus_e;
    const double i1 = tau * tau * one_minus_e - tau * dt * e;
    return {e, i1 / dt, i0 - i1 / dt};
}

std::vector<Eigen::VectorXd> prony_advance(const std::vector<Eigen::VectorXd>& aux, const Eigen::VectorXd& u_old,
                                           const Eigen::VectorXd& u_new, double dt,
                                           const std::vector<PronyTerm>& terms)
{
    if (aux.size() != terms.size()) throw DimensionMismatch("one auxiliary state per Prony term expected");
    std::vector<Eigen::VectorXd> out(aux.size());
    for (std::size_t j = 0; j < terms.size(); ++j) {
        if (aux[j].size() != u_old.size() || u_new.size() != u_old.size())
            throw DimensionMismatch("auxiliary state size mismatch");
        const auto st = prony_step(terms[j].tau, dt);
        out[j] = st.decay * aux[j] + st.from_old * u_old + st.from_new * u_new;
    }
    return out;
}

std::vector<double> MemoryOperator::sample_blocks(double dt, int count) const
{
    const int cells = kernel_.cells();
    const int k = kernel_.k();
    const auto kk = static_cast<std::size_t>(k) * k;
    std::vector<double> out(static_cast<std::size_t>(count) * cells * kk, 0.0);
    if (kernel_.is_zero()) return out;
    for (int m = 0; m < count; ++m)
        for (int c = 0; c < cells; ++c) {
            RowMatrix q = kernel_.evaluate(c, m * dt);
            std::copy(q.data(), q.data() + kk, out.begin() + (static_cast<std::size_t>(m) * cells + c) * kk);
        }
    return out;
}

std::vector<Eigen::VectorXd> MemoryOperator::apply_all(std::span<const Eigen::VectorXd> history, double dt) const
{
    std::vector<Eigen::VectorXd> out;
    if (history.empty()) return out;
    const Eigen::Index size = history.front().size();
    out.assign(history.size(), Eigen::VectorXd::Zero(size));
    if (kernel_.is_zero()) return out;
    const int k = kernel_.k();
    if (size != static_cast<Eigen::Index>(kernel_.cells()) * k)
        throw DimensionMismatch("history state size does not match memory kernel");

    if (kernel_.kind() == MemoryKernel::Kind::Prony) {
        const auto& terms = kernel_.prony_terms();
        std::vector<Eigen::VectorXd> aux(terms.size(), Eigen::VectorXd::Zero(size));
        for (std::size_t n = 1; n < history.size(); ++n) {
            aux = prony_advance(aux, history[n - 1], history[n], dt, terms);
            for (std::size_t j = 0; j < terms.size(); ++j) out[n] += apply_cell_blocks(terms[j].weights, k, aux[j]);
        }
        return out;
    }

    const int count = static_cast<int>(history.size());
    const auto q = sample_blocks(dt, count);
    const auto per = static_cast<std::size_t>(kernel_.cells()) * k * k;
    auto qblock = [&](int m) { return std::span<const double>(q.data() + m * per, per); };
    for (int n = 1; n < count; ++n) {
        Eigen::VectorXd acc = 0.5 * apply_cell_blocks(qblock(0), k, history[n]);
        acc += 0.5 * apply_cell_blocks(qblock(n), k, history[0]);
        for (int m = 1; m < n; ++m) acc += apply_cell_blocks(qblock(n - m), k, history[m]);
        out[n] = dt * acc;
    }
    return out;
}

Eigen::VectorXd MemoryOperator::apply(std::span<const Eigen::VectorXd> history, int n, double dt) const
{
    if (n < 0 || static_cast<std::size_t>(n) >= history.size())
        throw InvalidArgument("memory evaluation needs history up to the requested step");
    if (kernel_.is_zero()) return Eigen::VectorXd::Zero(history.front().size());
    if (kernel_.kind() == MemoryKernel::Kind::Prony) return apply_all(history.first(n + 1), dt).back();

    const int k = kernel_.k();
    const auto q = sample_blocks(dt, n + 1);
    const auto per = static_cast<std::size_t>(kernel_.cells()) * k * k;
    auto qblock = [&](int m) { return std::span<const double>(q.data() + m * per, per); };
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(history.front().size());
    if (n == 0) return acc;
    acc += 0.5 * apply_cell_blocks(qblock(0), k, history[n]);
    acc += 0.5 * apply_cell_blocks(qblock(n), k, history[0]);
    for (int m = 1; m < n; ++m) acc += apply_cell_blocks(qblock(n - m), k, history[m]);
    return dt * acc;
}

// ------------------------------------------------------------ DiscreteSystem

DiscreteSystem::DiscreteSystem(CoefficientField field, std::vector<RowMatrix> symbols, Boundary boundary)
    : field_(std::move(field))
{
    if (!symbols.empty() && symbols.front().rows() != field_.k())
        throw DimensionMismatch("symbol matrices do not match the state width");
    skew_ = std::make_shared<const SkewOperator>(assemble_skew(symbols, field_.grid(), boundary));
    mass_ = assemble_mass(field_);
    memory_ = MemoryOperator(field_.memory());
    has_b_ = std::any_of(field_.b_values().begin(), field_.b_values().end(), [](double v) { return v != 0.0; });
}

DiscreteSystem::DiscreteSystem(CoefficientField field, std::shared_ptr<const SkewOperator> skew, MassOperator mass)
    : field_(std::move(field)), skew_(std::move(skew)), mass_(std::move(mass)), memory_(field_.memory())
{
    has_b_ = std::any_of(field_.b_values().begin(), field_.b_values().end(), [](double v) { return v != 0.0; });
}

Eigen::VectorXd DiscreteSystem::apply_lower_order(const Eigen::VectorXd& u, bool transpose) const
{
    if (!has_b_) return Eigen::VectorXd::Zero(u.size());
    return apply_cell_blocks(field_.b_values(), k(), u, transpose);
}

SparseMatrix DiscreteSystem::lower_order_matrix() const
{
    const int kk = k();
    std::vector<Triplet> t;
    const auto& b = field_.b_values();
    for (int c = 0; c < grid().num_cells(); ++c)
        for (int i = 0; i < kk; ++i)
            for (int j = 0; j < kk; ++j) {
                const double v = b[(static_cast<std::size_t>(c) * kk + i) * kk + j];
                if (v != 0.0) t.emplace_back(c * kk + i, c * kk + j, v);
            }
    SparseMatrix m(size(), size());
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

DiscreteSystem DiscreteSystem::with_coefficients(CoefficientField field) const
{
    if (!field.grid().same_space(grid()) || field.k() != k())
        throw DimensionMismatch("replacement coefficients must share grid and state width");
    MassOperator mass = assemble_mass(field);
    return DiscreteSystem(std::move(field), skew_, std::move(mass));
}

DiscreteSystem DiscreteSystem::with_time_axis(double dt, double t_end) const
{
    return DiscreteSystem(field_.with_time_axis(dt, t_end), skew_, mass_);
}

DiscreteSystem DiscreteSystem::reversed() const
{
    if (!memory_.is_zero()) throw UnsupportedConfiguration("time reversal is only defined without memory");
    std::vector<double> b = field_.b_values();
    for (double& v : b) v = -v;
    CoefficientField f = field_.with_values(field_.a_values(), std::move(b), MemoryKernel::zero());
    return DiscreteSystem(std::move(f), std::make_shared<const SkewOperator>(skew_->negated()), mass_);
}

std::vector<std::array<double, 3>> direction_samples(int dim)
{
    std::vector<std::array<double, 3>> out;
    if (dim == 1) {
        out.push_back({1.0, 0.0, 0.0});
    } else if (dim == 2) {
        // Speeds are even in xi, so half a circle suffices.
        for (int d = 0; d < 180; ++d) {
            const double th = d * std::numbers::pi / 180.0;
            out.push_back({std::cos(th), std::sin(th), 0.0});
        }
    } else {
        constexpr int n = 2048;
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < n; ++i) {
            const double z = 1.0 - (2.0 * i + 1.0) / n;
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            const double phi = golden * i;
            out.push_back({r * std::cos(phi), r * std::sin(phi), z});
        }
    }
    return out;
}

double characteristic_speed(const RowMatrix& a, const std::vector<RowMatrix>& symbols,
                            const std::array<double, 3>& xi)
{
    const auto k = a.rows();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t j = 0; j < symbols.size() && j < 3; ++j) m += xi[j] * symbols[j];
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw InvalidCoefficient("coefficient a is not positive definite");
    const Eigen::MatrixXd l = llt.matrixL();
    Eigen::MatrixXd s = l.triangularView<Eigen::Lower>().solve(m);
    s = l.triangularView<Eigen::Lower>().solve(s.transpose()).transpose();
    s = 0.5 * (s + s.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double DiscreteSystem::max_characteristic_speed() const
{
    const auto dirs = direction_samples(grid().dim);
    std::map<std::vector<double>, double> seen;
    const int kk = k() * k();
    double best = 0.0;
    for (int c = 0; c < grid().num_cells(); ++c) {
        const double* blk = field_.a_values().data() + static_cast<std::size_t>(c) * kk;
        std::vector<double> key(blk, blk + kk);
        auto it = seen.find(key);
        if (it == seen.end()) {
            const RowMatrix a = field_.a(c);
            double s = 0.0;
            for (const auto& xi : dirs) s = std::max(s, characteristic_speed(a, symbols(), xi));
            it = seen.emplace(std::move(key), s).first;
        }
        best = std::max(best, it->second);
    }
    return best;
}

// -------------------------------------------------------------------- energy

double energy(const MassOperator& mass, const Eigen::VectorXd& u, double cell_volume)
{
    if (u.size() != static_cast<Eigen::Index>(mass.cells()) * mass.k())
        throw DimensionMismatch("state size does not match mass operator");
    return 0.5 * cell_volume * u.dot(mass.apply(u));
}

double energy(const DiscreteSystem& system, const Eigen::VectorXd& u)
{
    return energy(system.mass(), u, system.grid().cell_volume());
}

double grid_dot(const Grid& grid, const Eigen::VectorXd& u, const Eigen::VectorXd& v)
{
    if (u.size() != v.size()) throw DimensionMismatch("grid inner product of different sizes");
    return grid.cell_volume() * u.dot(v);
}

double grid_norm(const Grid& grid, const Eigen::VectorXd& u)
{
    return std::sqrt(grid_dot(grid, u, u));
}

} // namespace roughwave
