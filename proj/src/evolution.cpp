#include "roughwave/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "roughwave/error.hpp"

namespace roughwave {

namespace {

using ColMatrix = Eigen::SparseMatrix<double>;

SparseMatrix block_diagonal(const std::vector<double>& blocks, int k)
{
    std::vector<Eigen::Triplet<double>> t;
    const auto kk = static_cast<std::size_t>(k) * k;
    const auto cells = static_cast<Eigen::Index>(blocks.size() / kk);
    for (Eigen::Index c = 0; c < cells; ++c)
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                const double v = blocks[c * kk + i * k + j];
                if (v != 0.0) t.emplace_back(c * k + i, c * k + j, v);
            }
    SparseMatrix m(cells * k, cells * k);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

void check_source(const DiscreteSystem& system, const SourceTerm& source)
{
    if (source.size() != 0 && source.size() != system.size())
        throw DimensionMismatch("source size does not match the system state size");
}

bool source_active(const SourceTerm& source)
{
    return source.size() != 0 && !source.is_zero();
}

struct Recorder {
    Trajectory& traj;
    const DiscreteSystem& system;
    int last;

    void operator()(int n, double t, const Eigen::VectorXd& u)
    {
        if (n % traj.stride != 0 && n != last) return;
        traj.times.push_back(t);
        traj.states.push_back(u);
        traj.energy.push_back(roughwave::energy(system, u));
    }
};

Trajectory empty_trajectory(const DiscreteSystem& system, const IntegratorConfig& config, double onset)
{
    if (config.stride < 1) throw InvalidArgument("trajectory stride must be at least 1");
    if (!(config.tolerance > 0.0)) throw InvalidArgument("solver tolerance must be positive");
    Trajectory traj;
    traj.grid = system.grid();
    traj.k = system.k();
    traj.scheme = config.scheme;
    traj.stride = config.stride;
    traj.source_onset = onset;
    const auto expected = static_cast<std::size_t>(system.grid().n_steps / config.stride + 2);
    traj.times.reserve(expected);
    traj.states.reserve(expected);
    traj.energy.reserve(expected);
    return traj;
}

double min_spacing(const Grid& g)
{
    double h = g.h[0];
    for (int a = 1; a < g.dim; ++a) h = std::min(h, g.h[a]);
    return h;
}

Trajectory run_midpoint(const DiscreteSystem& system, const Eigen::VectorXd& u0, double t0,
                        const std::function<void(int, double, Eigen::VectorXd&)>& forcing,
                        const IntegratorConfig& config, double onset)
{
    Trajectory traj = empty_trajectory(system, config, onset);
    const int steps = system.grid().n_steps;
    const double dt = system.grid().dt;
    MidpointStepper stepper(system, dt, config);
    auto mem = stepper.initial_memory();
    Recorder record{traj, system, steps};

    Eigen::VectorXd u = u0;
    Eigen::VectorXd f(system.size());
    record(0, t0, u);
    for (int n = 0; n < steps; ++n) {
        f.setZero();
        forcing(n, t0 + (n + 0.5) * dt, f);
        double res = 0.0;
        u = stepper.step(u, mem, f, &res);
        traj.max_solve_residual = std::max(traj.max_solve_residual, res);
        record(n + 1, t0 + (n + 1) * dt, u);
    }
    return traj;
}

Trajectory run_rk4(const DiscreteSystem& system, const Eigen::VectorXd& u0, double t0, const SourceTerm& source,
                   const IntegratorConfig& config, double onset)
{
    const auto& kernel = system.memory().kernel();
    if (kernel.kind() == MemoryKernel::Kind::Tabulated)
        throw UnsupportedConfiguration("RK4 supports zero or Prony memory kernels only");
    const double dt = system.grid().dt;
    const double limit = stable_dt(system, config.cfl_safety);
    if (dt > limit * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "RK4 time step " << dt << " exceeds the stability limit " << limit << " (CFL safety "
           << config.cfl_safety << "); use dt <= " << limit;
        throw StabilityError(os.str(), limit);
    }

    Trajectory traj = empty_trajectory(system, config, onset);
    const int steps = system.grid().n_steps;
    Recorder record{traj, system, steps};
    const auto& terms = kernel.prony_terms();
    const int k = system.k();
    const SparseMatrix& p = system.skew().matrix();
    const bool active = source_active(source);

    struct State {
        Eigen::VectorXd u;
        std::vector<Eigen::VectorXd> s;
    };
    Eigen::VectorXd fbuf(system.size());
    auto rate = [&](double t, const State& y) {
        State d;
        Eigen::VectorXd r = -(p * y.u) - system.apply_lower_order(y.u);
        for (std::size_t j = 0; j < terms.size(); ++j) r -= apply_cell_blocks(terms[j].weights, k, y.s[j]);
        if (active) {
            source.evaluate(t, fbuf);
            r += fbuf;
        }
        d.u = system.mass().solve(r);
        d.s.resize(terms.size());
        for (std::size_t j = 0; j < terms.size(); ++j) d.s[j] = y.u - y.s[j] / terms[j].tau;
        return d;
    };
    auto axpy = [](const State& y, double h, const State& d) {
        State out;
        out.u = y.u + h * d.u;
        out.s.resize(y.s.size());
        for (std::size_t j = 0; j < y.s.size(); ++j) out.s[j] = y.s[j] + h * d.s[j];
        return out;
    };

    State y{u0, std::vector<Eigen::VectorXd>(terms.size(), Eigen::VectorXd::Zero(system.size()))};
    record(0, t0, y.u);
    for (int n = 0; n < steps; ++n) {
        const double t = t0 + n * dt;
        const State k1 = rate(t, y);
        const State k2 = rate(t + 0.5 * dt, axpy(y, 0.5 * dt, k1));
        const State k3 = rate(t + 0.5 * dt, axpy(y, 0.5 * dt, k2));
        const State k4 = rate(t + dt, axpy(y, dt, k3));
        y.u += dt / 6.0 * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u);
        for (std::size_t j = 0; j < terms.size(); ++j)
            y.s[j] += dt / 6.0 * (k1.s[j] + 2.0 * k2.s[j] + 2.0 * k3.s[j] + k4.s[j]);
        record(n + 1, t + dt, y.u);
    }
    return traj;
}

} // namespace

const char* scheme_name(Scheme s)
{
    return s == Scheme::RK4 ? "RK4" : "ImplicitMidpoint";
}

// ----------------------------------------------------------- MidpointStepper

MidpointStepper::MidpointStepper(const DiscreteSystem& system, double dt, const IntegratorConfig& config,
                                 bool with_transpose)
    : system_(&system), dt_(dt), config_(config)
{
    if (!(dt > 0.0)) throw InvalidArgument("time step must be positive");
    const int k = system.k();
    const auto& kernel = system.memory().kernel();
    const auto block_len = static_cast<std::size_t>(system.grid().num_cells()) * k * k;

    std::vector<double> mem_new(block_len, 0.0);
    std::vector<double> mem_old(block_len, 0.0);
    if (kernel.kind() == MemoryKernel::Kind::Prony) {
        for (const auto& term : kernel.prony_terms()) {
            const auto st = prony_step(term.tau, dt);
            prony_.push_back({st, &term.weights});
            for (std::size_t i = 0; i < block_len; ++i) {
                mem_new[i] += st.from_new * term.weights[i];
                mem_old[i] += st.from_old * term.weights[i];
            }
        }
    } else if (kernel.kind() == MemoryKernel::Kind::Tabulated) {
        q_count_ = system.grid().n_steps + 2;
        q_samples_ = system.memory().sample_blocks(dt, q_count_);
        for (std::size_t i = 0; i < block_len; ++i) mem_new[i] = 0.5 * dt * q_samples_[i];
    }

    const SparseMatrix a = system.mass().matrix() / dt;
    SparseMatrix pb = system.skew().matrix();
    if (system.has_lower_order()) pb += system.lower_order_matrix();
    lhs_ = a + 0.5 * pb;
    rhs_ = a - 0.5 * pb;
    if (!kernel.is_zero()) {
        lhs_ += 0.5 * block_diagonal(mem_new, k);
        rhs_ -= 0.5 * block_diagonal(mem_old, k);
    }
    lhs_.makeCompressed();
    rhs_.makeCompressed();

    auto factor = [](const SparseMatrix& m) {
        auto lu = std::make_shared<Eigen::SparseLU<ColMatrix>>();
        ColMatrix cm = m;
        cm.makeCompressed();
        lu->analyzePattern(cm);
        lu->factorize(cm);
        if (lu->info() != Eigen::Success) throw SolverError("factorization of the midpoint step matrix failed");
        return lu;
    };
    lu_ = factor(lhs_);
    if (with_transpose) {
        lhs_t_ = lhs_.transpose();
        lu_t_ = factor(lhs_t_);
    }
}

MidpointStepper::Memory MidpointStepper::initial_memory() const
{
    Memory mem;
    mem.aux.assign(prony_.size(), Eigen::VectorXd::Zero(system_->size()));
    if (q_count_ > 0) mem.value = Eigen::VectorXd::Zero(system_->size());
    return mem;
}

Eigen::VectorXd MidpointStepper::apply_rhs(const Eigen::VectorXd& u) const
{
    return rhs_ * u;
}

Eigen::VectorXd MidpointStepper::apply_rhs_transpose(const Eigen::VectorXd& w) const
{
    return rhs_.transpose() * w;
}

Eigen::VectorXd MidpointStepper::refine(const Eigen::SparseLU<ColMatrix>& lu, const SparseMatrix& op,
                                        const Eigen::VectorXd& b, double* residual) const
{
    const double bn = b.norm();
    if (bn == 0.0) {
        if (residual) *residual = 0.0;
        return Eigen::VectorXd::Zero(b.size());
    }
    Eigen::VectorXd x = lu.solve(b);
    double rel = (b - op * x).norm() / bn;
    for (int it = 0; it < config_.max_iterations && rel > config_.tolerance; ++it) {
        x += lu.solve(b - op * x);
        rel = (b - op * x).norm() / bn;
    }
    if (!std::isfinite(rel) || rel > config_.tolerance) {
        std::ostringstream os;
        os << "implicit midpoint solve did not reach tolerance " << config_.tolerance << " (relative residual "
           << rel << " after " << config_.max_iterations << " refinement sweeps)";
        throw SolverError(os.str());
    }
    if (residual) *residual = rel;
    return x;
}

Eigen::VectorXd MidpointStepper::solve(const Eigen::VectorXd& b, double* residual) const
{
    return refine(*lu_, lhs_, b, residual);
}

Eigen::VectorXd MidpointStepper::solve_transpose(const Eigen::VectorXd& b, double* residual) const
{
    if (!lu_t_) throw InvalidArgument("stepper was built without the transposed factorization");
    return refine(*lu_t_, lhs_t_, b, residual);
}

Eigen::VectorXd MidpointStepper::step(const Eigen::VectorXd& u, Memory& mem, const Eigen::VectorXd& forcing,
                                      double* residual) const
{
    const int k = system_->k();
    const bool u_zero = mem.quiescent && u.isZero(0.0);
    if (u_zero && forcing.isZero(0.0)) {
        if (residual) *residual = 0.0;
        if (q_count_ > 0) {
            if (mem.history.empty()) mem.history.push_back(u);
            mem.history.push_back(Eigen::VectorXd::Zero(u.size()));
        }
        return Eigen::VectorXd::Zero(u.size());
    }

    Eigen::VectorXd b = rhs_ * u + forcing;
    Eigen::VectorXd hist_part;
    if (!prony_.empty() && !mem.quiescent) {
        for (std::size_t j = 0; j < prony_.size(); ++j)
            b -= 0.5 * (1.0 + prony_[j].step.decay) * apply_cell_blocks(*prony_[j].weights, k, mem.aux[j]);
    } else if (q_count_ > 0) {
        if (mem.history.empty()) mem.history.push_back(u);
        const int n = static_cast<int>(mem.history.size()) - 1;
        if (n + 1 >= q_count_) throw InvalidArgument("tabulated memory sampled past the configured time axis");
        const auto per = static_cast<std::size_t>(system_->grid().num_cells()) * k * k;
        auto q = [&](int m) { return std::span<const double>(q_samples_.data() + m * per, per); };
        hist_part = 0.5 * apply_cell_blocks(q(n + 1), k, mem.history[0]);
        for (int m = 1; m <= n; ++m) hist_part += apply_cell_blocks(q(n + 1 - m), k, mem.history[m]);
        hist_part *= dt_;
        b -= 0.5 * (mem.value + hist_part);
    }

    Eigen::VectorXd next = solve(b, residual);

    if (!prony_.empty()) {
        for (std::size_t j = 0; j < prony_.size(); ++j) {
            const auto& st = prony_[j].step;
            mem.aux[j] = st.decay * mem.aux[j] + st.from_old * u + st.from_new * next;
        }
    } else if (q_count_ > 0) {
        const auto per = static_cast<std::size_t>(system_->grid().num_cells()) * k * k;
        mem.value = 0.5 * dt_ * apply_cell_blocks(std::span<const double>(q_samples_.data(), per), k, next) +
                    hist_part;
        mem.history.push_back(next);
    }
    mem.quiescent = false;
    return next;
}

// -------------------------------------------------------------------- solves

double stable_dt(const DiscreteSystem& system, double safety)
{
    if (!(safety > 0.0)) throw InvalidArgument("CFL safety factor must be positive");
    const double c = system.max_characteristic_speed();
    if (c <= 0.0) return std::numeric_limits<double>::infinity();
    return safety * min_spacing(system.grid()) / c;
}

Trajectory solve_causal(const DiscreteSystem& system, const SourceTerm& source, const IntegratorConfig& config)
{
    check_source(system, source);
    const bool active = source_active(source);
    const double onset = active ? source.onset() : std::numeric_limits<double>::infinity();
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(system.size());
    auto forcing = [&](int, double t, Eigen::VectorXd& f) {
        if (active) source.evaluate(t, f);
    };
    Trajectory traj = config.scheme == Scheme::RK4 ? run_rk4(system, zero, 0.0, source, config, onset)
                                                   : run_midpoint(system, zero, 0.0, forcing, config, onset);
    traj.source_smoothness = active ? source.smoothness() : -1;
    return traj;
}

Trajectory solve_ivp(const DiscreteSystem& system, const Eigen::VectorXd& u0, double t0, const SourceTerm& source,
                     const IntegratorConfig& config)
{
    if (!system.memory().is_zero())
        throw UnsupportedConfiguration("initial-value solves require a zero memory kernel");
    if (u0.size() != system.size()) throw DimensionMismatch("initial state size does not match the system");
    check_source(system, source);
    const bool active = source_active(source);
    const double onset = active ? source.onset() : std::numeric_limits<double>::infinity();
    if (config.scheme == Scheme::RK4) return run_rk4(system, u0, t0, source, config, onset);
    auto forcing = [&](int, double t, Eigen::VectorXd& f) {
        if (active) source.evaluate(t, f);
    };
    return run_midpoint(system, u0, t0, forcing, config, onset);
}

Trajectory solve_midpoint_forced(const DiscreteSystem& system,
                                 const std::function<void(int, Eigen::VectorXd&)>& half_step_forcing,
                                 const IntegratorConfig& config)
{
    IntegratorConfig cfg = config;
    cfg.scheme = Scheme::ImplicitMidpoint;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(system.size());
    auto forcing = [&](int n, double, Eigen::VectorXd& f) { half_step_forcing(n, f); };
    return run_midpoint(system, zero, 0.0, forcing, cfg, 0.0);
}

std::vector<double> energy_identity_residual(const Trajectory& traj, const DiscreteSystem& system,
                                             const SourceTerm& source)
{
    if (traj.decimated()) throw InvalidArgument("energy identity needs an undecimated trajectory");
    if (!traj.grid.same_space(system.grid()) || traj.k != system.k())
        throw DimensionMismatch("trajectory does not belong to this system");
    check_source(system, source);
    const std::size_t n = traj.size();
    if (n < 2) return {};
    const double dt = traj.times[1] - traj.times[0];
    const double vol = system.grid().cell_volume();
    const auto mem = system.memory().apply_all(traj.states, dt);
    const bool active = source_active(source);

    std::vector<double> power(n);
    Eigen::VectorXd f(system.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& u = traj.states[i];
        Eigen::VectorXd g = -system.apply_lower_order(u) - mem[i];
        if (active) {
            source.evaluate(traj.times[i], f);
            g += f;
        }
        power[i] = vol * g.dot(u);
    }
    std::vector<double> r(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double e0 = energy(system, traj.states[i]);
        const double e1 = energy(system, traj.states[i + 1]);
        r[i] = (e1 - e0) - 0.5 * dt * (power[i] + power[i + 1]);
    }
    return r;
}

Trajectory smooth_trajectory(const Trajectory& traj, int window)
{
    if (window < 1) throw InvalidArgument("smoothing window must be at least one step");
    Trajectory out = traj;
    out.energy.clear();
    if (window == 1 || traj.states.empty()) {
        out.energy = traj.energy;
        return out;
    }
    std::vector<double> w(2 * window - 1);
    double total = 0.0;
    for (int m = -(window - 1); m <= window - 1; ++m) {
        w[m + window - 1] = 1.0 - std::abs(m) / static_cast<double>(window);
        total += w[m + window - 1];
    }
    for (double& x : w) x /= total;
    const int count = static_cast<int>(traj.states.size());
    for (int n = 0; n < count; ++n) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(traj.states[n].size());
        for (int m = -(window - 1); m <= window - 1; ++m) {
            const int src = n - m;
            if (src < 0) continue;
            acc += w[m + window - 1] * traj.states[std::min(src, count - 1)];
        }
        out.states[n] = std::move(acc);
    }
    return out;
}

Trajectory smooth_trajectory(const Trajectory& traj, int window, const DiscreteSystem& system)
{
    Trajectory out = smooth_trajectory(traj, window);
    out.energy.clear();
    for (const auto& u : out.states) out.energy.push_back(energy(system, u));
    return out;
}

std::vector<double> graph_norm_series(const Trajectory& traj, const DiscreteSystem& system)
{
    if (!traj.grid.same_space(system.grid()) || traj.k != system.k())
        throw DimensionMismatch("trajectory does not belong to this system");
    std::vector<double> out;
    out.reserve(traj.size());
    for (const auto& u : traj.states)
        out.push_back(grid_norm(system.grid(), u) + grid_norm(system.grid(), system.skew().apply(u)));
    return out;
}

} // namespace roughwave
