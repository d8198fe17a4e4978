#include "roughwave/sensitivity.hpp"

#include <cmath>
#include <limits>

#include "roughwave/error.hpp"

namespace roughwave {

namespace fs = std::filesystem;

namespace {

constexpr double kTauMatch = 1e-12;

bool same_tau(double a, double b)
{
    return std::abs(a - b) <= kTauMatch * std::max(std::abs(a), std::abs(b));
}

void require_midpoint_ready(const DiscreteSystem& system)
{
    if (system.memory().kernel().kind() == MemoryKernel::Kind::Tabulated)
        throw UnsupportedConfiguration("sensitivities support zero or Prony memory kernels only");
}

void require_dense(const Trajectory& traj, const DiscreteSystem& system, const char* what)
{
    if (traj.decimated()) throw InvalidArgument(std::string(what) + " must be undecimated (stride 1)");
    if (!traj.grid.same_space(system.grid()) || traj.k != system.k())
        throw DimensionMismatch(std::string(what) + " does not belong to this system");
    if (traj.size() != static_cast<std::size_t>(system.grid().n_steps) + 1)
        throw DimensionMismatch(std::string(what) + " does not cover the system time axis");
}

IntegratorConfig dense_midpoint(IntegratorConfig config)
{
    config.scheme = Scheme::ImplicitMidpoint;
    config.stride = 1;
    return config;
}

/// Prony auxiliary states of u for the given terms, advanced one step at a time.
struct AuxRecursion {
    std::vector<PronyStep> steps;
    std::vector<Eigen::VectorXd> s;

    AuxRecursion(const std::vector<PronyTerm>& terms, double dt, Eigen::Index size)
    {
        for (const auto& t : terms) {
            steps.push_back(prony_step(t.tau, dt));
            s.push_back(Eigen::VectorXd::Zero(size));
        }
    }

    /// Advances to the next step and returns the averages over the step.
    std::vector<Eigen::VectorXd> advance(const Eigen::VectorXd& u0, const Eigen::VectorXd& u1)
    {
        std::vector<Eigen::VectorXd> mean(s.size());
        for (std::size_t j = 0; j < s.size(); ++j) {
            Eigen::VectorXd next = steps[j].decay * s[j] + steps[j].from_old * u0 + steps[j].from_new * u1;
            mean[j] = 0.5 * (s[j] + next);
            s[j] = std::move(next);
        }
        return mean;
    }
};

/// g(cell) += scale * (x_i y_l), optionally symmetrized.
void accumulate_outer(std::vector<double>& g, int k, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      double scale, bool symmetrize)
{
    const auto cells = static_cast<std::size_t>(x.size() / k);
    for (std::size_t c = 0; c < cells; ++c) {
        const double* xc = x.data() + c * k;
        const double* yc = y.data() + c * k;
        double* gc = g.data() + c * k * k;
        for (int i = 0; i < k; ++i)
            for (int l = 0; l < k; ++l)
                gc[i * k + l] += symmetrize ? 0.5 * scale * (xc[i] * yc[l] + yc[i] * xc[l]) : scale * xc[i] * yc[l];
    }
}

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

// ------------------------------------------------------------- perturbation

bool CoefficientPerturbation::is_zero() const
{
    auto zero = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    if (!zero(da) || !zero(db)) return false;
    for (const auto& t : dq.prony_terms())
        if (!zero(t.weights)) return false;
    return true;
}

CoefficientPerturbation CoefficientPerturbation::scaled(double factor) const
{
    CoefficientPerturbation out = *this;
    for (double& x : out.da) x *= factor;
    for (double& x : out.db) x *= factor;
    out.dq = dq.map_cell_arrays([factor](std::span<const double> v) {
        std::vector<double> w(v.begin(), v.end());
        for (double& x : w) x *= factor;
        return w;
    });
    return out;
}

void CoefficientPerturbation::validate(const DiscreteSystem& system) const
{
    const int k = system.k();
    const auto per = static_cast<std::size_t>(system.grid().num_cells()) * k * k;
    if (!da.empty() && da.size() != per) throw DimensionMismatch("delta a has the wrong size");
    if (!db.empty() && db.size() != per) throw DimensionMismatch("delta b has the wrong size");
    for (std::size_t c = 0; c < da.size() / (static_cast<std::size_t>(k) * k); ++c) {
        const double* blk = da.data() + c * k * k;
        for (int i = 0; i < k; ++i)
            for (int l = i + 1; l < k; ++l)
                if (std::abs(blk[i * k + l] - blk[l * k + i]) >
                    1e-12 * std::max({1.0, std::abs(blk[i * k + l]), std::abs(blk[l * k + i])}))
                    throw InvalidCoefficient("delta a is not symmetric at " +
                                             describe_cell(system.grid(), static_cast<int>(c)));
    }
    if (dq.kind() == MemoryKernel::Kind::Tabulated)
        throw UnsupportedConfiguration("kernel perturbations must be Prony series");
    if (!dq.is_zero() && (dq.k() != k || dq.cells() != system.grid().num_cells()))
        throw DimensionMismatch("delta q does not match the system layout");
}

CoefficientPerturbation CoefficientPerturbation::cell_bump(const DiscreteSystem& system, int cell,
                                                           const RowMatrix& da_block, const RowMatrix& db_block)
{
    const int k = system.k();
    if (cell < 0 || cell >= system.grid().num_cells()) throw InvalidArgument("bump cell out of range");
    const auto per = static_cast<std::size_t>(system.grid().num_cells()) * k * k;
    CoefficientPerturbation p;
    auto place = [&](const RowMatrix& blk, std::vector<double>& dst) {
        if (blk.size() == 0) return;
        if (blk.rows() != k || blk.cols() != k) throw DimensionMismatch("bump block must be k x k");
        dst.assign(per, 0.0);
        std::copy(blk.data(), blk.data() + k * k, dst.begin() + static_cast<std::ptrdiff_t>(cell) * k * k);
    };
    place(da_block, p.da);
    place(db_block, p.db);
    return p;
}

CoefficientField perturbed_field(const CoefficientField& field, const CoefficientPerturbation& delta, double h)
{
    std::vector<double> a = field.a_values();
    std::vector<double> b = field.b_values();
    for (std::size_t i = 0; i < delta.da.size(); ++i) a[i] += h * delta.da[i];
    for (std::size_t i = 0; i < delta.db.size(); ++i) b[i] += h * delta.db[i];
    MemoryKernel q = field.memory();
    if (!delta.dq.is_zero()) {
        const int cells = field.cells();
        const int k = field.k();
        std::vector<PronyTerm> terms = q.prony_terms();
        for (const auto& d : delta.dq.prony_terms()) {
            auto it = std::find_if(terms.begin(), terms.end(), [&](const PronyTerm& t) { return same_tau(t.tau, d.tau); });
            if (it == terms.end()) {
                terms.push_back({d.tau, std::vector<double>(d.weights.size(), 0.0)});
                it = terms.end() - 1;
            }
            for (std::size_t i = 0; i < d.weights.size(); ++i) it->weights[i] += h * d.weights[i];
        }
        q = MemoryKernel::prony(cells, k, std::move(terms));
    }
    return field.with_values(std::move(a), std::move(b), std::move(q));
}

// -------------------------------------------------------- tangent and adjoint

Trajectory directional_derivative(const DiscreteSystem& system, const Trajectory& base,
                                  const CoefficientPerturbation& delta, const IntegratorConfig& config)
{
    require_midpoint_ready(system);
    require_dense(base, system, "base trajectory");
    if (base.scheme != Scheme::ImplicitMidpoint)
        throw UnsupportedConfiguration("directional derivatives need an implicit-midpoint base trajectory");
    delta.validate(system);
    if (base.source_smoothness >= 0 && base.source_smoothness < 2)
        warn("base source smoothness " + std::to_string(base.source_smoothness) +
             " is below 2; the derivative may not exist in the continuum limit");

    const int k = system.k();
    const double dt = system.grid().dt;
    AuxRecursion aux(delta.dq.prony_terms(), dt, system.size());
    auto forcing = [&](int n, Eigen::VectorXd& f) {
        const auto& u0 = base.states[n];
        const auto& u1 = base.states[n + 1];
        f.setZero();
        if (!delta.da.empty()) f -= apply_cell_blocks(delta.da, k, (u1 - u0) / dt);
        if (!delta.db.empty()) f -= apply_cell_blocks(delta.db, k, 0.5 * (u0 + u1));
        const auto mean = aux.advance(u0, u1);
        for (std::size_t j = 0; j < mean.size(); ++j)
            f -= apply_cell_blocks(delta.dq.prony_terms()[j].weights, k, mean[j]);
    };
    return solve_midpoint_forced(system, forcing, dense_midpoint(config));
}

double objective(const SeismogramData& predicted, const SeismogramData& observed, double dt)
{
    if (!predicted.aligned_with(observed)) throw DimensionMismatch("predicted and observed data are not aligned");
    return 0.5 * dt * (predicted.values - observed.values).squaredNorm();
}

double objective(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                 const SeismogramData& observed, const IntegratorConfig& config)
{
    const SeismogramData f = sample_trajectory(sampler, solve_causal(system, source, dense_midpoint(config)));
    return objective(f, observed, system.grid().dt);
}

SeismogramData data_residual(const SeismogramData& predicted, const SeismogramData& observed)
{
    if (!predicted.aligned_with(observed)) throw DimensionMismatch("predicted and observed data are not aligned");
    SeismogramData r = predicted;
    r.values = observed.values - predicted.values;
    return r;
}

Trajectory adjoint_solve(const DiscreteSystem& system, const SeismogramData& residual, const Sampler& sampler,
                         const IntegratorConfig& config)
{
    require_midpoint_ready(system);
    const int steps = system.grid().n_steps;
    if (residual.samples() != steps + 1) throw DimensionMismatch("residual does not cover the system time axis");
    if (residual.channels() != sampler.channels()) throw DimensionMismatch("residual and sampler channels differ");
    if (!sampler.grid().same_space(system.grid()) || sampler.k() != system.k())
        throw DimensionMismatch("sampler does not belong to this system");

    const IntegratorConfig cfg = dense_midpoint(config);
    const double dt = system.grid().dt;
    const int k = system.k();
    MidpointStepper stepper(system, dt, cfg, true);
    const auto& prony = stepper.prony();
    const SparseMatrix st = sampler.matrix().transpose();
    const Eigen::Index size = system.size();

    Trajectory w;
    w.grid = system.grid();
    w.k = k;
    w.scheme = Scheme::ImplicitMidpoint;
    w.stride = 1;
    w.states.assign(static_cast<std::size_t>(steps) + 1, Eigen::VectorXd::Zero(size));
    for (int n = 0; n <= steps; ++n) w.times.push_back(n * dt);

    Eigen::VectorXd w_next = Eigen::VectorXd::Zero(size);
    std::vector<Eigen::VectorXd> nu_next(prony.size(), Eigen::VectorXd::Zero(size));
    std::vector<Eigen::VectorXd> nu(prony.size());
    for (int m = steps; m >= 0; --m) {
        Eigen::VectorXd b = stepper.apply_rhs_transpose(w_next) + st * residual.values.col(m);
        for (std::size_t j = 0; j < prony.size(); ++j) {
            const auto& ps = prony[j].step;
            nu[j] = ps.decay * nu_next[j] -
                    0.5 * (1.0 + ps.decay) * apply_cell_blocks(*prony[j].weights, k, w_next, true);
            b += ps.from_old * nu_next[j] + ps.from_new * nu[j];
        }
        double res = 0.0;
        w.states[m] = stepper.solve_transpose(b, &res);
        w.max_solve_residual = std::max(w.max_solve_residual, res);
        w_next = w.states[m];
        std::swap(nu, nu_next);
    }
    return w;
}

// ------------------------------------------------------------------ gradient

bool GradientReport::is_zero() const
{
    auto zero = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    if (!zero(g_a) || !zero(g_b)) return false;
    for (const auto& g : g_q)
        if (!zero(g)) return false;
    return true;
}

GradientReport& GradientReport::operator+=(const GradientReport& other)
{
    if (g_a.size() != other.g_a.size() || g_q.size() != other.g_q.size())
        throw DimensionMismatch("gradient reports have different layouts");
    for (std::size_t i = 0; i < g_a.size(); ++i) g_a[i] += other.g_a[i];
    for (std::size_t i = 0; i < g_b.size(); ++i) g_b[i] += other.g_b[i];
    for (std::size_t j = 0; j < g_q.size(); ++j)
        for (std::size_t i = 0; i < g_q[j].size(); ++i) g_q[j][i] += other.g_q[j][i];
    objective += other.objective;
    return *this;
}

GradientReport assemble_gradient(const Trajectory& u, const Trajectory& w, const DiscreteSystem& system)
{
    require_midpoint_ready(system);
    require_dense(u, system, "forward trajectory");
    require_dense(w, system, "adjoint trajectory");

    const int k = system.k();
    const double dt = system.grid().dt;
    const auto per = static_cast<std::size_t>(system.grid().num_cells()) * k * k;
    const auto& terms = system.memory().kernel().prony_terms();

    GradientReport g;
    g.grid = system.grid();
    g.k = k;
    g.g_a.assign(per, 0.0);
    g.g_b.assign(per, 0.0);
    g.g_q.assign(terms.size(), std::vector<double>(per, 0.0));
    for (const auto& t : terms) g.taus.push_back(t.tau);

    AuxRecursion aux(terms, dt, system.size());
    for (std::size_t n = 0; n + 1 < u.size(); ++n) {
        const auto& u0 = u.states[n];
        const auto& u1 = u.states[n + 1];
        const auto& wn = w.states[n + 1];
        const auto mean = aux.advance(u0, u1);
        if (wn.isZero(0.0)) continue;
        accumulate_outer(g.g_a, k, wn, (u1 - u0) / dt, dt, true);
        accumulate_outer(g.g_b, k, wn, 0.5 * (u0 + u1), dt, false);
        for (std::size_t j = 0; j < terms.size(); ++j) accumulate_outer(g.g_q[j], k, wn, mean[j], dt, false);
    }
    return g;
}

double pairing(const CoefficientPerturbation& delta, const GradientReport& gradient)
{
    double s = 0.0;
    if (!delta.da.empty()) s += dot(delta.da, gradient.g_a);
    if (!delta.db.empty()) s += dot(delta.db, gradient.g_b);
    for (const auto& t : delta.dq.prony_terms()) {
        std::size_t j = 0;
        while (j < gradient.taus.size() && !same_tau(gradient.taus[j], t.tau)) ++j;
        if (j == gradient.taus.size())
            throw InvalidArgument("kernel perturbation uses a relaxation time absent from the gradient");
        s += dot(t.weights, gradient.g_q[j]);
    }
    return s;
}

GradientReport compute_gradient(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                                const SeismogramData& observed, const IntegratorConfig& config)
{
    const IntegratorConfig cfg = dense_midpoint(config);
    const Trajectory u = solve_causal(system, source, cfg);
    const SeismogramData predicted = sample_trajectory(sampler, u);
    const SeismogramData r = data_residual(predicted, observed);
    const Trajectory w = adjoint_solve(system, r, sampler, cfg);
    GradientReport g = assemble_gradient(u, w, system);
    g.objective = objective(predicted, observed, system.grid().dt);
    g.diagnostics["residual_norm"] = r.values.norm();
    g.diagnostics["max_adjoint_solve_residual"] = w.max_solve_residual;
    return g;
}

GradientReport compute_gradient(const DiscreteSystem& system, const std::vector<SourceTerm>& sources,
                                const Sampler& sampler, const std::vector<SeismogramData>& observed,
                                const IntegratorConfig& config, int jobs)
{
    if (sources.empty()) throw InvalidArgument("at least one source is needed");
    if (sources.size() != observed.size()) throw DimensionMismatch("one observed data set per source is needed");
    std::vector<GradientReport> parts(sources.size());
    parallel_for(static_cast<int>(sources.size()), jobs,
                 [&](int i) { parts[i] = compute_gradient(system, sources[i], sampler, observed[i], config); });
    GradientReport total = parts.front();
    double residual_sq = std::pow(total.diagnostics.value("residual_norm", 0.0), 2);
    for (std::size_t i = 1; i < parts.size(); ++i) {
        total += parts[i];
        residual_sq += std::pow(parts[i].diagnostics.value("residual_norm", 0.0), 2);
    }
    total.diagnostics["residual_norm"] = std::sqrt(residual_sq);
    total.diagnostics["shots"] = sources.size();
    return total;
}

void write_gradient_report(const fs::path& dir, const GradientReport& report)
{
    fs::create_directories(dir);
    write_rwf1(dir / "g_a.rwf", report.grid, report.k, report.g_a);
    write_rwf1(dir / "g_b.rwf", report.grid, report.k, report.g_b);
    Json q = Json::array();
    for (std::size_t j = 0; j < report.g_q.size(); ++j) {
        const std::string name = "g_q_" + std::to_string(j) + ".rwf";
        write_rwf1(dir / name, report.grid, report.k, report.g_q[j]);
        q.push_back({{"tau", report.taus[j]}, {"file", name}});
    }
    Json j;
    j["kind"] = "derivative representer";
    j["objective"] = report.objective;
    j["k"] = report.k;
    j["grid"] = grid_to_json(report.grid);
    j["g_a"] = "g_a.rwf";
    j["g_b"] = "g_b.rwf";
    j["g_q"] = q;
    j["diagnostics"] = report.diagnostics;
    write_json(dir / "gradient.json", j);
}

GradientReport read_gradient_report(const fs::path& dir)
{
    const Json j = read_json(dir / "gradient.json");
    try {
        GradientReport g;
        g.grid = grid_from_json(j.at("grid"));
        g.k = j.at("k").get<int>();
        g.objective = j.at("objective").get<double>();
        g.diagnostics = j.value("diagnostics", Json::object());
        auto load = [&](const std::string& name) {
            auto arr = read_rwf1(dir / name);
            check_layout(arr, g.grid, name);
            return arr.values;
        };
        g.g_a = load(j.at("g_a").get<std::string>());
        g.g_b = load(j.at("g_b").get<std::string>());
        for (const auto& q : j.at("g_q")) {
            g.taus.push_back(q.at("tau").get<double>());
            g.g_q.push_back(load(q.at("file").get<std::string>()));
        }
        return g;
    } catch (const Json::exception& e) {
        throw IoError("invalid gradient report in " + dir.string() + ": " + e.what());
    }
}

// -------------------------------------------------------------- verification

DotProductTest dot_product_test(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                                const CoefficientPerturbation& delta, const SeismogramData& residual,
                                const IntegratorConfig& config)
{
    const IntegratorConfig cfg = dense_midpoint(config);
    const Trajectory u = solve_causal(system, source, cfg);
    const Trajectory du = directional_derivative(system, u, delta, cfg);
    const SeismogramData sdu = sample_trajectory(sampler, du);
    if (!sdu.aligned_with(residual)) throw DimensionMismatch("residual is not on the solve's time axis");
    DotProductTest t;
    t.data_side = system.grid().dt * (sdu.values.array() * residual.values.array()).sum();
    const Trajectory w = adjoint_solve(system, residual, sampler, cfg);
    t.model_side = pairing(delta, assemble_gradient(u, w, system));
    const double scale = std::max({std::abs(t.data_side), std::abs(t.model_side), std::numeric_limits<double>::min()});
    t.relative_error = std::abs(t.data_side + t.model_side) / scale;
    if (t.data_side == 0.0 && t.model_side == 0.0) t.relative_error = 0.0;
    return t;
}

std::vector<FiniteDifferenceRow> finite_difference_check(const DiscreteSystem& system, const SourceTerm& source,
                                                         const Sampler& sampler, const SeismogramData& observed,
                                                         const CoefficientPerturbation& delta,
                                                         const std::vector<double>& steps,
                                                         const IntegratorConfig& config)
{
    const double adjoint = pairing(delta, compute_gradient(system, source, sampler, observed, config));
    std::vector<FiniteDifferenceRow> rows;
    for (double eps : steps) {
        auto j_at = [&](double h) {
            return objective(system.with_coefficients(perturbed_field(system.coefficients(), delta, h)), source,
                             sampler, observed, config);
        };
        FiniteDifferenceRow r;
        r.step = eps;
        r.finite_difference = (j_at(eps) - j_at(-eps)) / (2.0 * eps);
        r.adjoint = adjoint;
        const double scale = std::max({std::abs(adjoint), std::abs(r.finite_difference), std::numeric_limits<double>::min()});
        r.relative_error = std::abs(r.finite_difference - adjoint) / scale;
        if (adjoint == 0.0 && r.finite_difference == 0.0) r.relative_error = 0.0;
        rows.push_back(r);
    }
    return rows;
}

QuotientTable quotient_study(const DiscreteSystem& system, const SourceTerm& source,
                             const CoefficientPerturbation& delta, const std::vector<double>& h_schedule,
                             const IntegratorConfig& config)
{
    const IntegratorConfig cfg = dense_midpoint(config);
    const Grid& g = system.grid();
    const Trajectory u = solve_causal(system, source, cfg);
    const Trajectory du = directional_derivative(system, u, delta, cfg);
    QuotientTable table;
    for (const auto& v : du.states) table.derivative_norm = std::max(table.derivative_norm, grid_norm(g, v));

    std::vector<double> hs, rem;
    for (double h : h_schedule) {
        QuotientRow row;
        row.h = h;
        try {
            const DiscreteSystem sh = system.with_coefficients(perturbed_field(system.coefficients(), delta, h));
            const Trajectory uh = solve_causal(sh, source, cfg);
            for (std::size_t n = 0; n < u.size(); ++n)
                row.remainder =
                    std::max(row.remainder, grid_norm(g, (uh.states[n] - u.states[n]) / h - du.states[n]));
            row.relative = table.derivative_norm > 0.0 ? row.remainder / table.derivative_norm : row.remainder;
            hs.push_back(h);
            rem.push_back(row.remainder);
        } catch (const InvalidCoefficient& e) {
            row.admissible = false;
            row.note = e.what();
        }
        table.rows.push_back(row);
    }
    table.slope = loglog_slope(hs, rem);
    return table;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return 0.0;
    const double den = n * sxx - sx * sx;
    return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

} // namespace roughwave
