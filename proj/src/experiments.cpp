#include "roughwave/experiments.hpp"

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "roughwave/error.hpp"
#include "roughwave/sensitivity.hpp"

namespace roughwave {

namespace fs = std::filesystem;

namespace {

constexpr double kBumpMass = 0.44399381616807943; // int_{-1}^{1} exp(-1 / (1 - x^2)) dx

double integrate(const std::function<double(double)>& fn, double a, double b)
{
    if (!(b > a)) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(fn, a, b, 20, 1e-12);
}

bool strictly_decreasing(const std::vector<double>& v)
{
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] < v[i - 1])) return false;
    return true;
}

double max_distance(const Grid& g, const Trajectory& a, const Trajectory& b)
{
    double d = 0.0;
    for (std::size_t n = 0; n < a.size() && n < b.size(); ++n) d = std::max(d, grid_norm(g, a.states[n] - b.states[n]));
    return d;
}

} // namespace

// ------------------------------------------------------------------ oracles

double unit_bump(double x)
{
    if (std::abs(x) >= 1.0) return 0.0;
    return std::exp(-1.0 / (1.0 - x * x)) / kBumpMass;
}

SpaceTimeFn oscillatory_source(double eps)
{
    if (!(eps > 0.0)) throw InvalidArgument("oscillation scale eps must be positive");
    return [eps](double t, double x) { return std::cos((x + t) / eps) * unit_bump(x + t) * unit_bump(x); };
}

double advection_oracle(double c, const SpaceTimeFn& f, double t, double x, double t_min)
{
    if (!(c > 0.0)) throw InvalidArgument("advection speed must be positive");
    if (!f || t <= t_min) return 0.0;
    return c * integrate([&](double s) { return f(s, x + c * (t - s)); }, t_min, t);
}

double advection_oracle_norm(double c, const SpaceTimeFn& f, double t, double x_min, double x_max, double t_min,
                             int samples)
{
    if (samples < 3) throw InvalidArgument("need at least 3 samples");
    if (samples % 2 == 0) ++samples;
    const double h = (x_max - x_min) / (samples - 1);
    double s = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double u = advection_oracle(c, f, t, x_min + i * h, t_min);
        const double w = (i == 0 || i == samples - 1) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * u * u;
    }
    return std::sqrt(s * h / 3.0);
}

DiscreteSystem advection_system(const Grid& grid, double c)
{
    if (grid.dim != 1) throw UnsupportedConfiguration("the advection system is one-dimensional");
    if (!(c > 0.0)) throw InvalidArgument("advection speed must be positive");
    RowMatrix a(1, 1), p(1, 1);
    a << 1.0 / c;
    p << -1.0;
    return DiscreteSystem(CoefficientField::uniform(grid, a), {p}, Boundary::Periodic);
}

SourceTerm sampled_source(const Grid& grid, int k, int component, const SpaceTimeFn& f, double onset,
                          int smoothness)
{
    if (component < 0 || component >= k) throw InvalidArgument("source component out of range");
    std::vector<std::array<double, 3>> centres;
    for (int c = 0; c < grid.num_cells(); ++c) centres.push_back(grid.center(c));
    auto fn = [centres, f, k, component](double t, Eigen::Ref<Eigen::VectorXd> out) {
        out.setZero();
        for (std::size_t c = 0; c < centres.size(); ++c) out[c * k + component] = f(t, centres[c][0]);
    };
    return SourceTerm::distributed(grid.state_size(k), fn, onset, smoothness);
}

std::array<double, 2> dalembert_oracle(const DalembertProblem& pr, double t, double x)
{
    if (!(pr.kappa > 0.0) || !(pr.rho > 0.0)) throw InvalidArgument("kappa and rho must be positive");
    const double c = std::sqrt(pr.kappa / pr.rho);
    const double z = pr.rho * c;
    auto initial = [&](double y, double sign) {
        const double p = pr.p0 ? pr.p0(y) : 0.0;
        const double v = pr.v0 ? pr.v0(y) : 0.0;
        return p + sign * z * v;
    };
    // w = p + sign Z v moves at sign c and collects kappa f_p + sign c f_v.
    auto invariant = [&](double sign) {
        double w = initial(x - sign * c * t, sign);
        if ((pr.fp || pr.fv) && t > pr.source_start) {
            w += integrate(
                [&](double s) {
                    const double y = x - sign * c * (t - s);
                    return (pr.fp ? pr.kappa * pr.fp(s, y) : 0.0) + (pr.fv ? sign * c * pr.fv(s, y) : 0.0);
                },
                pr.source_start, t);
        }
        return w;
    };
    const double wp = invariant(1.0), wm = invariant(-1.0);
    return {0.5 * (wp + wm), 0.5 * (wp - wm) / z};
}

// --------------------------------------------------------------------- cones

ConeSpec ConeSpec::from_speed(const std::array<double, 3>& apex, double t0, double max_speed, double margin,
                              double radius)
{
    if (!(max_speed > 0.0)) throw InvalidArgument("cone speed must be positive");
    ConeSpec c;
    c.apex = apex;
    c.t0 = t0;
    c.slowness = 1.0 / max_speed;
    c.margin = margin;
    c.radius = radius;
    c.validate();
    return c;
}

bool ConeSpec::contains(const std::array<double, 3>& x, double t) const
{
    const double d = std::sqrt((x[0] - apex[0]) * (x[0] - apex[0]) + (x[1] - apex[1]) * (x[1] - apex[1]) +
                               (x[2] - apex[2]) * (x[2] - apex[2]));
    return effective_slowness() * std::max(0.0, d - radius) + t0 - t >= 0.0;
}

bool ConeSpec::contains_cell(const Grid& grid, int cell, double t) const
{
    const auto ijk = grid.multi_index(cell);
    std::array<double, 3> nearest{0.0, 0.0, 0.0};
    for (int a = 0; a < 3; ++a) {
        if (a >= grid.dim) {
            nearest[a] = apex[a];
            continue;
        }
        const double lo = grid.origin[a] + ijk[a] * grid.h[a];
        nearest[a] = std::clamp(apex[a], lo, lo + grid.h[a]);
    }
    return contains(nearest, t);
}

void ConeSpec::validate() const
{
    if (!(slowness > 0.0)) throw InvalidArgument("cone slowness must be positive");
    if (!(margin >= 0.0)) throw InvalidArgument("cone margin must be non-negative");
    if (!(radius >= 0.0)) throw InvalidArgument("cone radius must be non-negative");
}

double cone_leak(const Trajectory& traj, const ConeSpec& cone, const DiscreteSystem& system)
{
    cone.validate();
    const Grid& g = system.grid();
    if (!traj.grid.same_space(g) || traj.k != system.k()) throw DimensionMismatch("trajectory does not match system");
    const int k = system.k();
    const double vol = g.cell_volume();
    double inside = 0.0, total = 0.0;
    std::size_t region_cells = 0;
    for (std::size_t n = 0; n < traj.size(); ++n) {
        const auto& u = traj.states[n];
        for (int c = 0; c < g.num_cells(); ++c) {
            const bool in = cone.contains_cell(g, c, traj.times[n]);
            region_cells += in;
            const auto uc = u.segment(static_cast<Eigen::Index>(c) * k, k);
            const double e = 0.5 * vol * uc.dot(system.mass().block(c) * uc);
            total += e;
            if (in) inside += e;
        }
    }
    if (region_cells == 0) throw InvalidArgument("the cone region contains no cell of the trajectory");
    return total > 0.0 ? inside / total : 0.0;
}

// -------------------------------------------------------------- study report

const std::vector<double>& StudyReport::metric(const std::string& key) const
{
    for (const auto& [name, values] : series)
        if (name == key) return values;
    throw InvalidArgument("study " + name + " has no series '" + key + "'");
}

void StudyReport::add_series(std::string key, std::vector<double> values)
{
    series.emplace_back(std::move(key), std::move(values));
}

void StudyReport::validate() const
{
    if (schedule.size() >= 2) {
        const bool up = schedule[1] > schedule[0];
        for (std::size_t i = 1; i < schedule.size(); ++i)
            if (up ? !(schedule[i] > schedule[i - 1]) : !(schedule[i] < schedule[i - 1]))
                throw InvalidArgument("study schedule must be strictly monotone");
    }
    for (const auto& [key, values] : series)
        if (values.size() != schedule.size())
            throw DimensionMismatch("series '" + key + "' does not match the schedule length");
}

void write_study_report(const fs::path& dir, const StudyReport& report)
{
    report.validate();
    fs::create_directories(dir);
    Json j;
    j["name"] = report.name;
    j["parameter"] = report.parameter;
    j["schedule"] = report.schedule;
    Json s = Json::object();
    Json order = Json::array();
    for (const auto& [key, values] : report.series) {
        s[key] = values;
        order.push_back(key);
    }
    j["series"] = s;
    j["series_order"] = order;
    j["slope"] = report.slope;
    j["tolerance"] = report.tolerance;
    j["passed"] = report.passed;
    j["criterion"] = report.criterion;
    j["details"] = report.details;
    write_json(dir / (report.name + ".json"), j);

    std::vector<std::string> header{report.parameter};
    std::vector<std::vector<double>> cols{report.schedule};
    for (const auto& [key, values] : report.series) {
        header.push_back(key);
        cols.push_back(values);
    }
    write_csv(dir / (report.name + ".csv"), header, cols);
}

StudyReport read_study_report(const fs::path& json_path)
{
    const Json j = read_json(json_path);
    try {
        StudyReport r;
        r.name = j.at("name").get<std::string>();
        r.parameter = j.at("parameter").get<std::string>();
        r.schedule = j.at("schedule").get<std::vector<double>>();
        for (const auto& key : j.at("series_order"))
            r.add_series(key.get<std::string>(), j.at("series").at(key.get<std::string>()).get<std::vector<double>>());
        r.slope = j.value("slope", 0.0);
        r.tolerance = j.value("tolerance", 0.0);
        r.passed = j.at("passed").get<bool>();
        r.criterion = j.value("criterion", "");
        r.details = j.value("details", Json::object());
        r.validate();
        return r;
    } catch (const Json::exception& e) {
        throw IoError("invalid study report " + json_path.string() + ": " + e.what());
    }
}

// ------------------------------------------------------------------- studies

StudyReport advection_convergence_study(double c, const SpaceTimeFn& f, double t_min, double t_end, double x_min,
                                        double x_max, const std::vector<int>& cells, double dt_per_h,
                                        double min_slope, int jobs)
{
    if (cells.size() < 2) throw InvalidArgument("advection study needs at least two resolutions");
    StudyReport r;
    r.name = "advection_convergence";
    r.parameter = "h";
    std::vector<double> err(cells.size());
    for (int n : cells) r.schedule.push_back((x_max - x_min) / n);
    parallel_for(static_cast<int>(cells.size()), jobs, [&](int i) {
        const double h = r.schedule[i];
        const int steps = static_cast<int>(std::ceil(t_end / (dt_per_h * h / c) - 1e-9));
        Grid g = build_grid(1, {cells[i]}, {x_max - x_min}, t_end / steps, t_end, {x_min});
        auto sys = advection_system(g, c);
        IntegratorConfig cfg;
        cfg.stride = steps;
        auto traj = solve_causal(sys, sampled_source(g, 1, 0, f, t_min, 1000), cfg);
        const auto& u = traj.states.back();
        double s = 0.0;
        for (int j = 0; j < g.num_cells(); ++j) {
            const double d = u[j] - advection_oracle(c, f, t_end, g.center(0, j), t_min);
            s += d * d;
        }
        err[i] = std::sqrt(s * h);
    });
    r.add_series("l2_error", err);
    r.slope = loglog_slope(r.schedule, err);
    r.tolerance = min_slope;
    r.passed = r.slope >= min_slope;
    r.criterion = "log-log slope of the L2 error against h >= tolerance";
    r.details = {{"c", c}, {"t_end", t_end}, {"dt_per_h", dt_per_h}};
    return r;
}

StudyReport oscillation_suppression_study(double c, const std::vector<double>& eps, double t, double min_ratio)
{
    if (eps.size() < 2) throw InvalidArgument("oscillation study needs at least two eps values");
    StudyReport r;
    r.name = "oscillation_suppression";
    r.parameter = "eps";
    r.schedule = eps;
    std::vector<double> norms;
    for (double e : eps) {
        // The solution at time t lives on [-1 - c t, 1].
        norms.push_back(advection_oracle_norm(c, oscillatory_source(e), t, -1.0 - c * t, 1.0, -2.0,
                                              std::max(4001, static_cast<int>(40.0 * (2.0 + c * t) / e) | 1)));
    }
    r.add_series("l2_norm", norms);
    r.slope = loglog_slope(eps, norms);
    r.tolerance = min_ratio;
    const double ratio = norms.back() > 0.0 ? norms.front() / norms.back() : std::numeric_limits<double>::infinity();
    r.passed = ratio >= min_ratio;
    r.criterion = "first norm / last norm >= tolerance";
    r.details = {{"c", c}, {"t", t}, {"ratio", ratio}};
    return r;
}

StudyReport cone_refinement_study(const std::function<ConeRun(int)>& make_setup, const std::vector<int>& refinements,
                                  double tolerance, const IntegratorConfig& config, int jobs)
{
    if (refinements.empty()) throw InvalidArgument("cone study needs at least one resolution");
    StudyReport r;
    r.name = "cone_leak";
    r.parameter = "refinement";
    for (int f : refinements) r.schedule.push_back(f);
    std::vector<double> leak(refinements.size()), cells(refinements.size());
    parallel_for(static_cast<int>(refinements.size()), jobs, [&](int i) {
        const ConeRun run = make_setup(refinements[i]);
        const Trajectory traj = solve_causal(run.system, run.source, config);
        leak[i] = cone_leak(traj, run.cone, run.system);
        cells[i] = run.system.grid().num_cells();
    });
    r.add_series("cells", cells);
    r.add_series("leak", leak);
    r.tolerance = tolerance;
    r.passed = std::all_of(leak.begin(), leak.end(), [&](double l) { return l <= tolerance; }) &&
               strictly_decreasing(leak);
    r.criterion = "every leak <= tolerance and leak strictly decreasing under refinement";
    return r;
}

StudyReport measure_convergence_study(const DiscreteSystem& system, const SourceTerm& source,
                                      const std::vector<int>& schedule, const Sampler* sampler, double eps,
                                      double final_ratio, const IntegratorConfig& config, int jobs)
{
    if (schedule.size() < 3) throw InvalidArgument("measure study needs at least three mollification levels");
    StudyReport r;
    r.name = "measure_convergence";
    r.parameter = "n";
    for (int n : schedule) r.schedule.push_back(n);
    r.validate();

    const Grid& g = system.grid();
    const Trajectory ref = solve_causal(system, source, config);
    SeismogramData ref_data;
    if (sampler) ref_data = sample_trajectory(*sampler, ref);

    std::vector<double> dist(schedule.size()), measure(schedule.size()), data_dist(schedule.size());
    parallel_for(static_cast<int>(schedule.size()), jobs, [&](int i) {
        const CoefficientField smooth = mollify_field(system.coefficients(), schedule[i]);
        const DiscreteSystem sys = system.with_coefficients(smooth);
        const Trajectory u = solve_causal(sys, source, config);
        dist[i] = max_distance(g, u, ref);
        measure[i] = measure_distance(smooth, system.coefficients(), eps);
        if (sampler) data_dist[i] = std::sqrt(u.times.size() > 1 ? (u.times[1] - u.times[0]) : 0.0) *
                                    (sample_trajectory(*sampler, u).values - ref_data.values).norm();
    });
    r.add_series("solution_distance", dist);
    r.add_series("measure_distance", measure);
    if (sampler) r.add_series("seismogram_distance", data_dist);
    r.slope = loglog_slope(r.schedule, dist);
    r.tolerance = final_ratio;
    const double ratio = dist.front() > 0.0 ? dist.back() / dist.front() : 0.0;
    r.passed = strictly_decreasing(dist) && ratio <= final_ratio;
    r.criterion = "solution distance strictly decreasing and last / first <= tolerance";
    r.details = {{"eps", eps}, {"final_ratio", ratio}, {"measure_decreasing", strictly_decreasing(measure)}};
    return r;
}

double max_discrete_derivative(const SeismogramData& data, int order)
{
    if (order < 0) throw InvalidArgument("derivative order must be non-negative");
    Eigen::MatrixXd d = data.values;
    const double dt = data.dt();
    for (int j = 0; j < order; ++j) {
        if (d.cols() < 2) return 0.0;
        d = ((d.rightCols(d.cols() - 1) - d.leftCols(d.cols() - 1)) / dt).eval();
    }
    return d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
}

StudyReport trace_regularity_probe(const DiscreteSystem& system, int source_cell, int component,
                                   const Sampler& sampler, const std::vector<int>& smoothness, double pulse_width,
                                   const std::vector<int>& refinements, double growth_limit,
                                   const IntegratorConfig& config, int jobs)
{
    if (refinements.size() < 2) throw InvalidArgument("trace probe needs at least two time steps");
    const Grid& g = system.grid();
    StudyReport r;
    r.name = "trace_regularity";
    r.parameter = "dt";
    for (int f : refinements) r.schedule.push_back(g.dt / f);
    r.validate();

    struct Job {
        int s;
        int ref;
    };
    std::vector<Job> runs;
    for (int s : smoothness)
        for (std::size_t i = 0; i < refinements.size(); ++i) runs.push_back({s, static_cast<int>(i)});
    std::vector<std::vector<double>> maxima(runs.size());
    IntegratorConfig cfg = config;
    cfg.stride = 1;
    parallel_for(static_cast<int>(runs.size()), jobs, [&](int i) {
        const auto& job = runs[i];
        const DiscreteSystem sys = system.with_time_axis(r.schedule[job.ref], g.t_end());
        const Wavelet w = job.s > 0 ? Wavelet::pulse(job.s, pulse_width, 0.0) : Wavelet::zero();
        const SourceTerm src = make_point_source(sys.grid(), sys.k(), source_cell, component, w);
        const Sampler s = build_sampler(sampler.geometry(), sampler.tag(), sys.grid(), sys.k(),
                                        sampler.tag() == TraceTag::Custom ? sampler.weights() : RowMatrix());
        const SeismogramData d = sample_trajectory(s, solve_causal(sys, src, cfg));
        for (int order = 0; order < std::max(job.s, 1); ++order) maxima[i].push_back(max_discrete_derivative(d, order));
    });

    r.passed = true;
    Json per_s = Json::array();
    for (int s : smoothness) {
        bool ok = true;
        for (int order = 0; order < std::max(s, 1); ++order) {
            std::vector<double> series;
            for (std::size_t i = 0; i < runs.size(); ++i)
                if (runs[i].s == s) series.push_back(maxima[i][order]);
            const double growth = series.front() > 0.0 ? series.back() / series.front() : (series.back() > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
            ok = ok && growth <= growth_limit;
            r.add_series("s" + std::to_string(s) + "_d" + std::to_string(order), series);
        }
        per_s.push_back({{"smoothness", s}, {"bounded", ok}});
        r.passed = r.passed && ok;
    }
    r.tolerance = growth_limit;
    r.criterion = "max |d^j/dt^j trace| for j < s grows by at most tolerance from coarsest to finest dt";
    r.details = {{"per_smoothness", per_s}, {"pulse_width", pulse_width}};
    return r;
}

} // namespace roughwave
