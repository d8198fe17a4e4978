#include "roughwave/cli.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "roughwave/error.hpp"

namespace roughwave {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCommands[] = {"simulate", "forward", "gradient", "check", "study"};

[[noreturn]] void field_error(const std::string& field, const std::string& what)
{
    throw InvalidArgument("config field '" + field + "': " + what);
}

template <typename T>
T get_field(const Json& j, const std::string& key, const std::string& path, const T& fallback)
{
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        field_error(path + key, "wrong type (" + std::string(j.at(key).type_name()) + ")");
    }
}

std::array<double, 3> get_point(const Json& j, const std::string& key, const std::string& path,
                                std::array<double, 3> fallback = {0.0, 0.0, 0.0})
{
    if (!j.contains(key)) return fallback;
    const Json& v = j.at(key);
    if (!v.is_array() || v.empty() || v.size() > 3) field_error(path + key, "expected an array of 1 to 3 numbers");
    std::array<double, 3> p{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) field_error(path + key, "expected numbers");
        p[i] = v[i].get<double>();
    }
    return p;
}

fs::path resolve(const fs::path& base, const fs::path& p)
{
    return p.is_absolute() ? p : base / p;
}

SourceSpec parse_source(const Json& j, const std::string& path)
{
    if (!j.is_object()) field_error(path, "expected an object");
    SourceSpec s;
    if (!j.contains("position")) field_error(path + "position", "missing");
    s.position = get_point(j, "position", path);
    s.component = get_field(j, "component", path, 0);
    s.gaussian_width_cells = get_field(j, "gaussian_width_cells", path, 0.0);
    const Json w = j.value("wavelet", Json::object());
    const std::string wp = path + "wavelet.";
    s.wavelet = get_field<std::string>(w, "kind", wp, "ricker");
    if (s.wavelet != "ricker" && s.wavelet != "pulse")
        field_error(wp + "kind", "unknown wavelet '" + s.wavelet + "' (valid: ricker, pulse)");
    s.frequency = get_field(w, "frequency", wp, s.frequency);
    s.smoothness = get_field(w, "smoothness", wp, s.smoothness);
    s.width = get_field(w, "width", wp, s.width);
    s.onset = get_field(w, "onset", wp, s.onset);
    s.amplitude = get_field(w, "amplitude", wp, s.amplitude);
    return s;
}

ReceiverSpec parse_receivers(const Json& j)
{
    const std::string path = "receivers.";
    if (!j.is_object()) field_error("receivers", "expected an object");
    ReceiverSpec r;
    const auto normal = get_point(j, "normal", path, {1.0, 0.0, 0.0});
    const std::string kind = get_field<std::string>(j, "kind", path, "points");
    if (kind == "line") {
        r.geometry = ReceiverGeometry::line(get_point(j, "start", path), get_point(j, "end", path),
                                            get_field(j, "count", path, 1), normal);
    } else if (kind == "plane") {
        r.geometry = ReceiverGeometry::plane(get_point(j, "origin", path), get_point(j, "u", path),
                                             get_point(j, "v", path), get_field(j, "nu", path, 1),
                                             get_field(j, "nv", path, 1), normal);
    } else if (kind == "points") {
        if (!j.contains("points") || !j.at("points").is_array()) field_error(path + "points", "expected an array");
        const Json& pts = j.at("points");
        for (std::size_t i = 0; i < pts.size(); ++i)
            r.geometry.points.push_back(
                get_point(Json{{"p", pts[i]}}, "p", path + "points[" + std::to_string(i) + "]."));
        r.geometry.normal = normal;
    } else {
        field_error(path + "kind", "unknown receiver layout '" + kind + "' (valid: line, plane, points)");
    }
    try {
        r.tag = trace_tag_from_string(get_field<std::string>(j, "trace", path, "pressure"));
    } catch (const InvalidArgument& e) {
        field_error(path + "trace", e.what());
    }
    return r;
}

Sampler make_sampler(const ReceiverSpec& spec, const Grid& grid, int k)
{
    return build_sampler(spec.geometry, spec.tag, grid, k);
}

/// The configured receivers, or one receiver three quarters along axis 0.
Sampler default_sampler(const RunConfig& cfg, const Grid& grid, int k)
{
    if (cfg.receivers) return make_sampler(*cfg.receivers, grid, k);
    std::array<double, 3> x{0.0, 0.0, 0.0};
    for (int a = 0; a < grid.dim; ++a) x[a] = grid.origin[a] + 0.5 * grid.extent(a);
    x[0] = grid.origin[0] + 0.75 * grid.extent(0);
    if (k == grid.dim + 1) return build_sampler(ReceiverGeometry{{x}}, TraceTag::PressureTrace, grid, k);
    RowMatrix w = RowMatrix::Zero(1, k);
    w(0, 0) = 1.0;
    set_warnings_enabled(false);
    Sampler s = build_sampler(ReceiverGeometry{{x}}, TraceTag::Custom, grid, k, w);
    set_warnings_enabled(true);
    return s;
}

std::vector<SourceTerm> build_sources(const RunConfig& cfg, const Grid& grid, int k)
{
    if (cfg.sources.empty()) field_error("sources", "at least one source is required for this command");
    std::vector<SourceTerm> out;
    for (const auto& s : cfg.sources) out.push_back(build_source(s, grid, k));
    return out;
}

SeismogramData read_seismogram(const fs::path& p)
{
    return p.extension() == ".csv" ? read_seismogram_csv(p) : read_seismogram_binary(p);
}

std::string fmt(double v)
{
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

std::vector<double> to_std(const Eigen::VectorXd& v)
{
    return {v.data(), v.data() + v.size()};
}

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng)
{
    std::normal_distribution<double> N(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = N(rng);
    return v;
}

/// Random delta a (symmetric), delta b and delta q on the system's own Prony times.
CoefficientPerturbation random_perturbation(const DiscreteSystem& sys, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const int k = sys.k();
    const auto per = static_cast<std::size_t>(sys.grid().num_cells()) * k * k;
    CoefficientPerturbation p;
    p.da.assign(per, 0.0);
    p.db.assign(per, 0.0);
    for (int c = 0; c < sys.grid().num_cells(); ++c)
        for (int i = 0; i < k; ++i)
            for (int l = 0; l < k; ++l) {
                const std::size_t at = (static_cast<std::size_t>(c) * k + i) * k + l;
                p.db[at] = U(rng);
                if (l >= i) p.da[at] = p.da[(static_cast<std::size_t>(c) * k + l) * k + i] = U(rng);
            }
    const auto& kernel = sys.memory().kernel();
    if (kernel.kind() == MemoryKernel::Kind::Prony) {
        std::vector<PronyTerm> terms;
        for (const auto& t : kernel.prony_terms()) {
            PronyTerm d{t.tau, std::vector<double>(per)};
            for (auto& x : d.weights) x = U(rng);
            terms.push_back(std::move(d));
        }
        p.dq = MemoryKernel::prony(sys.grid().num_cells(), k, std::move(terms));
    }
    return p;
}

/// delta a = scale * a on one cell.
CoefficientPerturbation scaled_a_bump(const DiscreteSystem& sys, int cell, double scale)
{
    RowMatrix a = sys.coefficients().a(cell);
    return CoefficientPerturbation::cell_bump(sys, cell, RowMatrix(scale * a));
}

SeismogramData random_data(const Sampler& s, const Grid& g, std::mt19937_64& rng)
{
    std::vector<double> times;
    for (int n = 0; n <= g.n_steps; ++n) times.push_back(n * g.dt);
    SeismogramData r = zero_seismogram(s, times);
    std::normal_distribution<double> N(0.0, 1.0);
    for (Eigen::Index i = 0; i < r.values.size(); ++i) r.values.data()[i] = N(rng);
    return r;
}

/// Point pulse at the domain centre resolved by about 20 cells per duration.
SourceSpec check_source(const Grid& g, double speed)
{
    SourceSpec s;
    for (int a = 0; a < g.dim; ++a) s.position[a] = g.origin[a] + 0.5 * g.extent(a);
    double h = g.h[0];
    for (int a = 1; a < g.dim; ++a) h = std::max(h, g.h[a]);
    s.wavelet = "pulse";
    s.smoothness = 4;
    s.width = 20.0 * h / speed;
    return s;
}

CheckResult check_result(std::string name, double value, double threshold, std::string detail = "")
{
    CheckResult r;
    r.name = std::move(name);
    r.value = value;
    r.threshold = threshold;
    r.passed = std::isfinite(value) && value <= threshold;
    r.detail = std::move(detail);
    return r;
}

CheckResult skipped(std::string name, std::string why)
{
    CheckResult r;
    r.name = std::move(name);
    r.skipped = true;
    r.detail = std::move(why);
    return r;
}

void write_snapshots(const fs::path& dir, const Trajectory& traj, const DiscreteSystem& sys)
{
    fs::create_directories(dir / "snapshots");
    Json files = Json::array();
    for (std::size_t i = 0; i < traj.size(); ++i) {
        std::ostringstream name;
        name << "u_" << std::setw(6) << std::setfill('0') << i * traj.stride << ".rwf";
        write_rwf1(dir / "snapshots" / name.str(), sys.grid(), sys.k(), to_std(traj.states[i]));
        files.push_back(name.str());
    }
    write_json(dir / "snapshots" / "snapshots.json",
               Json{{"k", sys.k()}, {"stride", traj.stride}, {"times", traj.times}, {"files", files},
                    {"grid", grid_to_json(sys.grid())}, {"scheme", scheme_name(traj.scheme)}});
}

// ----------------------------------------------------------------- commands

int run_simulate(const RunConfig& cfg, const ModelFile& model, std::ostream& out)
{
    const DiscreteSystem sys = build_system(model);
    SourceTerm src(sys.size());
    for (const auto& s : build_sources(cfg, sys.grid(), sys.k())) src = src + s;
    IntegratorConfig ic = cfg.integrator;
    ic.stride = cfg.snapshot_stride > 0 ? cfg.snapshot_stride : std::max(1, sys.grid().n_steps);
    const Trajectory traj = solve_causal(sys, src, ic);
    fs::create_directories(cfg.output);
    write_snapshots(cfg.output, traj, sys);
    write_energy_csv(cfg.output / "energy.csv", traj.times, traj.energy);
    if (cfg.export_operator) {
        std::ofstream os(cfg.output / "P.mtx");
        if (!os) throw IoError("cannot write " + (cfg.output / "P.mtx").string());
        sys.skew().export_coordinate(os);
    }
    out << "simulate: " << traj.size() << " snapshots, final energy " << fmt(traj.energy.back())
        << ", max solve residual " << fmt(traj.max_solve_residual) << "\n";
    return 0;
}

int run_forward(const RunConfig& cfg, const ModelFile& model, std::ostream& out)
{
    const DiscreteSystem sys = build_system(model);
    if (!cfg.receivers) field_error("receivers", "missing");
    const Sampler sampler = make_sampler(*cfg.receivers, sys.grid(), sys.k());
    const auto sources = build_sources(cfg, sys.grid(), sys.k());
    for (const auto& s : sources)
        if (s.smoothness() < 2) warn("source smoothness below 2; the trace map is only continuous");
    const auto data = forward_map_batch(sys, sources, sampler, cfg.integrator, cfg.jobs);
    fs::create_directories(cfg.output / "seismograms");
    Json shots = Json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string stem = "shot_" + std::to_string(i);
        write_seismogram_csv(cfg.output / "seismograms" / (stem + ".csv"), data[i]);
        write_seismogram_binary(cfg.output / "seismograms" / (stem + ".bin"), data[i]);
        shots.push_back({{"csv", "seismograms/" + stem + ".csv"}, {"binary", "seismograms/" + stem + ".bin"},
                         {"max_abs", data[i].values.cwiseAbs().maxCoeff()}});
    }
    write_json(cfg.output / "forward.json",
               Json{{"channels", sampler.channels()}, {"trace", trace_tag_name(sampler.tag())}, {"shots", shots}});
    out << "forward: " << data.size() << " shot(s), " << sampler.channels() << " channel(s), "
        << data.front().samples() << " samples\n";
    return 0;
}

int run_gradient(const RunConfig& cfg, const ModelFile& model, std::ostream& out)
{
    const DiscreteSystem sys = build_system(model);
    if (!cfg.receivers) field_error("receivers", "missing");
    const Sampler sampler = make_sampler(*cfg.receivers, sys.grid(), sys.k());
    const auto sources = build_sources(cfg, sys.grid(), sys.k());
    IntegratorConfig ic = cfg.integrator;
    ic.stride = 1;

    std::vector<SeismogramData> observed;
    if (!cfg.observed.empty()) {
        if (cfg.observed.size() != sources.size()) field_error("observed", "need one file per source");
        for (const auto& p : cfg.observed) observed.push_back(read_seismogram(p));
    } else if (!cfg.observed_model.empty()) {
        observed = forward_map_batch(build_system(load_model(cfg.observed_model)), sources, sampler, ic, cfg.jobs);
    } else {
        observed = forward_map_batch(sys, sources, sampler, ic, cfg.jobs);
    }

    GradientReport report = compute_gradient(sys, sources, sampler, observed, ic, cfg.jobs);

    std::mt19937_64 rng(cfg.seed);
    const auto delta = random_perturbation(sys, rng);
    const auto residual = random_data(sampler, sys.grid(), rng);
    const DotProductTest dpt = dot_product_test(sys, sources.front(), sampler, delta, residual, ic);
    const double dot_tol = 1e-8;
    report.diagnostics["dot_product_test"] = {{"data_side", dpt.data_side},
                                              {"model_side", dpt.model_side},
                                              {"relative_error", dpt.relative_error},
                                              {"tolerance", dot_tol}};
    if (cfg.study.value("fd_check", true)) {
        const int cell = locate_cell(sys.grid(), cfg.sources.front().position);
        const auto rows = finite_difference_check(sys, sources.front(), sampler, observed.front(),
                                                  scaled_a_bump(sys, cell, 0.3), {1e-2, 1e-3, 1e-4}, ic);
        Json table = Json::array();
        for (const auto& r : rows)
            table.push_back({{"step", r.step},
                             {"finite_difference", r.finite_difference},
                             {"adjoint", r.adjoint},
                             {"relative_error", r.relative_error}});
        report.diagnostics["finite_difference"] = {{"cell", cell}, {"rows", table}};
    }
    write_gradient_report(cfg.output / "gradient", report);
    out << "gradient: J = " << fmt(report.objective) << "\n";
    out << "dot-product test: data " << fmt(dpt.data_side) << ", model " << fmt(dpt.model_side)
        << ", relative error " << fmt(dpt.relative_error) << (dpt.relative_error <= dot_tol ? " PASS" : " FAIL")
        << "\n";
    return dpt.relative_error <= dot_tol ? 0 : 3;
}

int run_check(const RunConfig& cfg, const ModelFile& model, std::ostream& out)
{
    const auto results = run_checks(cfg, model);
    bool ok = true;
    Json rows = Json::array();
    for (const auto& r : results) {
        const char* tag = r.skipped ? "SKIP" : (r.passed ? "PASS" : "FAIL");
        out << tag << "  " << r.name;
        if (!r.skipped) out << "  value " << fmt(r.value) << " (limit " << fmt(r.threshold) << ")";
        if (!r.detail.empty()) out << "  " << r.detail;
        out << "\n";
        ok = ok && (r.skipped || r.passed);
        rows.push_back({{"name", r.name}, {"status", tag}, {"value", r.value}, {"threshold", r.threshold},
                        {"detail", r.detail}});
    }
    fs::create_directories(cfg.output);
    write_json(cfg.output / "check.json", Json{{"passed", ok}, {"properties", rows}});
    return ok ? 0 : 3;
}

std::vector<double> numbers(const Json& j, const std::string& key, const std::string& path,
                            std::vector<double> fallback)
{
    return get_field(j, key, path, fallback);
}

int run_study(const RunConfig& cfg, std::ostream& out)
{
    const Json& s = cfg.study;
    const std::string p = "study.";
    const std::string kind = get_field<std::string>(s, "kind", p, "");
    StudyReport report;
    if (kind == "advection") {
        auto f = [](double t, double x) { return unit_bump((t - 0.45) / 0.35) * unit_bump((x - 0.5) / 0.25); };
        report = advection_convergence_study(get_field(s, "c", p, 1.0), f, 0.1, get_field(s, "t_end", p, 1.0), -1.0,
                                             1.5, get_field(s, "cells", p, std::vector<int>{250, 500, 1000}),
                                             get_field(s, "dt_per_h", p, 0.5), get_field(s, "min_slope", p, 1.9),
                                             cfg.jobs);
    } else if (kind == "oscillation") {
        report = oscillation_suppression_study(get_field(s, "c", p, 1.5), numbers(s, "eps", p, {0.1, 0.01}),
                                               get_field(s, "t", p, 1.5), get_field(s, "min_ratio", p, 10.0));
    } else {
        if (cfg.model.empty()) field_error("model", "missing");
        const ModelFile model = load_model(cfg.model);
        const DiscreteSystem sys = build_system(model);
        if (kind == "measure_convergence") {
            const auto src = build_sources(cfg, sys.grid(), sys.k());
            std::optional<Sampler> sampler;
            if (cfg.receivers) sampler = make_sampler(*cfg.receivers, sys.grid(), sys.k());
            report = measure_convergence_study(sys, src.front(),
                                               get_field(s, "schedule", p, std::vector<int>{4, 8, 16, 32}),
                                               sampler ? &*sampler : nullptr, get_field(s, "eps", p, 1e-3),
                                               get_field(s, "final_ratio", p, 0.25), cfg.integrator, cfg.jobs);
        } else if (kind == "cone") {
            std::vector<fs::path> models{cfg.model};
            for (const auto& m : get_field(s, "refined_models", p, std::vector<std::string>{}))
                models.push_back(resolve(cfg.config_path.parent_path(), m));
            const double margin = get_field(s, "margin", p, 0.1);
            auto setup = [&](int i) {
                const ModelFile mf = load_model(models[i]);
                DiscreteSystem ds = build_system(mf);
                const SourceSpec spec =
                    cfg.sources.empty() ? check_source(ds.grid(), max_wavespeed(mf)) : cfg.sources.front();
                const int cell = locate_cell(ds.grid(), spec.position);
                double r2 = 0.0;
                for (int a = 0; a < ds.grid().dim; ++a) r2 += 0.25 * ds.grid().h[a] * ds.grid().h[a];
                ConeSpec cone = ConeSpec::from_speed(ds.grid().center(cell), spec.onset, max_wavespeed(mf), margin,
                                                     std::sqrt(r2));
                SourceTerm src = build_source(spec, ds.grid(), ds.k());
                return ConeRun{std::move(ds), std::move(src), cone};
            };
            std::vector<int> idx;
            for (std::size_t i = 0; i < models.size(); ++i) idx.push_back(static_cast<int>(i) + 1);
            report = cone_refinement_study([&](int r) { return setup(r - 1); }, idx, cfg.leak_tolerance,
                                           cfg.integrator, cfg.jobs);
            if (models.size() == 1) report.passed = report.metric("leak").front() <= cfg.leak_tolerance;
        } else if (kind == "trace_regularity") {
            const SourceSpec spec =
                cfg.sources.empty() ? check_source(sys.grid(), max_wavespeed(model)) : cfg.sources.front();
            const Sampler sampler = default_sampler(cfg, sys.grid(), sys.k());
            report = trace_regularity_probe(sys, locate_cell(sys.grid(), spec.position), spec.component, sampler,
                                            get_field(s, "smoothness", p, std::vector<int>{1, 2, 3}),
                                            get_field(s, "pulse_width", p, spec.width),
                                            get_field(s, "refinements", p, std::vector<int>{1, 2, 4}),
                                            get_field(s, "growth_limit", p, 2.0), cfg.integrator, cfg.jobs);
        } else if (kind == "quotient") {
            const auto src = build_sources(cfg, sys.grid(), sys.k());
            const int cell = s.contains("cell") ? get_field(s, "cell", p, 0)
                                                : locate_cell(sys.grid(), cfg.sources.front().position);
            const auto hs = numbers(s, "h", p, {1e-1, 1e-2, 1e-3});
            const QuotientTable t =
                quotient_study(sys, src.front(), scaled_a_bump(sys, cell, get_field(s, "scale", p, 0.5)), hs,
                               cfg.integrator);
            report.name = "quotient";
            report.parameter = "h";
            std::vector<double> rem, rel, adm;
            for (const auto& row : t.rows) {
                report.schedule.push_back(row.h);
                rem.push_back(row.remainder);
                rel.push_back(row.relative);
                adm.push_back(row.admissible ? 1.0 : 0.0);
            }
            report.add_series("remainder", rem);
            report.add_series("relative", rel);
            report.add_series("admissible", adm);
            report.slope = t.slope;
            report.tolerance = get_field(s, "final_relative", p, 1e-2);
            bool mono = true;
            for (std::size_t i = 1; i < rem.size(); ++i) mono = mono && rem[i] < rem[i - 1];
            report.passed = mono && !rel.empty() && rel.back() <= report.tolerance;
            report.criterion = "remainder strictly decreasing and final remainder / |du| <= tolerance";
            report.details = {{"derivative_norm", t.derivative_norm}, {"cell", cell}};
        } else {
            field_error("study.kind", "unknown study '" + kind +
                                          "' (valid: advection, oscillation, measure_convergence, cone, "
                                          "trace_regularity, quotient)");
        }
    }
    write_study_report(cfg.output, report);
    out << "study " << report.name << ": slope " << fmt(report.slope) << ", "
        << (report.passed ? "PASS" : "FAIL") << " (" << report.criterion << ")\n";
    return report.passed ? 0 : 3;
}

} // namespace

// -------------------------------------------------------------------- config

const char* command_name(Command c)
{
    return kCommands[static_cast<int>(c)];
}

Command command_from_string(const std::string& name)
{
    for (int i = 0; i < 5; ++i)
        if (name == kCommands[i]) return static_cast<Command>(i);
    throw InvalidArgument("unknown command '" + name + "' (valid: simulate, forward, gradient, check, study)");
}

RunConfig parse_config_json(const Json& j, const fs::path& base, std::optional<Command> command)
{
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    RunConfig c;
    if (command) {
        c.command = *command;
    } else {
        if (!j.contains("command")) field_error("command", "missing (valid: simulate, forward, gradient, check, study)");
        try {
            c.command = command_from_string(get_field<std::string>(j, "command", "", ""));
        } catch (const InvalidArgument& e) {
            field_error("command", e.what());
        }
    }

    const bool needs_model = !(c.command == Command::Study &&
                               (j.value("study", Json::object()).value("kind", "") == "advection" ||
                                j.value("study", Json::object()).value("kind", "") == "oscillation"));
    if (j.contains("model")) {
        c.model = resolve(base, get_field<std::string>(j, "model", "", ""));
        if (!fs::exists(c.model)) field_error("model", "file not found: " + c.model.string());
    } else if (needs_model) {
        field_error("model", "missing");
    }

    if (j.contains("sources")) {
        const Json& s = j.at("sources");
        if (!s.is_array()) field_error("sources", "expected an array");
        for (std::size_t i = 0; i < s.size(); ++i)
            c.sources.push_back(parse_source(s[i], "sources[" + std::to_string(i) + "]."));
    }
    if (j.contains("receivers")) c.receivers = parse_receivers(j.at("receivers"));

    const Json integ = j.value("integrator", Json::object());
    const std::string scheme = get_field<std::string>(integ, "scheme", "integrator.", "implicit_midpoint");
    if (scheme == "implicit_midpoint" || scheme == "midpoint")
        c.integrator.scheme = Scheme::ImplicitMidpoint;
    else if (scheme == "rk4")
        c.integrator.scheme = Scheme::RK4;
    else
        field_error("integrator.scheme", "unknown scheme '" + scheme + "' (valid: implicit_midpoint, rk4)");
    c.integrator.tolerance = get_field(integ, "tolerance", "integrator.", c.integrator.tolerance);
    c.integrator.max_iterations = get_field(integ, "max_iterations", "integrator.", c.integrator.max_iterations);
    c.integrator.cfl_safety = get_field(integ, "cfl_safety", "integrator.", 0.5);
    c.integrator.stride = get_field(integ, "stride", "integrator.", 1);
    if (!(c.integrator.cfl_safety > 0.0)) field_error("integrator.cfl_safety", "must be positive");
    if (c.integrator.stride < 1) field_error("integrator.stride", "must be at least 1");

    c.output = resolve(base, get_field<std::string>(j, "output", "", "out"));
    c.seed = get_field<std::uint64_t>(j, "seed", "", 0);
    c.jobs = get_field(j, "jobs", "", 1);
    if (c.jobs < 1) field_error("jobs", "must be at least 1");
    c.leak_tolerance = get_field(j, "leak_tolerance", "", 1e-6);
    if (!(c.leak_tolerance > 0.0)) field_error("leak_tolerance", "must be positive");
    c.snapshot_stride = get_field(j, "snapshot_stride", "", 0);
    if (c.snapshot_stride < 0) field_error("snapshot_stride", "must be non-negative");
    c.export_operator = get_field(j, "export_operator", "", false);
    for (const auto& o : get_field(j, "observed", "", std::vector<std::string>{})) {
        c.observed.push_back(resolve(base, o));
        if (!fs::exists(c.observed.back())) field_error("observed", "file not found: " + c.observed.back().string());
    }
    if (j.contains("observed_model")) {
        c.observed_model = resolve(base, get_field<std::string>(j, "observed_model", "", ""));
        if (!fs::exists(c.observed_model)) field_error("observed_model", "file not found: " + c.observed_model.string());
    }
    c.study = j.value("study", Json::object());
    if (!c.study.is_object()) field_error("study", "expected an object");
    if (c.command == Command::Study && !c.study.contains("kind")) field_error("study.kind", "missing");
    if ((c.command == Command::Forward || c.command == Command::Gradient) && !c.receivers)
        field_error("receivers", "missing");
    if ((c.command != Command::Check && c.command != Command::Study) && c.sources.empty())
        field_error("sources", "missing");
    return c;
}

RunConfig parse_config(const fs::path& path, std::optional<Command> command)
{
    if (!fs::exists(path)) throw InvalidArgument("config file not found: " + path.string());
    Json j;
    try {
        j = read_json(path);
    } catch (const IoError& e) {
        throw InvalidArgument(e.what());
    }
    RunConfig c = parse_config_json(j, path.parent_path(), command);
    c.config_path = path;
    return c;
}

int locate_cell(const Grid& grid, const std::array<double, 3>& x)
{
    std::array<int, 3> ijk{0, 0, 0};
    for (int a = 0; a < grid.dim; ++a) {
        const double s = (x[a] - grid.origin[a]) / grid.h[a];
        if (s < 0.0 || s > grid.cells[a]) {
            std::ostringstream os;
            os << "point (" << x[0] << ", " << x[1] << ", " << x[2] << ") lies outside the domain";
            throw InvalidArgument(os.str());
        }
        ijk[a] = std::min(grid.cells[a] - 1, static_cast<int>(std::floor(s)));
    }
    return grid.index(ijk);
}

SourceTerm build_source(const SourceSpec& spec, const Grid& grid, int k)
{
    const int cell = locate_cell(grid, spec.position);
    if (spec.component < 0 || spec.component >= k)
        throw InvalidArgument("source component " + std::to_string(spec.component) + " out of range for k = " +
                              std::to_string(k));
    const Wavelet w = spec.wavelet == "pulse" ? Wavelet::pulse(spec.smoothness, spec.width, spec.onset, spec.amplitude)
                                              : Wavelet::ricker(spec.frequency, spec.onset, spec.amplitude);
    return make_point_source(grid, k, cell, spec.component, w, spec.gaussian_width_cells);
}

// --------------------------------------------------------------------- checks

std::vector<CheckResult> run_checks(const RunConfig& cfg, const ModelFile& model)
{
    const DiscreteSystem sys = build_system(model);
    const Grid& g = sys.grid();
    const int k = sys.k();
    const double speed = max_wavespeed(model);
    std::mt19937_64 rng(cfg.seed);
    std::vector<CheckResult> res;
    IntegratorConfig ic = cfg.integrator;
    ic.scheme = Scheme::ImplicitMidpoint;
    ic.stride = 1;

    {
        const SparseMatrix& p = sys.skew().matrix();
        double worst = 0.0;
        for (int i = 0; i < 20; ++i) {
            const Eigen::VectorXd u = random_vector(sys.size(), rng), v = random_vector(sys.size(), rng);
            worst = std::max(worst, std::abs(u.dot(p * v) + v.dot(p * u)) / (u.norm() * v.norm()));
        }
        res.push_back(check_result("skew_symmetry", worst, 1e-12, "|<Pu,v> + <u,Pv>| / (|u||v|), 20 pairs"));
    }
    res.push_back(check_result("mass_positive", -sys.mass().lower(), 0.0, "smallest eigenvalue of a must be > 0"));
    res.back().passed = sys.mass().lower() > 0.0;
    res.back().value = sys.mass().lower();

    const bool memory_free = sys.memory().kernel().is_zero();
    if (memory_free && !sys.has_lower_order()) {
        const Eigen::VectorXd u0 = random_vector(sys.size(), rng);
        IntegratorConfig c2 = ic;
        c2.stride = std::max(1, g.n_steps);
        const Trajectory t = solve_ivp(sys, u0, 0.0, SourceTerm(sys.size()), c2);
        res.push_back(check_result("energy_conservation",
                                   std::abs(t.energy.back() - t.energy.front()) / t.energy.front(), 1e-10,
                                   "relative drift over the time axis, random initial state"));
    } else {
        res.push_back(skipped("energy_conservation", "lower-order or memory terms present"));
    }

    const SourceSpec spec = cfg.sources.empty() ? check_source(g, speed) : cfg.sources.front();
    const SourceTerm source = build_source(spec, g, k);
    const Trajectory base = solve_causal(sys, source, ic);
    {
        // Truncation error of the step-wise balance: must shrink when dt halves.
        auto worst_residual = [&](const DiscreteSystem& s, const Trajectory& t) {
            double worst = 0.0, emax = 0.0;
            for (double x : energy_identity_residual(t, s, source)) worst = std::max(worst, std::abs(x));
            for (double e : t.energy) emax = std::max(emax, e);
            return emax > 0.0 ? worst / emax : worst;
        };
        const double coarse = worst_residual(sys, base);
        const DiscreteSystem fine = sys.with_time_axis(0.5 * g.dt, g.t_end());
        const double finer = worst_residual(fine, solve_causal(fine, source, ic));
        CheckResult r = check_result("energy_identity", coarse, 0.0,
                                     "max per-step residual / max energy; " + fmt(finer) + " at dt/2");
        r.threshold = 1.0 / 3.0;
        r.value = coarse > 0.0 ? finer / coarse : 0.0;
        r.passed = coarse <= 1e-12 || r.value <= r.threshold;
        r.detail = "residual ratio dt/2 : dt (" + fmt(coarse) + " -> " + fmt(finer) + ")";
        res.push_back(r);
    }
    {
        const Trajectory z = solve_causal(sys, SourceTerm(sys.size()), ic);
        double m = 0.0;
        for (const auto& s : z.states) m = std::max(m, s.cwiseAbs().maxCoeff());
        res.push_back(check_result("zero_source_zero_solution", m, 0.0));
    }

    const Sampler sampler = default_sampler(cfg, g, k);
    {
        const Eigen::VectorXd u = random_vector(sys.size(), rng);
        SeismogramData r;
        r.times = {0.0};
        r.values = random_vector(sampler.channels(), rng);
        const double lhs = apply_sampler(sampler, u).dot(r.values.col(0));
        const double rhs = grid_dot(g, u, sampler_adjoint_series(sampler, r).front());
        res.push_back(check_result("sampler_adjoint", std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300), 1e-12,
                                   "<S u, r> against <u, S* r>_grid"));
    }

    if (sys.memory().kernel().kind() == MemoryKernel::Kind::Tabulated) {
        res.push_back(skipped("adjoint_dot_product", "tabulated memory kernel"));
        res.push_back(skipped("derivative_linearity", "tabulated memory kernel"));
        res.push_back(skipped("gradient_finite_difference", "tabulated memory kernel"));
    } else {
        const auto delta = random_perturbation(sys, rng);
        const DotProductTest t = dot_product_test(sys, source, sampler, delta, random_data(sampler, g, rng), ic);
        res.push_back(check_result("adjoint_dot_product", t.relative_error, 1e-8,
                                   "data " + fmt(t.data_side) + ", model " + fmt(t.model_side)));

        const Trajectory d1 = directional_derivative(sys, base, delta, ic);
        const Trajectory d2 = directional_derivative(sys, base, delta.scaled(2.0), ic);
        double scale = 0.0, diff = 0.0;
        for (std::size_t n = 0; n < d1.size(); ++n) {
            scale = std::max(scale, d1.states[n].norm());
            diff = std::max(diff, (d2.states[n] - 2.0 * d1.states[n]).norm());
        }
        res.push_back(check_result("derivative_linearity", scale > 0.0 ? diff / scale : diff, 1e-10));

        const int cell = locate_cell(g, spec.position);
        auto truth = random_perturbation(sys, rng);
        truth.da.clear();
        truth.dq = MemoryKernel::zero();
        for (auto& x : truth.db) x *= 0.05;
        for (auto& x : truth.db) x = std::abs(x);
        const SeismogramData observed = sample_trajectory(
            sampler, solve_causal(sys.with_coefficients(perturbed_field(sys.coefficients(), truth, 1.0)), source, ic));
        const auto rows = finite_difference_check(sys, source, sampler, observed, scaled_a_bump(sys, cell, 0.3),
                                                  {1e-2, 1e-3, 1e-4}, ic);
        double best = INFINITY;
        for (const auto& r : rows) best = std::min(best, r.relative_error);
        res.push_back(check_result("gradient_finite_difference", best, 1e-3,
                                   "best of three central-difference steps, bump at " + describe_cell(g, cell)));
    }

    {
        const int cell = locate_cell(g, spec.position);
        double r2 = 0.0;
        for (int a = 0; a < g.dim; ++a) r2 += 0.25 * g.h[a] * g.h[a];
        const ConeSpec cone = ConeSpec::from_speed(g.center(cell), spec.onset, speed, 0.1, std::sqrt(r2));
        res.push_back(check_result("finite_speed_cone_leak", cone_leak(base, cone, sys), cfg.leak_tolerance,
                                   "energy fraction outside a cone 10% faster than the medium"));
    }

    if (const auto* vm = std::get_if<ViscoelasticModel>(&model.model)) {
        if (vm->relaxation.kind() == MemoryKernel::Kind::Prony) {
            const auto split = split_relaxation(*vm);
            double worst = 0.0;
            for (double t : {0.0, 0.5 * g.t_end(), g.t_end()})
                for (int c : {0, vm->cells() - 1})
                    worst = std::max(worst, (reconstruct_relaxation(split, c, t) - vm->relaxation.evaluate(c, t))
                                                .cwiseAbs()
                                                .maxCoeff());
            res.push_back(check_result("kernel_split_reconstruction", worst, 1e-8));
        } else {
            res.push_back(skipped("kernel_split_reconstruction", "relaxation is not a Prony series"));
        }
    }
    return res;
}

// ------------------------------------------------------------------------ run

int run(const RunConfig& cfg, std::ostream& out)
{
    if (cfg.command == Command::Study) return run_study(cfg, out);
    const ModelFile model = load_model(cfg.model);
    switch (cfg.command) {
    case Command::Simulate: return run_simulate(cfg, model, out);
    case Command::Forward: return run_forward(cfg, model, out);
    case Command::Gradient: return run_gradient(cfg, model, out);
    case Command::Check: return run_check(cfg, model, out);
    case Command::Study: break;
    }
    return 0;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Symmetric hyperbolic wave solver with adjoint sensitivities", "roughwave"};
    std::string command, config;
    int jobs = 0;
    std::string outdir;
    std::uint64_t seed = 0;
    app.add_option("command", command, "simulate | forward | gradient | check | study")->required();
    app.add_option("--config", config, "JSON run configuration")->required();
    auto* jobs_opt = app.add_option("--jobs", jobs, "parallel solves")->check(CLI::PositiveNumber);
    auto* out_opt = app.add_option("--out", outdir, "output directory");
    auto* seed_opt = app.add_option("--seed", seed, "seed for randomized checks");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "roughwave: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        RunConfig cfg = parse_config(config, command_from_string(command));
        if (*jobs_opt) cfg.jobs = jobs;
        if (*out_opt) cfg.output = outdir;
        if (*seed_opt) cfg.seed = seed;
        return run(cfg, out);
    } catch (const Error& e) {
        err << "roughwave: " << e.what() << "\n";
        if (e.kind() == Error::Kind::Stability)
            err << "suggested dt: " << static_cast<const StabilityError&>(e).suggested_dt() << "\n";
        return e.kind() == Error::Kind::Solver ? 3 : 2;
    } catch (const Json::exception& e) {
        err << "roughwave: invalid JSON: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "roughwave: " << e.what() << "\n";
        return 3;
    }
}

} // namespace roughwave
