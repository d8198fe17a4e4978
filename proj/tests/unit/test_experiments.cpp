#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "roughwave/error.hpp"
#include "roughwave/experiments.hpp"

using namespace roughwave;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace fs = std::filesystem;

namespace {

ConeRun acoustic_cone(int refine, bool layered, double speed_factor = 1.0)
{
    const int cells = 400 * refine;
    Grid g = build_grid(1, {cells}, {2.0}, 0.5 * 2.0 / cells, 1.0);
    auto m = layered ? AcousticModel::two_layer(g, 0, 1.0, 1.0, 1.0, 4.0, 1.0) : AcousticModel::uniform(cells, 1.0, 1.0);
    auto sys = acoustics_system(m, g);
    const int sc = cells / 4;
    auto src = make_point_source(g, 2, sc, 0, Wavelet::pulse(4, 0.1, 0.0));
    return {sys, src,
            ConeSpec::from_speed({g.center(0, sc), 0, 0}, 0.0, speed_factor * max_wavespeed(m), 0.1, 0.5 * g.h[0])};
}

} // namespace

TEST_CASE("unit bump has unit mass and compact support")
{
    double s = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) s += unit_bump(-1.0 + (i + 0.5) * 2.0 / n) * 2.0 / n;
    CHECK_THAT(s, WithinAbs(1.0, 1e-10));
    CHECK(unit_bump(1.0) == 0.0);
    CHECK(unit_bump(-1.5) == 0.0);
}

TEST_CASE("advection oracle closed forms")
{
    CHECK(advection_oracle(1.3, [](double, double) { return 0.0; }, 2.0, 0.1) == 0.0);
    // Constant f on [0, t]: u = c t.
    CHECK_THAT(advection_oracle(2.0, [](double, double) { return 1.0; }, 0.7, 0.3), WithinRel(1.4, 1e-12));
    // For c = 1 the oscillatory family is transported unchanged once chi(x) has been swept.
    auto f = oscillatory_source(0.1);
    for (double x : {-3.2, -2.5, -1.8}) {
        const double t = 2.5;
        CHECK_THAT(advection_oracle(1.0, f, t, x, -2.0),
                   WithinAbs(std::cos((x + t) / 0.1) * unit_bump(x + t), 1e-9));
    }
}

TEST_CASE("advection solver converges at second order")
{
    auto f = [](double t, double x) { return unit_bump((t - 0.45) / 0.35) * unit_bump((x - 0.5) / 0.25); };
    auto r = advection_convergence_study(1.0, f, 0.1, 1.0, -1.0, 1.5, {250, 500, 1000}, 0.5, 1.9, 2);
    CHECK(r.slope >= 1.9);
    CHECK(r.passed);
}

TEST_CASE("oscillatory data is suppressed away from the matched speed")
{
    auto r = oscillation_suppression_study(1.5, {0.1, 0.05, 0.01}, 1.5);
    const auto& n = r.metric("l2_norm");
    CHECK(n[0] > n[1]);
    CHECK(n[1] > n[2]);
    CHECK(n[0] / n[2] >= 10.0);
    CHECK(r.passed);
}

TEST_CASE("d'Alembert oracle matches the acoustic solver")
{
    const double kappa = 4.0, rho = 1.0;
    auto p0 = [](double x) { return unit_bump((x - 1.0) / 0.2); };
    DalembertProblem pr{kappa, rho, p0, nullptr, nullptr, nullptr, 0.0};
    // Split into halves moving at +-2.
    auto pv = dalembert_oracle(pr, 0.2, 1.4);
    CHECK_THAT(pv[0], WithinAbs(0.5 * p0(1.0), 1e-12));
    CHECK_THAT(pv[1], WithinAbs(0.5 * p0(1.0) / 2.0, 1e-12));

    auto l2_error = [&](int n) {
        Grid g = build_grid(1, {n}, {2.0}, 0.5 / n, 0.25);
        auto sys = acoustics_system(AcousticModel::uniform(n, kappa, rho), g);
        Eigen::VectorXd u0 = Eigen::VectorXd::Zero(sys.size());
        for (int c = 0; c < n; ++c) u0[2 * c] = p0(g.center(0, c));
        IntegratorConfig cfg;
        cfg.stride = g.n_steps;
        auto traj = solve_ivp(sys, u0, 0.0, SourceTerm(sys.size()), cfg);
        double s = 0.0;
        for (int c = 0; c < n; ++c) {
            auto ex = dalembert_oracle(pr, 0.25, g.center(0, c));
            s += std::pow(traj.states.back()[2 * c] - ex[0], 2) + std::pow(traj.states.back()[2 * c + 1] - ex[1], 2);
        }
        return std::sqrt(s * g.h[0]);
    };
    const double e1 = l2_error(800), e2 = l2_error(1600);
    CHECK(e1 < 5e-3);
    CHECK(e1 / e2 > 3.0);
}

TEST_CASE("d'Alembert oracle with a pressure source")
{
    // Constant unit source everywhere: p grows like kappa t, v stays 0.
    DalembertProblem pr;
    pr.kappa = 3.0;
    pr.fp = [](double, double) { return 1.0; };
    auto pv = dalembert_oracle(pr, 0.5, 0.0);
    CHECK_THAT(pv[0], WithinRel(1.5, 1e-12));
    CHECK_THAT(pv[1], WithinAbs(0.0, 1e-14));
}

TEST_CASE("cone geometry")
{
    auto c = ConeSpec::from_speed({0.5, 0, 0}, 0.0, 2.0, 0.0, 0.1);
    CHECK(c.contains({0.5, 0, 0}, 0.0));
    CHECK_FALSE(c.contains({0.5, 0, 0}, 0.01));
    CHECK(c.contains({1.1, 0, 0}, 0.2)); // distance 0.5 at speed 2 needs 0.25
    CHECK_FALSE(c.contains({1.1, 0, 0}, 0.3));
    CHECK_THROWS_AS(ConeSpec::from_speed({0, 0, 0}, 0.0, -1.0, 0.0), InvalidArgument);
    ConeSpec bad;
    bad.margin = -0.1;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("zero source leaks nothing")
{
    auto run = acoustic_cone(1, false);
    auto traj = solve_causal(run.system, SourceTerm(run.system.size()));
    CHECK(cone_leak(traj, run.cone, run.system) == 0.0);
}

TEST_CASE("finite speed: leak is tiny and shrinks under refinement")
{
    for (bool layered : {false, true}) {
        auto r = cone_refinement_study([&](int f) { return acoustic_cone(f, layered); }, {1, 2}, 1e-6, {}, 2);
        const auto& leak = r.metric("leak");
        INFO("layered " << layered << " leak " << leak[0] << " -> " << leak[1]);
        CHECK(leak[0] <= 1e-6);
        CHECK(leak[1] < leak[0]);
        CHECK(r.passed);
    }
}

TEST_CASE("a cone slower than the medium catches energy")
{
    auto run = acoustic_cone(1, false, 0.5);
    auto traj = solve_causal(run.system, run.source);
    CHECK(cone_leak(traj, run.cone, run.system) > 0.1);
}

TEST_CASE("measure convergence on a two-layer medium")
{
    Grid g = build_grid(1, {400}, {1.0}, 1e-3, 0.6);
    auto sys = acoustics_system(AcousticModel::two_layer(g, 0, 0.5, 1.0, 1.0, 4.0, 2.0), g);
    auto src = make_point_source(g, 2, 100, 0, Wavelet::pulse(4, 0.1, 0.0));
    auto sampler = build_sampler(ReceiverGeometry{{{0.2, 0, 0}}}, TraceTag::PressureTrace, g, 2);
    auto r = measure_convergence_study(sys, src, {4, 8, 16, 32}, &sampler, 1e-3, 0.25, {}, 2);
    const auto& d = r.metric("solution_distance");
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] < d[i - 1]);
    CHECK(d.back() <= 0.25 * d.front());
    const auto& m = r.metric("measure_distance");
    for (std::size_t i = 1; i < m.size(); ++i) CHECK(m[i] < m[i - 1]);
    CHECK(r.passed);
    CHECK_THROWS_AS(measure_convergence_study(sys, src, {4, 8}), InvalidArgument);
}

TEST_CASE("measure convergence on a constant field is exact")
{
    Grid g = build_grid(1, {100}, {1.0}, 2e-3, 0.2);
    auto sys = acoustics_system(AcousticModel::uniform(100, 1.0, 1.0), g);
    auto src = make_point_source(g, 2, 50, 0, Wavelet::pulse(4, 0.1, 0.0));
    auto r = measure_convergence_study(sys, src, {4, 8, 16});
    for (double d : r.metric("solution_distance")) CHECK(d <= 1e-12);
}

TEST_CASE("trace regularity probe")
{
    Grid g = build_grid(1, {200}, {1.0}, 4e-3, 0.5);
    auto sys = acoustics_system(AcousticModel::uniform(200, 1.0, 1.0), g);
    auto sampler = build_sampler(ReceiverGeometry{{{0.7, 0, 0}}}, TraceTag::PressureTrace, g, 2);
    auto r = trace_regularity_probe(sys, 60, 0, sampler, {1, 2, 3}, 0.1, {1, 2, 4}, 2.0, {}, 2);
    CHECK(r.passed);
    CHECK(r.metric("s3_d2").size() == 3);

    auto z = trace_regularity_probe(sys, 60, 0, sampler, {0}, 0.1);
    CHECK(z.metric("s0_d0") == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("discrete derivatives of a polynomial trace")
{
    SeismogramData d;
    for (int n = 0; n <= 10; ++n) d.times.push_back(0.1 * n);
    d.values.resize(1, 11);
    for (int n = 0; n <= 10; ++n) d.values(0, n) = d.times[n] * d.times[n];
    CHECK_THAT(max_discrete_derivative(d, 0), WithinRel(1.0, 1e-12));
    CHECK_THAT(max_discrete_derivative(d, 2), WithinRel(2.0, 1e-9));
}

TEST_CASE("study report round-trip and validation")
{
    StudyReport r;
    r.name = "demo";
    r.parameter = "h";
    r.schedule = {0.1, 0.05, 0.025};
    r.add_series("err", {1.0, 0.25, 0.0625});
    r.slope = 2.0;
    r.passed = true;
    const fs::path dir = fs::temp_directory_path() / "rw_study";
    fs::remove_all(dir);
    write_study_report(dir, r);
    auto back = read_study_report(dir / "demo.json");
    CHECK(back.schedule == r.schedule);
    CHECK(back.metric("err") == r.metric("err"));
    CHECK(back.passed);
    auto csv = read_csv(dir / "demo.csv");
    CHECK(csv.header == std::vector<std::string>{"h", "err"});
    fs::remove_all(dir);

    r.schedule = {0.1, 0.1, 0.05};
    CHECK_THROWS_AS(r.validate(), InvalidArgument);
    r.schedule = {0.1, 0.05};
    CHECK_THROWS_AS(r.validate(), DimensionMismatch);
}
