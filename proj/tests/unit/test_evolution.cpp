#include <catch_amalgamated.hpp>

#include <cmath>

#include "roughwave/error.hpp"
#include "roughwave/evolution.hpp"

using namespace roughwave;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

RowMatrix pv_symbol()
{
    RowMatrix p = RowMatrix::Zero(2, 2);
    p(0, 1) = p(1, 0) = 1.0;
    return p;
}

DiscreteSystem acoustics_1d(int cells, double dt, double t_end, Boundary boundary = Boundary::AcousticFree,
                            MemoryKernel q = MemoryKernel::zero(), double b_pp = 0.0)
{
    Grid g = build_grid(1, {cells}, {1.0}, dt, t_end);
    std::vector<double> a, b;
    for (int c = 0; c < cells; ++c) {
        const double kappa = g.center(0, c) < 0.6 ? 1.0 : 2.0;
        a.insert(a.end(), {1.0 / kappa, 0.0, 0.0, 1.0});
        b.insert(b.end(), {b_pp, 0.0, 0.0, 0.0});
    }
    return DiscreteSystem(CoefficientField(g, 2, a, b, std::move(q)), {pv_symbol()}, boundary);
}

MemoryKernel prony_pressure(int cells)
{
    std::vector<double> w(cells * 4, 0.0), w2(cells * 4, 0.0);
    for (int c = 0; c < cells; ++c) {
        w[c * 4] = 0.8;
        w[c * 4 + 3] = 0.2;
        w2[c * 4] = 0.3;
    }
    return MemoryKernel::prony(cells, 2, {PronyTerm{0.05, w}, PronyTerm{0.3, w2}});
}

SourceTerm pulse_source(const DiscreteSystem& sys, int cell, double onset, int s = 4, double width = 0.1)
{
    return make_point_source(sys.grid(), sys.k(), cell, 0, Wavelet::pulse(s, width, onset), 2.0);
}

} // namespace

TEST_CASE("zero forcing gives the zero trajectory", "[evolution]")
{
    auto sys = acoustics_1d(50, 1e-3, 0.1);
    for (Scheme s : {Scheme::ImplicitMidpoint, Scheme::RK4}) {
        IntegratorConfig cfg;
        cfg.scheme = s;
        auto traj = solve_causal(sys, SourceTerm(sys.size()), cfg);
        REQUIRE(traj.size() == 101);
        for (std::size_t n = 0; n < traj.size(); ++n) {
            CHECK(traj.states[n].norm() == 0.0);
            CHECK(traj.energy[n] == 0.0);
        }
    }
}

TEST_CASE("causal solves stay exactly zero before onset", "[evolution]")
{
    auto sys = acoustics_1d(60, 1e-3, 0.3, Boundary::AcousticFree, prony_pressure(60));
    auto src = pulse_source(sys, 20, 0.1037);
    for (Scheme s : {Scheme::ImplicitMidpoint, Scheme::RK4}) {
        IntegratorConfig cfg;
        cfg.scheme = s;
        auto traj = solve_causal(sys, src, cfg);
        double before = 0.0, after = 0.0;
        for (std::size_t n = 0; n < traj.size(); ++n) {
            if (traj.times[n] < 0.1037)
                before = std::max(before, traj.states[n].norm());
            else
                after = std::max(after, traj.states[n].norm());
        }
        CHECK(before == 0.0);
        CHECK(after > 0.0);
        for (std::size_t n = 0; n < traj.size(); ++n)
            CHECK_THAT(traj.energy[n], WithinAbs(energy(sys, traj.states[n]), 1e-15));
    }
}

TEST_CASE("midpoint solves are deterministic and meet the solve tolerance", "[evolution]")
{
    auto sys = acoustics_1d(80, 2e-3, 0.2, Boundary::AcousticFree, prony_pressure(80), 0.5);
    auto src = pulse_source(sys, 30, 0.0);
    auto t1 = solve_causal(sys, src);
    auto t2 = solve_causal(sys, src);
    for (std::size_t n = 0; n < t1.size(); ++n) CHECK((t1.states[n] - t2.states[n]).norm() == 0.0);
    CHECK(t1.max_solve_residual <= 1e-10);
}

TEST_CASE("strided storage keeps every stride-th state and the last", "[evolution]")
{
    auto sys = acoustics_1d(40, 1e-3, 0.05);
    auto src = pulse_source(sys, 10, 0.0);
    IntegratorConfig cfg;
    cfg.stride = 7;
    auto dense = solve_causal(sys, src);
    auto sparse = solve_causal(sys, src, cfg);
    REQUIRE(sparse.size() == 9);
    CHECK(sparse.decimated());
    CHECK((sparse.states[3] - dense.states[21]).norm() == 0.0);
    CHECK((sparse.states.back() - dense.states.back()).norm() == 0.0);
    CHECK_THROWS_AS(energy_identity_residual(sparse, sys, src), InvalidArgument);
}

TEST_CASE("initial-value solve conserves energy and reverses", "[evolution][ivp]")
{
    auto sys = acoustics_1d(200, 1e-3, 1.0);
    Eigen::VectorXd u0 = Eigen::VectorXd::Zero(sys.size());
    for (int c = 0; c < 200; ++c) {
        const double x = sys.grid().center(0, c);
        u0(2 * c) = std::exp(-200.0 * (x - 0.4) * (x - 0.4));
    }
    auto zero_src = SourceTerm(sys.size());
    auto zero = solve_ivp(sys, Eigen::VectorXd::Zero(sys.size()), 0.0, zero_src);
    CHECK(zero.states.back().norm() == 0.0);

    auto traj = solve_ivp(sys, u0, 0.25, zero_src);
    REQUIRE(traj.size() == 1001);
    CHECK(traj.times.front() == 0.25);
    CHECK((traj.states.front() - u0).norm() == 0.0);
    double drift = 0.0;
    for (double e : traj.energy) drift = std::max(drift, std::abs(e - traj.energy.front()) / traj.energy.front());
    CHECK(drift <= 1e-10);

    auto back = solve_ivp(sys.reversed(), traj.states.back(), 0.0, zero_src);
    CHECK((back.states.back() - u0).norm() <= 1e-9 * u0.norm());
}

TEST_CASE("initial-value solves reject memory", "[evolution][ivp]")
{
    auto sys = acoustics_1d(20, 1e-3, 0.1, Boundary::AcousticFree, prony_pressure(20));
    CHECK_THROWS_AS(solve_ivp(sys, Eigen::VectorXd::Zero(sys.size()), 0.0, SourceTerm(sys.size())),
                    UnsupportedConfiguration);
}

TEST_CASE("RK4 enforces the CFL limit", "[evolution][rk4]")
{
    auto sys = acoustics_1d(100, 5e-3, 0.1);
    IntegratorConfig cfg;
    cfg.scheme = Scheme::RK4;
    // c_max = sqrt(2), h = 0.01, limit = 0.5 * 0.01 / sqrt(2)
    const double limit = 0.5 * 0.01 / std::sqrt(2.0);
    try {
        solve_causal(sys, pulse_source(sys, 50, 0.0), cfg);
        FAIL("expected a stability error");
    } catch (const StabilityError& e) {
        CHECK_THAT(e.suggested_dt(), WithinRel(limit, 1e-12));
    }
    auto ok = sys.with_time_axis(limit, 0.1);
    CHECK_NOTHROW(solve_causal(ok, pulse_source(ok, 50, 0.0), cfg));
}

TEST_CASE("RK4 and midpoint agree on a smooth problem", "[evolution][rk4]")
{
    auto sys = acoustics_1d(100, 5e-4, 0.3, Boundary::AcousticFree, prony_pressure(100), 0.3);
    auto src = pulse_source(sys, 40, 0.0, 4, 0.15);
    IntegratorConfig rk;
    rk.scheme = Scheme::RK4;
    auto a = solve_causal(sys, src);
    auto b = solve_causal(sys, src, rk);
    CHECK((a.states.back() - b.states.back()).norm() <= 5e-3 * a.states.back().norm());
}

TEST_CASE("energy identity holds exactly for the conservative case", "[evolution][energy]")
{
    auto sys = acoustics_1d(100, 1e-3, 0.4);
    auto src = pulse_source(sys, 40, 0.0, 4, 0.1);
    auto traj = solve_causal(sys, src);
    auto r = energy_identity_residual(traj, sys, src);
    REQUIRE(r.size() == traj.size() - 1);
    double after = 0.0;
    for (std::size_t n = 0; n < r.size(); ++n)
        if (traj.times[n] > 0.1 + 1e-9) after = std::max(after, std::abs(r[n]));
    CHECK(after <= 1e-12);

    auto zero = solve_causal(sys, SourceTerm(sys.size()));
    for (double v : energy_identity_residual(zero, sys, SourceTerm(sys.size()))) CHECK(v == 0.0);
}

TEST_CASE("energy identity residual is second order with memory", "[evolution][energy]")
{
    std::vector<double> dts{4e-3, 2e-3, 1e-3, 5e-4};
    std::vector<double> peaks;
    for (double dt : dts) {
        auto sys = acoustics_1d(100, dt, 0.3, Boundary::AcousticFree, prony_pressure(100), 0.4);
        auto src = pulse_source(sys, 40, 0.0, 4, 0.1);
        auto traj = solve_causal(sys, src);
        double m = 0.0;
        for (double v : energy_identity_residual(traj, sys, src)) m = std::max(m, std::abs(v));
        peaks.push_back(m);
    }
    for (std::size_t i = 1; i < peaks.size(); ++i)
        CHECK(std::log(peaks[i - 1] / peaks[i]) / std::log(2.0) >= 1.9);
}

TEST_CASE("tabulated memory solve tracks the Prony solve", "[evolution][memory]")
{
    std::vector<double> errs;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
        const int cells = 60;
        auto prony = prony_pressure(cells);
        const int steps = static_cast<int>(std::round(0.2 / dt));
        std::vector<double> samples;
        for (int i = 0; i <= steps + 2; ++i)
            for (int c = 0; c < cells; ++c) {
                RowMatrix q = prony.evaluate(c, i * dt);
                samples.insert(samples.end(), q.data(), q.data() + 4);
            }
        auto tab = MemoryKernel::tabulated(cells, 2, dt, samples);
        auto s1 = acoustics_1d(cells, dt, 0.2, Boundary::AcousticFree, prony);
        auto s2 = acoustics_1d(cells, dt, 0.2, Boundary::AcousticFree, tab);
        auto src = pulse_source(s1, 20, 0.0, 4, 0.1);
        auto a = solve_causal(s1, src);
        auto b = solve_causal(s2, src);
        errs.push_back((a.states.back() - b.states.back()).norm() / a.states.back().norm());
    }
    CHECK(errs[0] < 0.05);
    CHECK(errs[1] < errs[0]);
    CHECK(errs[2] < errs[1]);
    CHECK(std::log2(errs[0] / errs[2]) / 2.0 > 1.5);
}

TEST_CASE("tabulated memory is unsupported in RK4", "[evolution][memory]")
{
    auto tab = MemoryKernel::tabulated(10, 2, 1e-3, std::vector<double>(40 * 3, 0.0));
    auto sys = acoustics_1d(10, 1e-3, 0.01, Boundary::AcousticFree, tab);
    IntegratorConfig cfg;
    cfg.scheme = Scheme::RK4;
    CHECK_THROWS_AS(solve_causal(sys, SourceTerm(sys.size()), cfg), UnsupportedConfiguration);
}

TEST_CASE("smoothing in time", "[evolution][smooth]")
{
    auto sys = acoustics_1d(50, 1e-3, 0.1);
    auto src = make_point_source(sys.grid(), 2, 25, 0,
                                 Wavelet::custom([](double t) { return t < 0.02 ? 0.0 : 1.0; }, 0.02, 1));
    auto traj = solve_causal(sys, src);
    auto same = smooth_trajectory(traj, 1);
    for (std::size_t n = 0; n < traj.size(); ++n) CHECK((same.states[n] - traj.states[n]).norm() == 0.0);

    // Constant tail: a trajectory whose last stretch is frozen.
    Trajectory flat = traj;
    for (std::size_t n = 50; n < flat.size(); ++n) flat.states[n] = flat.states[50];
    auto sm = smooth_trajectory(flat, 5, sys);
    for (std::size_t n = 55; n < flat.size(); ++n) CHECK((sm.states[n] - flat.states[50]).norm() <= 1e-14 * flat.states[50].norm());
    CHECK(sm.energy.size() == sm.size());
    CHECK_THROWS_AS(smooth_trajectory(traj, 0), InvalidArgument);
}

TEST_CASE("graph norm of smoothed solutions stays bounded under refinement", "[evolution][smooth]")
{
    std::vector<double> peaks;
    for (double dt : {2e-3, 1e-3, 5e-4}) {
        auto sys = acoustics_1d(100, dt, 0.3);
        auto src = make_point_source(sys.grid(), 2, 40, 0, Wavelet::pulse(1, 0.05, 0.0), 3.0);
        auto traj = solve_causal(sys, src);
        const int window = static_cast<int>(std::round(0.02 / dt));
        auto sm = smooth_trajectory(traj, window);
        double m = 0.0;
        for (double v : graph_norm_series(sm, sys)) m = std::max(m, v);
        peaks.push_back(m);
    }
    CHECK(peaks[2] <= 1.2 * peaks[0]);
    CHECK(peaks[1] <= 1.2 * peaks[0]);
}
