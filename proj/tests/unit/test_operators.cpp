#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "roughwave/error.hpp"
#include "roughwave/operators.hpp"

using namespace roughwave;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<RowMatrix> acoustic_symbols(int dim)
{
    std::vector<RowMatrix> p;
    for (int j = 0; j < dim; ++j) {
        RowMatrix m = RowMatrix::Zero(dim + 1, dim + 1);
        m(0, j + 1) = m(j + 1, 0) = 1.0;
        p.push_back(m);
    }
    return p;
}

RowMatrix random_symmetric(int k, std::mt19937_64& rng)
{
    std::normal_distribution<double> n;
    RowMatrix m(k, k);
    for (int i = 0; i < k * k; ++i) m.data()[i] = n(rng);
    return 0.5 * (m + m.transpose());
}

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng)
{
    std::normal_distribution<double> d;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
    return v;
}

double skew_defect(const SparseMatrix& p, const Eigen::VectorXd& u, const Eigen::VectorXd& v)
{
    return std::abs((p * u).dot(v) + u.dot(p * v)) / (u.norm() * v.norm());
}

} // namespace

TEST_CASE("identity mass operator", "[operators][mass]")
{
    Grid g = build_grid(1, {5}, {1.0}, 0.1, 1.0);
    auto f = CoefficientField::uniform(g, RowMatrix::Identity(2, 2));
    auto a = assemble_mass(f);
    Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(10, -1.0, 1.0);
    CHECK((a.apply(u) - u).norm() == 0.0);
    CHECK((a.solve(u) - u).norm() == 0.0);
}

TEST_CASE("acoustic mass block is diag(1/kappa, rho, ...)", "[operators][mass]")
{
    Grid g = build_grid(3, {2, 2, 2}, {1.0}, 0.1, 1.0);
    RowMatrix a = RowMatrix::Zero(4, 4);
    a.diagonal() << 1.0 / 4.0, 1.0, 1.0, 1.0;
    auto m = assemble_mass(CoefficientField::uniform(g, a));
    for (int c = 0; c < g.num_cells(); ++c) {
        CHECK(m.block(c)(0, 0) == 0.25);
        CHECK(m.block(c)(3, 3) == 1.0);
        CHECK(m.block(c)(0, 1) == 0.0);
    }
    CHECK(m.lower() == 0.25);
    CHECK(m.upper() == 1.0);
}

TEST_CASE("mass apply then solve round-trips on random SPD cells", "[operators][mass]")
{
    std::mt19937_64 rng(3);
    Grid g = build_grid(2, {8, 6}, {1.0}, 0.1, 1.0);
    const int k = 3;
    std::vector<double> blocks;
    for (int c = 0; c < g.num_cells(); ++c) {
        RowMatrix s = random_symmetric(k, rng);
        RowMatrix spd = s * s.transpose() + 0.1 * RowMatrix::Identity(k, k);
        spd = 0.5 * (spd + spd.transpose()).eval();
        blocks.insert(blocks.end(), spd.data(), spd.data() + k * k);
    }
    auto m = assemble_mass(g, k, blocks);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd u = random_vector(g.state_size(k), rng);
        CHECK((m.solve(m.apply(u)) - u).norm() <= 1e-12 * u.norm());
        const double rq = u.dot(m.apply(u)) / u.squaredNorm();
        CHECK(rq >= m.lower() * (1 - 1e-12));
        CHECK(rq <= m.upper() * (1 + 1e-12));
    }
}

TEST_CASE("non-SPD mass block is rejected with its cell", "[operators][mass]")
{
    Grid g = build_grid(2, {3, 3}, {1.0}, 0.1, 1.0);
    std::vector<double> blocks(9, 1.0);
    blocks[g.index({2, 1, 0})] = -0.5;
    REQUIRE_THROWS_AS(assemble_mass(g, 1, blocks), InvalidCoefficient);
    REQUIRE_THROWS_WITH(assemble_mass(g, 1, blocks), ContainsSubstring("cell 7 (2,1)"));
}

TEST_CASE("periodic centred difference is exactly antisymmetric", "[operators][skew]")
{
    Grid g = build_grid(1, {17}, {1.0}, 0.1, 1.0);
    auto p = assemble_skew({RowMatrix::Identity(1, 1)}, g, Boundary::Periodic);
    Eigen::MatrixXd d = Eigen::MatrixXd(p.matrix());
    CHECK((d + d.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.apply(Eigen::VectorXd::Constant(17, 3.5)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THAT(d(0, 1), WithinRel(17.0 / 2.0, 1e-14));
    CHECK_THAT(d(0, 16), WithinRel(-17.0 / 2.0, 1e-14));
}

TEST_CASE("periodic grad-div plane waves follow the discrete symbol", "[operators][skew]")
{
    const int n = 64;
    Grid g = build_grid(1, {n}, {1.0}, 0.1, 1.0);
    auto p = assemble_skew(acoustic_symbols(1), g, Boundary::Periodic);
    const double h = g.h[0];
    for (int m : {1, 3, 10, 31}) {
        for (double sign : {1.0, -1.0}) {
            Eigen::VectorXd re(2 * n), im(2 * n);
            for (int j = 0; j < n; ++j) {
                const double th = 2.0 * std::numbers::pi * m * g.center(0, j);
                re(2 * j) = std::cos(th);
                re(2 * j + 1) = sign * std::cos(th);
                im(2 * j) = std::sin(th);
                im(2 * j + 1) = sign * std::sin(th);
            }
            // P u = i * sign * sin(2 pi m h) / h * u
            const double lambda = sign * std::sin(2.0 * std::numbers::pi * m * h) / h;
            CHECK((p.apply(re) - (-lambda) * im).norm() <= 1e-10 * std::abs(lambda) * re.norm());
            CHECK((p.apply(im) - lambda * re).norm() <= 1e-10 * std::abs(lambda) * re.norm());
        }
    }
}

TEST_CASE("random symbols give skew operators on periodic grids", "[operators][skew]")
{
    std::mt19937_64 rng(5);
    for (int dim : {1, 2, 3}) {
        Grid g = build_grid(dim, std::vector<int>(dim, dim == 3 ? 5 : 9), {1.0}, 0.1, 1.0);
        std::vector<RowMatrix> p;
        for (int j = 0; j < dim; ++j) p.push_back(random_symmetric(3, rng));
        auto op = assemble_skew(p, g, Boundary::Periodic);
        for (int trial = 0; trial < 10; ++trial) {
            auto u = random_vector(op.size(), rng);
            auto v = random_vector(op.size(), rng);
            CHECK(skew_defect(op.matrix(), u, v) <= 1e-12);
        }
        Eigen::MatrixXd d = Eigen::MatrixXd(op.matrix());
        CHECK((d + d.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("acoustic free closure is skew and zeroes boundary pressure", "[operators][skew]")
{
    std::mt19937_64 rng(9);
    for (int dim : {1, 2, 3}) {
        Grid g = build_grid(dim, std::vector<int>(dim, 6), {1.0}, 0.1, 1.0);
        auto op = assemble_skew(acoustic_symbols(dim), g, Boundary::AcousticFree);
        Eigen::MatrixXd d = Eigen::MatrixXd(op.matrix());
        CHECK((d + d.transpose()).cwiseAbs().maxCoeff() == 0.0);
        for (int trial = 0; trial < 5; ++trial) {
            auto u = random_vector(op.size(), rng);
            auto v = random_vector(op.size(), rng);
            CHECK(skew_defect(op.matrix(), u, v) <= 1e-12);
        }
    }
    // Constant pressure sees the wall: the odd ghost makes the one-sided
    // gradient p / h at the first cell and -p / h at the last.
    Grid g = build_grid(1, {10}, {1.0}, 0.1, 1.0);
    auto op = assemble_skew(acoustic_symbols(1), g, Boundary::AcousticFree);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(20);
    for (int c = 0; c < 10; ++c) u(2 * c) = 2.0;
    Eigen::VectorXd pu = op.apply(u);
    CHECK_THAT(pu(1), WithinRel(2.0 / g.h[0], 1e-14));
    CHECK_THAT(pu(19), WithinRel(-2.0 / g.h[0], 1e-14));
    CHECK(pu(9) == 0.0);
    // Constant velocity feels no wall: even ghosts.
    Eigen::VectorXd v = Eigen::VectorXd::Zero(20);
    for (int c = 0; c < 10; ++c) v(2 * c + 1) = 1.0;
    CHECK(op.apply(v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("skew assembly validates its inputs", "[operators][skew]")
{
    Grid g = build_grid(1, {8}, {1.0}, 0.1, 1.0);
    RowMatrix ns(2, 2);
    ns << 0.0, 1.0, 0.5, 0.0;
    CHECK_THROWS_AS(assemble_skew({ns}, g, Boundary::Periodic), InvalidArgument);
    RowMatrix full = RowMatrix::Ones(2, 2);
    CHECK_THROWS_AS(assemble_skew({full}, g, Boundary::AcousticFree), UnsupportedConfiguration);
    CHECK_THROWS_AS(assemble_skew({RowMatrix::Identity(3, 3)}, g, Boundary::AcousticFree), UnsupportedConfiguration);
    CHECK_THROWS_AS(assemble_skew(acoustic_symbols(2), g, Boundary::Periodic), DimensionMismatch);
}

TEST_CASE("skew operator exports coordinate format", "[operators][skew]")
{
    Grid g = build_grid(1, {4}, {1.0}, 0.1, 1.0);
    auto op = assemble_skew({RowMatrix::Identity(1, 1)}, g, Boundary::Periodic);
    std::ostringstream os;
    op.export_coordinate(os);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    CHECK(header == "%%MatrixMarket matrix coordinate real general");
    int rows, cols, nnz;
    is >> rows >> cols >> nnz;
    CHECK(rows == 4);
    CHECK(nnz == 8);
    int r, c;
    double v;
    Eigen::MatrixXd rebuilt = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < nnz; ++i) {
        is >> r >> c >> v;
        rebuilt(r - 1, c - 1) = v;
    }
    CHECK((rebuilt - Eigen::MatrixXd(op.matrix())).norm() == 0.0);
}

TEST_CASE("Prony auxiliary recursion is exact for constant input", "[operators][memory]")
{
    const std::vector<PronyTerm> terms{PronyTerm{1.0, {1.0}}};
    const double dt = 0.05;
    std::vector<Eigen::VectorXd> aux{Eigen::VectorXd::Zero(1)};
    Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    auto still = prony_advance(aux, zero, zero, dt, terms);
    CHECK(still[0](0) == 0.0);
    for (int n = 1; n <= 40; ++n) {
        aux = prony_advance(aux, one, one, dt, terms);
        CHECK_THAT(aux[0](0), WithinAbs(1.0 - std::exp(-n * dt), 1e-14));
    }
}

TEST_CASE("Prony recursion converges to the continuous convolution", "[operators][memory]")
{
    const double tau = 0.4;
    auto u = [](double t) { return std::sin(3.0 * t) + t * t; };
    const double exact = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double s) { return std::exp(-(1.0 - s) / tau) * u(s); }, 0.0, 1.0, 10, 1e-15);
    double previous = 1e300;
    std::vector<double> errors;
    for (int steps : {10, 20, 40, 80}) {
        const double dt = 1.0 / steps;
        std::vector<Eigen::VectorXd> aux{Eigen::VectorXd::Zero(1)};
        for (int n = 0; n < steps; ++n)
            aux = prony_advance(aux, Eigen::VectorXd::Constant(1, u(n * dt)), Eigen::VectorXd::Constant(1, u((n + 1) * dt)),
                                dt, {PronyTerm{tau, {1.0}}});
        const double err = std::abs(aux[0](0) - exact);
        CHECK(err < previous);
        previous = err;
        errors.push_back(err);
    }
    CHECK(std::log2(errors.front() / errors.back()) / 3.0 > 1.9);
}

TEST_CASE("memory operator on a unit step", "[operators][memory]")
{
    const double dt = 0.01;
    std::vector<Eigen::VectorXd> hist(101, Eigen::VectorXd::Ones(1));
    MemoryOperator zero;
    CHECK(zero.apply(hist, 50, dt).norm() == 0.0);

    MemoryOperator prony(MemoryKernel::prony(1, 1, {PronyTerm{1.0, {1.0}}}));
    for (int n : {0, 1, 10, 100}) CHECK_THAT(prony.apply(hist, n, dt)(0), WithinAbs(1.0 - std::exp(-n * dt), 1e-14));
    CHECK_THROWS_AS(prony.apply(hist, 101, dt), InvalidArgument);

    std::vector<Eigen::VectorXd> empty_hist(101, Eigen::VectorXd::Zero(1));
    CHECK(prony.apply(empty_hist, 100, dt).norm() == 0.0);
}

TEST_CASE("tabulated and Prony memory agree to second order", "[operators][memory]")
{
    std::vector<double> dts{0.04, 0.02, 0.01, 0.005};
    std::vector<double> errs;
    for (double dt : dts) {
        const int steps = static_cast<int>(std::round(1.0 / dt));
        std::vector<double> samples(steps + 1);
        for (int i = 0; i <= steps; ++i) samples[i] = std::exp(-i * dt);
        MemoryOperator tab(MemoryKernel::tabulated(1, 1, dt, samples));
        MemoryOperator pr(MemoryKernel::prony(1, 1, {PronyTerm{1.0, {1.0}}}));
        std::vector<Eigen::VectorXd> hist;
        for (int i = 0; i <= steps; ++i) hist.push_back(Eigen::VectorXd::Constant(1, std::cos(2.0 * i * dt)));
        errs.push_back(std::abs(tab.apply(hist, steps, dt)(0) - pr.apply(hist, steps, dt)(0)));
    }
    for (std::size_t i = 1; i < errs.size(); ++i) {
        const double slope = std::log(errs[i - 1] / errs[i]) / std::log(dts[i - 1] / dts[i]);
        CHECK(slope >= 1.9);
    }
}

TEST_CASE("memory is causal in its history", "[operators][memory]")
{
    std::mt19937_64 rng(2);
    const double dt = 0.02;
    std::vector<Eigen::VectorXd> hist;
    for (int i = 0; i < 30; ++i) hist.push_back(random_vector(3, rng));
    std::vector<double> samples;
    for (int i = 0; i < 40; ++i)
        for (int c = 0; c < 3; ++c) samples.push_back(std::exp(-i * dt * (c + 1)));
    for (const MemoryOperator& r : {MemoryOperator(MemoryKernel::prony(3, 1, {PronyTerm{0.3, {1.0, 2.0, 3.0}}})),
                                    MemoryOperator(MemoryKernel::tabulated(3, 1, dt, samples))}) {
        auto altered = hist;
        for (int i = 16; i < 30; ++i) altered[i] = random_vector(3, rng);
        CHECK((r.apply(hist, 15, dt) - r.apply(altered, 15, dt)).norm() == 0.0);
    }
}

TEST_CASE("energy of acoustic states", "[operators][energy]")
{
    Grid g = build_grid(1, {2}, {2.0}, 0.1, 1.0);
    auto f = CoefficientField::uniform(g, RowMatrix::Identity(2, 2));
    auto m = assemble_mass(f);
    CHECK(energy(m, Eigen::VectorXd::Zero(4), g.cell_volume()) == 0.0);
    Eigen::VectorXd u(4);
    u << 2.0, 0.0, 0.0, 0.0;
    CHECK_THAT(energy(m, u, g.cell_volume()), WithinRel(2.0, 1e-15));
    CHECK_THROWS_AS(energy(m, Eigen::VectorXd::Zero(3), 1.0), DimensionMismatch);
}

TEST_CASE("energy is bounded by the mass spectrum", "[operators][energy]")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> kappa(0.5, 4.0);
    Grid g = build_grid(2, {10, 10}, {1.0}, 0.1, 1.0);
    std::vector<double> a;
    for (int c = 0; c < g.num_cells(); ++c) {
        RowMatrix blk = RowMatrix::Zero(3, 3);
        blk.diagonal() << 1.0 / kappa(rng), kappa(rng), kappa(rng);
        a.insert(a.end(), blk.data(), blk.data() + 9);
    }
    CoefficientField f(g, 3, a, {});
    DiscreteSystem sys(f, acoustic_symbols(2), Boundary::AcousticFree);
    for (int trial = 0; trial < 20; ++trial) {
        auto u = random_vector(sys.size(), rng);
        const double n2 = grid_dot(g, u, u);
        const double e = energy(sys, u);
        CHECK(e >= 0.5 * f.bounds().lower * n2 * (1 - 1e-12));
        CHECK(e <= 0.5 * f.bounds().upper * n2 * (1 + 1e-12));
    }
}

TEST_CASE("discrete system wavespeed and reversal", "[operators][system]")
{
    Grid g = build_grid(1, {10}, {1.0}, 0.01, 1.0);
    std::vector<double> a;
    for (int c = 0; c < 10; ++c) {
        const double kappa = c == 3 ? 4.0 : 1.0;
        a.insert(a.end(), {1.0 / kappa, 0.0, 0.0, 1.0});
    }
    DiscreteSystem sys(CoefficientField(g, 2, a, {}), acoustic_symbols(1), Boundary::AcousticFree);
    CHECK_THAT(sys.max_characteristic_speed(), WithinRel(2.0, 1e-12));
    auto rev = sys.reversed();
    CHECK((Eigen::MatrixXd(rev.skew().matrix()) + Eigen::MatrixXd(sys.skew().matrix())).norm() == 0.0);

    Grid g2 = build_grid(2, {4, 4}, {1.0}, 0.01, 1.0);
    RowMatrix a2 = RowMatrix::Identity(3, 3);
    a2(0, 0) = 1.0 / 9.0;
    DiscreteSystem sys2(CoefficientField::uniform(g2, a2), acoustic_symbols(2), Boundary::Periodic);
    CHECK_THAT(sys2.max_characteristic_speed(), WithinRel(3.0, 1e-12));
}
