#include "roughwave/physics.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "roughwave/error.hpp"

namespace roughwave {

namespace fs = std::filesystem;

namespace {

constexpr double kSymTol = 1e-12;

std::vector<std::array<int, 2>> mandel_pairs(int dim)
{
    switch (dim) {
    case 1: return {{0, 0}};
    case 2: return {{0, 0}, {1, 1}, {0, 1}};
    case 3: return {{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}};
    default: throw InvalidArgument("dimension must be 1, 2, or 3");
    }
}

bool symmetric(const RowMatrix& m)
{
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= kSymTol * scale;
}

void check_cells(int have, const Grid* grid, const char* what)
{
    if (grid && have != grid->num_cells())
        throw DimensionMismatch(std::string(what) + " has " + std::to_string(have) + " cells, grid has " +
                                std::to_string(grid->num_cells()));
}

std::string where(const Grid* grid, int cell)
{
    return grid ? describe_cell(*grid, cell) : "cell " + std::to_string(cell);
}

/// Place a width-m kernel into the top-left block of a width-k kernel.
MemoryKernel embed_kernel(const MemoryKernel& q, int cells, int k)
{
    const int m = q.k();
    auto widen = [&](std::span<const double> src) {
        std::vector<double> out(static_cast<std::size_t>(cells) * k * k, 0.0);
        for (int c = 0; c < cells; ++c)
            for (int r = 0; r < m; ++r)
                for (int s = 0; s < m; ++s)
                    out[(static_cast<std::size_t>(c) * k + r) * k + s] =
                        src[(static_cast<std::size_t>(c) * m + r) * m + s];
        return out;
    };
    if (q.kind() == MemoryKernel::Kind::Prony) {
        std::vector<PronyTerm> terms;
        for (const auto& t : q.prony_terms()) terms.push_back({t.tau, widen(t.weights)});
        return MemoryKernel::prony(cells, k, std::move(terms));
    }
    if (q.kind() == MemoryKernel::Kind::Tabulated) {
        const auto per = static_cast<std::size_t>(cells) * m * m;
        std::vector<double> samples;
        samples.reserve(static_cast<std::size_t>(q.sample_count()) * cells * k * k);
        for (int s = 0; s < q.sample_count(); ++s) {
            auto w = widen(std::span<const double>(q.samples()).subspan(s * per, per));
            samples.insert(samples.end(), w.begin(), w.end());
        }
        return MemoryKernel::tabulated(cells, k, q.sample_dt(), std::move(samples));
    }
    return MemoryKernel::zero();
}

} // namespace

// ------------------------------------------------------------------ acoustics

AcousticModel AcousticModel::uniform(int cells, double kappa, double rho)
{
    AcousticModel m;
    m.rho.assign(cells, rho);
    m.kappa.assign(cells, kappa);
    return m;
}

AcousticModel AcousticModel::two_layer(const Grid& grid, int axis, double interface, double kappa1, double rho1,
                                       double kappa2, double rho2)
{
    if (axis < 0 || axis >= grid.dim) throw InvalidArgument("layer axis out of range");
    AcousticModel m;
    for (int c = 0; c < grid.num_cells(); ++c) {
        const bool second = grid.center(c)[axis] >= interface;
        m.kappa.push_back(second ? kappa2 : kappa1);
        m.rho.push_back(second ? rho2 : rho1);
    }
    return m;
}

void AcousticModel::validate(const Grid* grid) const
{
    if (rho.size() != kappa.size()) throw DimensionMismatch("density and bulk modulus arrays differ in length");
    check_cells(cells(), grid, "acoustic model");
    if (!(kappa_scale > 0.0) || !(rho_scale > 0.0)) throw InvalidArgument("acoustic scales must be positive");
    for (int c = 0; c < cells(); ++c) {
        const double sk = kappa_scale * kappa[c];
        const double sr = rho_scale * rho[c];
        if (!std::isfinite(sk) || !(sk > 0.0))
            throw InvalidCoefficient("bulk modulus must be positive and finite at " + where(grid, c));
        if (!std::isfinite(sr) || !(sr > 0.0))
            throw InvalidCoefficient("density must be positive and finite at " + where(grid, c));
        if (lower_bound && (sk < *lower_bound || sr < *lower_bound)) {
            std::ostringstream os;
            os << "scaled bulk modulus " << sk << " or density " << sr << " is below C_* = " << *lower_bound
               << " at " << where(grid, c);
            throw InvalidCoefficient(os.str());
        }
        if (upper_bound && (sk > *upper_bound || sr > *upper_bound)) {
            std::ostringstream os;
            os << "scaled bulk modulus " << sk << " or density " << sr << " exceeds C^* = " << *upper_bound
               << " at " << where(grid, c);
            throw InvalidCoefficient(os.str());
        }
    }
}

std::vector<RowMatrix> acoustic_symbols(int dim)
{
    if (dim < 1 || dim > 3) throw InvalidArgument("dimension must be 1, 2, or 3");
    std::vector<RowMatrix> out;
    for (int j = 0; j < dim; ++j) {
        RowMatrix p = RowMatrix::Zero(dim + 1, dim + 1);
        p(0, j + 1) = 1.0;
        p(j + 1, 0) = 1.0;
        out.push_back(std::move(p));
    }
    return out;
}

CoefficientField acoustic_coefficients(const AcousticModel& model, const Grid& grid)
{
    model.validate(&grid);
    const int k = grid.dim + 1;
    std::vector<double> a(static_cast<std::size_t>(grid.num_cells()) * k * k, 0.0);
    for (int c = 0; c < grid.num_cells(); ++c) {
        double* blk = a.data() + static_cast<std::size_t>(c) * k * k;
        blk[0] = 1.0 / (model.kappa_scale * model.kappa[c]);
        for (int j = 1; j < k; ++j) blk[j * k + j] = model.rho_scale * model.rho[c];
    }
    std::vector<double> b(a.size(), 0.0);
    return CoefficientField(grid, k, std::move(a), std::move(b));
}

DiscreteSystem acoustics_system(const AcousticModel& model, const Grid& grid, Boundary boundary)
{
    return DiscreteSystem(acoustic_coefficients(model, grid), acoustic_symbols(grid.dim), boundary);
}

double max_wavespeed(const AcousticModel& model)
{
    model.validate();
    double best = 0.0;
    for (int c = 0; c < model.cells(); ++c)
        best = std::max(best, std::sqrt(model.kappa_scale * model.kappa[c] / (model.rho_scale * model.rho[c])));
    return best;
}

// ------------------------------------------------------------ viscoelasticity

int stress_size(int dim)
{
    return static_cast<int>(mandel_pairs(dim).size());
}

std::vector<RowMatrix> strain_operators(int dim)
{
    const auto pairs = mandel_pairs(dim);
    const int m = static_cast<int>(pairs.size());
    std::vector<RowMatrix> e(dim, RowMatrix::Zero(m, dim));
    for (int row = 0; row < m; ++row) {
        const auto [a, b] = pairs[row];
        if (a == b) {
            e[a](row, a) = 1.0;
        } else {
            e[a](row, b) = std::numbers::sqrt2 / 2.0;
            e[b](row, a) = std::numbers::sqrt2 / 2.0;
        }
    }
    return e;
}

std::vector<RowMatrix> viscoelastic_symbols(int dim)
{
    const auto e = strain_operators(dim);
    const int m = stress_size(dim);
    const int k = m + dim;
    std::vector<RowMatrix> out;
    for (int j = 0; j < dim; ++j) {
        RowMatrix p = RowMatrix::Zero(k, k);
        p.block(0, m, m, dim) = -e[j];
        p.block(m, 0, dim, m) = -e[j].transpose();
        out.push_back(std::move(p));
    }
    return out;
}

RowMatrix tensor_to_mandel(std::span<const double> t, double tol)
{
    if (t.size() != 81) throw DimensionMismatch("fourth-order tensor needs 81 entries");
    auto at = [&](int i, int j, int k, int l) { return t[((i * 3 + j) * 3 + k) * 3 + l]; };
    const double scale = std::max(1.0, std::abs(*std::max_element(t.begin(), t.end(), [](double x, double y) {
        return std::abs(x) < std::abs(y);
    })));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) {
                    const double v = at(i, j, k, l);
                    if (std::abs(v - at(j, i, k, l)) > tol * scale || std::abs(v - at(i, j, l, k)) > tol * scale ||
                        std::abs(v - at(k, l, i, j)) > tol * scale)
                        throw InvalidCoefficient("tensor lacks the minor and major symmetries");
                }
    const auto pairs = mandel_pairs(3);
    RowMatrix m(6, 6);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
            const double wr = pairs[r][0] == pairs[r][1] ? 1.0 : std::numbers::sqrt2;
            const double wc = pairs[c][0] == pairs[c][1] ? 1.0 : std::numbers::sqrt2;
            m(r, c) = wr * wc * at(pairs[r][0], pairs[r][1], pairs[c][0], pairs[c][1]);
        }
    return m;
}

std::vector<double> mandel_to_tensor(const RowMatrix& m)
{
    if (m.rows() != 6 || m.cols() != 6) throw DimensionMismatch("Mandel matrix must be 6 x 6");
    const auto pairs = mandel_pairs(3);
    int index[3][3];
    for (int r = 0; r < 6; ++r) {
        index[pairs[r][0]][pairs[r][1]] = r;
        index[pairs[r][1]][pairs[r][0]] = r;
    }
    std::vector<double> t(81);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) {
                    const double wr = i == j ? 1.0 : std::numbers::sqrt2;
                    const double wc = k == l ? 1.0 : std::numbers::sqrt2;
                    t[((i * 3 + j) * 3 + k) * 3 + l] = m(index[i][j], index[k][l]) / (wr * wc);
                }
    return t;
}

RowMatrix isotropic_stiffness(int dim, double lambda, double mu)
{
    const auto pairs = mandel_pairs(dim);
    const int m = static_cast<int>(pairs.size());
    RowMatrix c = RowMatrix::Zero(m, m);
    for (int r = 0; r < m; ++r) {
        const bool normal_r = pairs[r][0] == pairs[r][1];
        c(r, r) = 2.0 * mu;
        for (int s = 0; s < m; ++s)
            if (normal_r && pairs[s][0] == pairs[s][1]) c(r, s) += lambda;
    }
    return c;
}

RowMatrix isotropic_compliance(int dim, double lambda, double mu)
{
    if (!(mu > 0.0) || !(lambda + 2.0 * mu / 3.0 > 0.0))
        throw InvalidCoefficient("Lame parameters must give a positive definite stiffness");
    return isotropic_stiffness(dim, lambda, mu).inverse();
}

ViscoelasticModel ViscoelasticModel::isotropic(int dim, int cells, double lambda, double mu, double rho,
                                               MemoryKernel relaxation)
{
    ViscoelasticModel m;
    m.dim = dim;
    m.rho.assign(cells, rho);
    const RowMatrix g = isotropic_compliance(dim, lambda, mu);
    for (int c = 0; c < cells; ++c) m.compliance.insert(m.compliance.end(), g.data(), g.data() + g.size());
    m.relaxation = std::move(relaxation);
    return m;
}

void ViscoelasticModel::validate(const Grid* grid) const
{
    const int mm = m();
    if (grid && grid->dim != dim) throw DimensionMismatch("viscoelastic model dimension differs from the grid");
    check_cells(cells(), grid, "viscoelastic model");
    if (compliance.size() != static_cast<std::size_t>(cells()) * mm * mm)
        throw DimensionMismatch("compliance array has the wrong size");
    for (int c = 0; c < cells(); ++c) {
        if (!std::isfinite(rho[c]) || !(rho[c] > 0.0))
            throw InvalidCoefficient("density must be positive and finite at " + where(grid, c));
        const RowMatrix g = CellMatrix(compliance.data() + static_cast<std::size_t>(c) * mm * mm, mm, mm);
        if (!g.allFinite() || !symmetric(g))
            throw InvalidCoefficient("elastic compliance lacks the major symmetry at " + where(grid, c));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (!(lo > 0.0)) throw InvalidCoefficient("elastic compliance is not elliptic at " + where(grid, c));
        if ((lower_bound && lo < *lower_bound) || (upper_bound && hi > *upper_bound)) {
            std::ostringstream os;
            os << "elastic compliance eigenvalues [" << lo << ", " << hi << "] leave the ellipticity bounds at "
               << where(grid, c);
            throw InvalidCoefficient(os.str());
        }
    }
    if (relaxation.is_zero()) return;
    if (relaxation.k() != mm || relaxation.cells() != cells())
        throw DimensionMismatch("relaxation kernel does not match the stress block");
    auto check_sym = [&](const RowMatrix& blk, int c) {
        if (!symmetric(blk)) throw InvalidCoefficient("relaxation kernel lacks the major symmetry at " + where(grid, c));
    };
    for (int c = 0; c < cells(); ++c) {
        if (relaxation.kind() == MemoryKernel::Kind::Prony) {
            for (const auto& t : relaxation.prony_terms())
                check_sym(CellMatrix(t.weights.data() + static_cast<std::size_t>(c) * mm * mm, mm, mm), c);
        } else {
            for (int s = 0; s < relaxation.sample_count(); ++s) check_sym(relaxation.sample(s, c), c);
        }
    }
    if (relaxation.kind() == MemoryKernel::Kind::Tabulated && relaxation.sample_count() < 3)
        throw InvalidCoefficient("tabulated relaxation needs at least 3 samples to differentiate");
}

MemoryKernel isotropic_prony_relaxation(int dim, int cells, const std::vector<double>& c, const std::vector<double>& tau)
{
    if (c.size() != tau.size()) throw DimensionMismatch("Prony weights and relaxation times differ in length");
    const int m = stress_size(dim);
    std::vector<PronyTerm> terms;
    for (std::size_t j = 0; j < c.size(); ++j) {
        std::vector<double> w(static_cast<std::size_t>(cells) * m * m, 0.0);
        for (int cell = 0; cell < cells; ++cell)
            for (int r = 0; r < m; ++r) w[(static_cast<std::size_t>(cell) * m + r) * m + r] = c[j];
        terms.push_back({tau[j], std::move(w)});
    }
    return MemoryKernel::prony(cells, m, std::move(terms));
}

RelaxationSplit split_relaxation(const ViscoelasticModel& model)
{
    model.validate();
    const int m = model.m();
    const int cells = model.cells();
    const auto per = static_cast<std::size_t>(cells) * m * m;
    const MemoryKernel& g = model.relaxation;
    RelaxationSplit out;
    out.m = m;
    out.b.assign(per, 0.0);
    if (g.kind() == MemoryKernel::Kind::Prony) {
        std::vector<PronyTerm> terms;
        for (const auto& t : g.prony_terms()) {
            std::vector<double> w(per);
            for (std::size_t i = 0; i < per; ++i) {
                out.b[i] += t.weights[i];
                w[i] = -t.weights[i] / t.tau;
            }
            terms.push_back({t.tau, std::move(w)});
        }
        out.q = MemoryKernel::prony(cells, m, std::move(terms));
    } else if (g.kind() == MemoryKernel::Kind::Tabulated) {
        const int n = g.sample_count();
        const double h = g.sample_dt();
        const auto& s = g.samples();
        std::copy_n(s.begin(), per, out.b.begin());
        std::vector<double> d(s.size());
        auto at = [&](int i, std::size_t e) { return s[i * per + e]; };
        for (std::size_t e = 0; e < per; ++e) {
            d[e] = (-3.0 * at(0, e) + 4.0 * at(1, e) - at(2, e)) / (2.0 * h);
            for (int i = 1; i + 1 < n; ++i) d[i * per + e] = (at(i + 1, e) - at(i - 1, e)) / (2.0 * h);
            d[(n - 1) * per + e] = (3.0 * at(n - 1, e) - 4.0 * at(n - 2, e) + at(n - 3, e)) / (2.0 * h);
        }
        out.q = MemoryKernel::tabulated(cells, m, h, std::move(d));
    }
    return out;
}

RowMatrix reconstruct_relaxation(const RelaxationSplit& split, int cell, double t)
{
    const MemoryKernel& q = split.q;
    const int width = split.m;
    RowMatrix out = CellMatrix(split.b.data() + static_cast<std::size_t>(cell) * width * width, width, width);
    if (q.is_zero() || t <= 0.0) return out;
    if (q.kind() == MemoryKernel::Kind::Prony) {
        for (const auto& term : q.prony_terms())
            out += CellMatrix(term.weights.data() + static_cast<std::size_t>(cell) * width * width, width, width) *
                   (term.tau * -std::expm1(-t / term.tau));
        return out;
    }
    const double h = q.sample_dt();
    const double t_max = h * (q.sample_count() - 1);
    const double upto = std::min(t, t_max);
    const int full = static_cast<int>(std::floor(upto / h + 1e-12));
    for (int i = 0; i < full; ++i) out += 0.5 * h * (q.sample(i, cell) + q.sample(i + 1, cell));
    const double rest = upto - full * h;
    if (rest > 0.0 && full + 1 < q.sample_count()) {
        const RowMatrix q0 = q.sample(full, cell);
        const RowMatrix qr = q0 + (rest / h) * (RowMatrix(q.sample(full + 1, cell)) - q0);
        out += 0.5 * rest * (q0 + qr);
    }
    return out;
}

CoefficientField viscoelastic_coefficients(const ViscoelasticModel& model, const Grid& grid)
{
    model.validate(&grid);
    const int m = model.m();
    const int k = m + model.dim;
    const int cells = grid.num_cells();
    const auto kk = static_cast<std::size_t>(k) * k;
    std::vector<double> a(cells * kk, 0.0), b(cells * kk, 0.0);
    const RelaxationSplit split = split_relaxation(model);
    for (int c = 0; c < cells; ++c) {
        for (int r = 0; r < m; ++r)
            for (int s = 0; s < m; ++s) {
                const std::size_t src = (static_cast<std::size_t>(c) * m + r) * m + s;
                a[c * kk + r * k + s] = model.compliance[src];
                b[c * kk + r * k + s] = split.b[src];
            }
        for (int j = m; j < k; ++j) a[c * kk + j * k + j] = model.rho[c];
    }
    return CoefficientField(grid, k, std::move(a), std::move(b), embed_kernel(split.q, cells, k));
}

DiscreteSystem viscoelastic_system(const ViscoelasticModel& model, const Grid& grid, Boundary boundary)
{
    if (boundary != Boundary::Periodic)
        throw UnsupportedConfiguration("viscoelastic systems support only periodic closures");
    return DiscreteSystem(viscoelastic_coefficients(model, grid), viscoelastic_symbols(model.dim), boundary);
}

double max_wavespeed(const ViscoelasticModel& model)
{
    model.validate();
    const int m = model.m();
    const auto e = strain_operators(model.dim);
    const auto dirs = direction_samples(model.dim);
    std::map<std::vector<double>, double> seen;
    double best = 0.0;
    for (int c = 0; c < model.cells(); ++c) {
        const double* blk = model.compliance.data() + static_cast<std::size_t>(c) * m * m;
        std::vector<double> key(blk, blk + m * m);
        key.push_back(model.rho[c]);
        auto it = seen.find(key);
        if (it == seen.end()) {
            const Eigen::MatrixXd stiffness = RowMatrix(CellMatrix(blk, m, m)).inverse();
            double s = 0.0;
            for (const auto& xi : dirs) {
                Eigen::MatrixXd ex = Eigen::MatrixXd::Zero(m, model.dim);
                for (int j = 0; j < model.dim; ++j) ex += xi[j] * e[j];
                const Eigen::MatrixXd christoffel = ex.transpose() * stiffness * ex / model.rho[c];
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(christoffel, Eigen::EigenvaluesOnly);
                s = std::max(s, std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff())));
            }
            it = seen.emplace(std::move(key), s).first;
        }
        best = std::max(best, it->second);
    }
    return best;
}

double max_wavespeed(const DiscreteSystem& system)
{
    return system.max_characteristic_speed();
}

// ---------------------------------------------------------------- model files

Boundary boundary_from_string(const std::string& name)
{
    if (name == "periodic") return Boundary::Periodic;
    if (name == "acoustic_free" || name == "free") return Boundary::AcousticFree;
    throw InvalidArgument("unknown boundary '" + name + "' (expected periodic or acoustic_free)");
}

std::string boundary_name(Boundary boundary)
{
    return boundary == Boundary::Periodic ? "periodic" : "acoustic_free";
}

namespace {

Grid parse_grid(const Json& j)
{
    if (j.contains("h")) return grid_from_json(j);
    try {
        const int dim = j.at("dim").get<int>();
        const auto cells = j.at("cells").get<std::vector<int>>();
        std::vector<double> extent;
        if (j.at("extent").is_array())
            extent = j.at("extent").get<std::vector<double>>();
        else
            extent = {j.at("extent").get<double>()};
        return build_grid(dim, cells, extent, j.at("dt").get<double>(), j.at("t_end").get<double>(),
                          j.value("origin", std::vector<double>{}));
    } catch (const Json::exception& e) {
        throw InvalidArgument(std::string("grid: ") + e.what());
    }
}

/// Number, RWF1 file name, or a two-layer description.
std::vector<double> resolve_array(const Json& spec, const Grid& grid, int per_cell, const fs::path& base,
                                  const std::string& field)
{
    const int cells = grid.num_cells();
    if (spec.is_number()) return std::vector<double>(static_cast<std::size_t>(cells) * per_cell, spec.get<double>());
    if (spec.is_string()) {
        const auto arr = read_rwf1(base / spec.get<std::string>());
        check_layout(arr, grid, field);
        if (arr.entries_per_cell() != per_cell)
            throw DimensionMismatch(field + ": expected " + std::to_string(per_cell) + " entries per cell");
        return arr.values;
    }
    if (spec.is_object() && per_cell == 1) {
        const int axis = spec.value("axis", 0);
        const double x = spec.at("interface").get<double>();
        const auto v = spec.at("values").get<std::vector<double>>();
        if (v.size() != 2) throw InvalidArgument(field + ": layered values need two entries");
        if (axis < 0 || axis >= grid.dim) throw InvalidArgument(field + ": layer axis out of range");
        std::vector<double> out(cells);
        for (int c = 0; c < cells; ++c) out[c] = grid.center(c)[axis] >= x ? v[1] : v[0];
        return out;
    }
    throw InvalidArgument(field + ": expected a number, an RWF1 file name, or a layer description");
}

MemoryKernel parse_relaxation(const Json& spec, const Grid& grid, int m, const fs::path& base)
{
    const std::string kind = spec.value("kind", "zero");
    const int cells = grid.num_cells();
    if (kind == "zero") return MemoryKernel::zero();
    if (kind == "prony") {
        std::vector<PronyTerm> terms;
        for (const auto& t : spec.at("terms")) {
            const double tau = t.at("tau").get<double>();
            std::vector<double> w;
            if (t.at("c").is_number()) {
                w = isotropic_prony_relaxation(grid.dim, cells, {t.at("c").get<double>()}, {tau})
                        .prony_terms()
                        .front()
                        .weights;
            } else {
                w = resolve_array(t.at("c"), grid, m * m, base, "relaxation weights");
            }
            terms.push_back({tau, std::move(w)});
        }
        return MemoryKernel::prony(cells, m, std::move(terms));
    }
    if (kind == "tabulated") {
        auto arr = read_rwf1(base / spec.at("file").get<std::string>());
        check_layout(arr, grid, "tabulated relaxation");
        const auto count = arr.entries_per_cell() / (static_cast<std::int64_t>(m) * m);
        const auto per = static_cast<std::size_t>(m) * m;
        std::vector<double> samples(arr.values.size());
        for (std::int64_t s = 0; s < count; ++s)
            for (int c = 0; c < cells; ++c)
                std::copy_n(arr.values.begin() + (static_cast<std::size_t>(c) * count + s) * per, per,
                            samples.begin() + (static_cast<std::size_t>(s) * cells + c) * per);
        return MemoryKernel::tabulated(cells, m, spec.at("sample_dt").get<double>(), std::move(samples));
    }
    throw InvalidArgument("relaxation.kind must be zero, prony, or tabulated");
}

std::vector<RowMatrix> parse_symbols(const Json& spec, int dim, int k)
{
    if (spec.is_string()) {
        const auto name = spec.get<std::string>();
        if (name == "acoustic") return acoustic_symbols(dim);
        if (name == "viscoelastic") return viscoelastic_symbols(dim);
        throw InvalidArgument("symbols: unknown family '" + name + "'");
    }
    std::vector<RowMatrix> out;
    for (const auto& mat : spec) {
        const auto rows = mat.get<std::vector<std::vector<double>>>();
        if (static_cast<int>(rows.size()) != k) throw DimensionMismatch("symbols: each p_j must be k x k");
        RowMatrix p(k, k);
        for (int r = 0; r < k; ++r) {
            if (static_cast<int>(rows[r].size()) != k) throw DimensionMismatch("symbols: each p_j must be k x k");
            for (int c = 0; c < k; ++c) p(r, c) = rows[r][c];
        }
        out.push_back(std::move(p));
    }
    if (static_cast<int>(out.size()) != dim) throw DimensionMismatch("symbols: need one matrix per axis");
    return out;
}

} // namespace

ModelFile load_model(const fs::path& manifest)
{
    const fs::path path = fs::is_directory(manifest) ? manifest / "model.json" : manifest;
    const fs::path base = path.parent_path();
    const Json j = read_json(path);
    try {
        ModelFile out;
        out.grid = parse_grid(j.at("grid"));
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "acoustic") {
            AcousticModel m;
            m.rho = resolve_array(j.at("rho"), out.grid, 1, base, "rho");
            m.kappa = resolve_array(j.at("kappa"), out.grid, 1, base, "kappa");
            if (j.contains("scales")) {
                m.kappa_scale = j["scales"].value("kappa", 1.0);
                m.rho_scale = j["scales"].value("rho", 1.0);
            }
            if (j.contains("bounds")) {
                if (j["bounds"].contains("lower")) m.lower_bound = j["bounds"]["lower"].get<double>();
                if (j["bounds"].contains("upper")) m.upper_bound = j["bounds"]["upper"].get<double>();
            }
            m.validate(&out.grid);
            out.boundary = boundary_from_string(j.value("boundary", "acoustic_free"));
            out.model = std::move(m);
        } else if (kind == "viscoelastic") {
            ViscoelasticModel m;
            m.dim = out.grid.dim;
            const int mm = m.m();
            m.rho = resolve_array(j.at("rho"), out.grid, 1, base, "rho");
            if (j.contains("compliance")) {
                m.compliance = resolve_array(j.at("compliance"), out.grid, mm * mm, base, "compliance");
            } else {
                const auto lambda = resolve_array(j.at("lambda"), out.grid, 1, base, "lambda");
                const auto mu = resolve_array(j.at("mu"), out.grid, 1, base, "mu");
                for (int c = 0; c < out.grid.num_cells(); ++c) {
                    const RowMatrix g = isotropic_compliance(m.dim, lambda[c], mu[c]);
                    m.compliance.insert(m.compliance.end(), g.data(), g.data() + g.size());
                }
            }
            if (j.contains("relaxation")) m.relaxation = parse_relaxation(j["relaxation"], out.grid, mm, base);
            if (j.contains("bounds")) {
                if (j["bounds"].contains("lower")) m.lower_bound = j["bounds"]["lower"].get<double>();
                if (j["bounds"].contains("upper")) m.upper_bound = j["bounds"]["upper"].get<double>();
            }
            m.validate(&out.grid);
            out.boundary = boundary_from_string(j.value("boundary", "periodic"));
            out.model = std::move(m);
        } else if (kind == "field") {
            CoefficientField f = read_field(base / j.at("field").get<std::string>());
            if (!f.grid().same_space(out.grid)) throw DimensionMismatch("field grid differs from the model grid");
            f = f.with_time_axis(out.grid.dt, out.grid.t_end());
            out.symbols = parse_symbols(j.at("symbols"), out.grid.dim, f.k());
            out.boundary = boundary_from_string(j.value("boundary", "periodic"));
            out.model = std::move(f);
        } else {
            throw InvalidArgument("kind must be acoustic, viscoelastic, or field (got '" + kind + "')");
        }
        return out;
    } catch (const Json::exception& e) {
        throw InvalidArgument("model file " + path.string() + ": " + e.what());
    }
}

void save_model(const fs::path& dir, const ModelFile& model)
{
    fs::create_directories(dir);
    Json j;
    j["grid"] = grid_to_json(model.grid);
    j["boundary"] = boundary_name(model.boundary);
    const Grid& g = model.grid;
    if (const auto* ac = std::get_if<AcousticModel>(&model.model)) {
        j["kind"] = "acoustic";
        write_rwf1(dir / "rho.rwf", g, 1, ac->rho);
        write_rwf1(dir / "kappa.rwf", g, 1, ac->kappa);
        j["rho"] = "rho.rwf";
        j["kappa"] = "kappa.rwf";
        j["scales"] = {{"kappa", ac->kappa_scale}, {"rho", ac->rho_scale}};
        Json bounds = Json::object();
        if (ac->lower_bound) bounds["lower"] = *ac->lower_bound;
        if (ac->upper_bound) bounds["upper"] = *ac->upper_bound;
        j["bounds"] = bounds;
        j["units"] = {{"rho", "mass/volume"}, {"kappa", "pressure"}};
    } else if (const auto* ve = std::get_if<ViscoelasticModel>(&model.model)) {
        j["kind"] = "viscoelastic";
        const int mm = ve->m();
        write_rwf1(dir / "rho.rwf", g, 1, ve->rho);
        write_rwf1(dir / "compliance.rwf", g, mm, ve->compliance);
        j["rho"] = "rho.rwf";
        j["compliance"] = "compliance.rwf";
        const auto& r = ve->relaxation;
        if (r.kind() == MemoryKernel::Kind::Prony) {
            Json terms = Json::array();
            for (std::size_t i = 0; i < r.prony_terms().size(); ++i) {
                const std::string name = "relaxation_" + std::to_string(i) + ".rwf";
                write_rwf1(dir / name, g, mm, r.prony_terms()[i].weights);
                terms.push_back({{"tau", r.prony_terms()[i].tau}, {"c", name}});
            }
            j["relaxation"] = {{"kind", "prony"}, {"terms", terms}};
        } else if (r.kind() == MemoryKernel::Kind::Tabulated) {
            const int cells = g.num_cells();
            const auto per = static_cast<std::size_t>(mm) * mm;
            std::vector<double> per_cell(r.samples().size());
            for (int s = 0; s < r.sample_count(); ++s)
                for (int c = 0; c < cells; ++c)
                    std::copy_n(r.samples().begin() + (static_cast<std::size_t>(s) * cells + c) * per, per,
                                per_cell.begin() + (static_cast<std::size_t>(c) * r.sample_count() + s) * per);
            write_rwf1(dir / "relaxation.rwf", g, mm, per_cell);
            j["relaxation"] = {{"kind", "tabulated"}, {"sample_dt", r.sample_dt()}, {"file", "relaxation.rwf"}};
        } else {
            j["relaxation"] = {{"kind", "zero"}};
        }
        Json bounds = Json::object();
        if (ve->lower_bound) bounds["lower"] = *ve->lower_bound;
        if (ve->upper_bound) bounds["upper"] = *ve->upper_bound;
        j["bounds"] = bounds;
    } else {
        const auto& f = std::get<CoefficientField>(model.model);
        j["kind"] = "field";
        write_field(dir / "field", f);
        j["field"] = "field";
        Json syms = Json::array();
        for (const auto& p : model.symbols) {
            std::vector<std::vector<double>> rows(p.rows(), std::vector<double>(p.cols()));
            for (int r = 0; r < p.rows(); ++r)
                for (int c = 0; c < p.cols(); ++c) rows[r][c] = p(r, c);
            syms.push_back(rows);
        }
        j["symbols"] = syms;
    }
    write_json(dir / "model.json", j);
}

DiscreteSystem build_system(const ModelFile& model)
{
    if (const auto* ac = std::get_if<AcousticModel>(&model.model))
        return acoustics_system(*ac, model.grid, model.boundary);
    if (const auto* ve = std::get_if<ViscoelasticModel>(&model.model))
        return viscoelastic_system(*ve, model.grid, model.boundary);
    return DiscreteSystem(std::get<CoefficientField>(model.model), model.symbols, model.boundary);
}

double max_wavespeed(const ModelFile& model)
{
    if (const auto* ac = std::get_if<AcousticModel>(&model.model)) return max_wavespeed(*ac);
    if (const auto* ve = std::get_if<ViscoelasticModel>(&model.model)) return max_wavespeed(*ve);
    return build_system(model).max_characteristic_speed();
}

} // namespace roughwave
