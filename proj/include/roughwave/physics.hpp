#pragma once

#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

#include "roughwave/fields.hpp"
#include "roughwave/io.hpp"
#include "roughwave/operators.hpp"

namespace roughwave {

/// Per-cell density and bulk modulus. Unknowns are (p, v_1..v_d), so k = d + 1.
struct AcousticModel {
    std::vector<double> rho;
    std::vector<double> kappa;
    double kappa_scale = 1.0;
    double rho_scale = 1.0;
    /// C_* and C^*: when set, s_kappa kappa and s_rho rho must lie in [lower, upper].
    std::optional<double> lower_bound;
    std::optional<double> upper_bound;

    int cells() const { return static_cast<int>(rho.size()); }
    static AcousticModel uniform(int cells, double kappa, double rho);
    /// Two media split at x[axis] = interface (cell centres at or beyond it get the second pair).
    static AcousticModel two_layer(const Grid& grid, int axis, double interface, double kappa1, double rho1,
                                   double kappa2, double rho2);
    /// Throws InvalidCoefficient naming the first offending cell.
    void validate(const Grid* grid = nullptr) const;
};

/// Symbols p_j of the first-order acoustic system in dim dimensions.
std::vector<RowMatrix> acoustic_symbols(int dim);

CoefficientField acoustic_coefficients(const AcousticModel& model, const Grid& grid);
DiscreteSystem acoustics_system(const AcousticModel& model, const Grid& grid,
                                Boundary boundary = Boundary::AcousticFree);

double max_wavespeed(const AcousticModel& model);

/// Number of independent stress entries in Mandel form: 1, 3 or 6.
int stress_size(int dim);
/// Components of the viscoelastic state (stress then velocity): 2, 5 or 9.
inline int viscoelastic_width(int dim) { return stress_size(dim) + dim; }

/// Strain-rate operators E_j with eps(v) = sum_j E_j d_j v in Mandel form.
std::vector<RowMatrix> strain_operators(int dim);
std::vector<RowMatrix> viscoelastic_symbols(int dim);

/// Mandel matrix of a 3D fourth-order tensor (81 entries, index ((i*3+j)*3+k)*3+l).
/// Throws InvalidCoefficient if the minor or major symmetries fail.
RowMatrix tensor_to_mandel(std::span<const double> tensor, double tol = 1e-12);
std::vector<double> mandel_to_tensor(const RowMatrix& mandel);

/// Isotropic Hooke stiffness lambda 1(x)1 + 2 mu I restricted to dim
/// (plane strain in 2D, uniaxial strain in 1D).
RowMatrix isotropic_stiffness(int dim, double lambda, double mu);
/// Inverse of isotropic_stiffness (compliance Gamma^e).
RowMatrix isotropic_compliance(int dim, double lambda, double mu);

/// Density, elastic compliance Gamma^e and relaxation kernel gamma(t), all
/// per cell in Mandel form (stress_size(dim) square blocks).
struct ViscoelasticModel {
    int dim = 1;
    std::vector<double> rho;
    std::vector<double> compliance;
    /// gamma(t) as a kernel of width stress_size(dim); Zero means pure elasticity.
    MemoryKernel relaxation;
    /// g_* and g^*: ellipticity bounds on Gamma^e, inferred when unset.
    std::optional<double> lower_bound;
    std::optional<double> upper_bound;

    int cells() const { return static_cast<int>(rho.size()); }
    int m() const { return stress_size(dim); }
    static ViscoelasticModel isotropic(int dim, int cells, double lambda, double mu, double rho,
                                       MemoryKernel relaxation = MemoryKernel::zero());
    void validate(const Grid* grid = nullptr) const;
};

/// Isotropic Prony relaxation c_j exp(-t/tau_j) I on every cell.
MemoryKernel isotropic_prony_relaxation(int dim, int cells, const std::vector<double>& c,
                                        const std::vector<double>& tau);

/// b = gamma(0+) and q = d gamma / dt, still on the stress block only.
struct RelaxationSplit {
    int m = 1;
    std::vector<double> b; ///< cells * m * m
    MemoryKernel q;        ///< width m
};
/// Exact for Prony; tabulated gamma uses second-order finite differences
/// (one-sided at both ends, centred in between).
RelaxationSplit split_relaxation(const ViscoelasticModel& model);

/// b + int_0^t q at one cell: closed form for Prony, trapezoid on the samples otherwise.
RowMatrix reconstruct_relaxation(const RelaxationSplit& split, int cell, double t);

CoefficientField viscoelastic_coefficients(const ViscoelasticModel& model, const Grid& grid);
/// Only periodic closures are available for this system.
DiscreteSystem viscoelastic_system(const ViscoelasticModel& model, const Grid& grid,
                                   Boundary boundary = Boundary::Periodic);

/// Largest quasi-p speed: max over cells and sampled xi of
/// sqrt(lambda_max(E(xi)^T C E(xi)) / rho) with C the inverse compliance.
double max_wavespeed(const ViscoelasticModel& model);
double max_wavespeed(const DiscreteSystem& system);

/// Any of the supported model descriptions plus the grid it lives on.
struct ModelFile {
    Grid grid;
    std::variant<AcousticModel, ViscoelasticModel, CoefficientField> model;
    /// Symbols for a raw coefficient field (ignored for physics models).
    std::vector<RowMatrix> symbols;
    Boundary boundary = Boundary::AcousticFree;
};

/// Directory with model.json and RWF1 arrays. In model.json, every array
/// entry may be a file name, a number (uniform), or
/// {"axis": i, "interface": x, "values": [below, above]}.
ModelFile load_model(const std::filesystem::path& manifest);
void save_model(const std::filesystem::path& dir, const ModelFile& model);

DiscreteSystem build_system(const ModelFile& model);
double max_wavespeed(const ModelFile& model);

Boundary boundary_from_string(const std::string& name);
std::string boundary_name(Boundary boundary);

} // namespace roughwave
