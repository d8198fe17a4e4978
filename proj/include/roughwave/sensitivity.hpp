#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "roughwave/forward.hpp"
#include "roughwave/io.hpp"

namespace roughwave {

/// Direction (delta a, delta b, delta q) in coefficient space. Empty arrays
/// mean zero; delta q is a Prony kernel (or zero) whose relaxation times
/// should match the base kernel for gradient pairings.
struct CoefficientPerturbation {
    std::vector<double> da; ///< cells * k * k, symmetric per cell
    std::vector<double> db; ///< cells * k * k
    MemoryKernel dq;

    bool is_zero() const;
    CoefficientPerturbation scaled(double factor) const;
    /// Throws on size mismatch, non-symmetric da, or a non-Prony dq.
    void validate(const DiscreteSystem& system) const;

    /// da and db supported on a single cell.
    static CoefficientPerturbation cell_bump(const DiscreteSystem& system, int cell, const RowMatrix& da,
                                             const RowMatrix& db = RowMatrix());
};

/// Coefficients (a + h da, b + h db, q + h dq); throws InvalidCoefficient
/// when the result leaves the admissible set.
CoefficientField perturbed_field(const CoefficientField& field, const CoefficientPerturbation& delta, double h);

/// Linearized solve A du' + (P + B) du + R[du] = -(da u' + db u + dq * u)
/// with the base trajectory's own step derivative and midpoint averages,
/// so du is the exact derivative of the discrete forward map.
Trajectory directional_derivative(const DiscreteSystem& system, const Trajectory& base,
                                  const CoefficientPerturbation& delta, const IntegratorConfig& config = {});

/// 1/2 sum_n dt |F_n - d_n|^2 over every channel and sample.
double objective(const SeismogramData& predicted, const SeismogramData& observed, double dt);
double objective(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                 const SeismogramData& observed, const IntegratorConfig& config = {});

/// observed - predicted on a common axis.
SeismogramData data_residual(const SeismogramData& predicted, const SeismogramData& observed);

/// Exact transpose of the midpoint scheme driven by S^T r_n, run backwards
/// from the zero terminal state. Returns w_n on the forward time axis.
Trajectory adjoint_solve(const DiscreteSystem& system, const SeismogramData& residual, const Sampler& sampler,
                         const IntegratorConfig& config = {});

/// Per-cell derivative representer of J. The pairing of a perturbation with
/// it equals DJ[delta]; it is not a steepest-ascent direction.
struct GradientReport {
    Grid grid;
    int k = 0;
    std::vector<double> g_a;              ///< cells * k * k, symmetric per cell
    std::vector<double> g_b;              ///< cells * k * k
    std::vector<std::vector<double>> g_q; ///< one cells * k * k array per Prony weight
    std::vector<double> taus;             ///< relaxation times of g_q
    double objective = 0.0;
    Json diagnostics = Json::object();

    bool is_zero() const;
    GradientReport& operator+=(const GradientReport& other);
};

/// g_a = sum_n dt sym(w_{n+1} (x) u'_n), g_b = sum_n dt w_{n+1} (x) u_bar_n,
/// g_q_j = sum_n dt w_{n+1} (x) s_bar_j,n with s_j the Prony auxiliary
/// states of u.
GradientReport assemble_gradient(const Trajectory& u, const Trajectory& w, const DiscreteSystem& system);

/// <delta, g>: Frobenius pairing summed over cells; Prony terms are
/// matched by relaxation time.
double pairing(const CoefficientPerturbation& delta, const GradientReport& gradient);

/// Forward solve, residual, adjoint solve and assembly for one source.
GradientReport compute_gradient(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                                const SeismogramData& observed, const IntegratorConfig& config = {});

/// Sum over shots, solved on up to jobs threads and accumulated in source order.
GradientReport compute_gradient(const DiscreteSystem& system, const std::vector<SourceTerm>& sources,
                                const Sampler& sampler, const std::vector<SeismogramData>& observed,
                                const IntegratorConfig& config = {}, int jobs = 1);

void write_gradient_report(const std::filesystem::path& dir, const GradientReport& report);
GradientReport read_gradient_report(const std::filesystem::path& dir);

/// <S du, r>_data against <delta, g>; with g the gradient of J these
/// satisfy <S du, r> = -<delta, g>.
struct DotProductTest {
    double data_side = 0.0;
    double model_side = 0.0;
    double relative_error = 0.0;
};
DotProductTest dot_product_test(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                                const CoefficientPerturbation& delta, const SeismogramData& residual,
                                const IntegratorConfig& config = {});

/// Central differences of J along delta for each step, against <delta, g>.
struct FiniteDifferenceRow {
    double step = 0.0;
    double finite_difference = 0.0;
    double adjoint = 0.0;
    double relative_error = 0.0;
};
std::vector<FiniteDifferenceRow> finite_difference_check(const DiscreteSystem& system, const SourceTerm& source,
                                                         const Sampler& sampler, const SeismogramData& observed,
                                                         const CoefficientPerturbation& delta,
                                                         const std::vector<double>& steps,
                                                         const IntegratorConfig& config = {});

struct QuotientRow {
    double h = 0.0;
    double remainder = 0.0; ///< max_n |(u_h - u)/h - du|
    double relative = 0.0;  ///< remainder / max_n |du|
    bool admissible = true;
    std::string note;
};
struct QuotientTable {
    std::vector<QuotientRow> rows;
    double derivative_norm = 0.0;
    double slope = 0.0; ///< log-log fit of remainder against h over admissible rows
};
/// Newton quotients for A_h = A + h dA (and likewise b, q) over the schedule.
QuotientTable quotient_study(const DiscreteSystem& system, const SourceTerm& source,
                             const CoefficientPerturbation& delta, const std::vector<double>& h_schedule,
                             const IntegratorConfig& config = {});

/// Least-squares slope of log y against log x (pairs with nonpositive
/// entries are skipped).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

} // namespace roughwave
