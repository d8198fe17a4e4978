#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "roughwave/forward.hpp"
#include "roughwave/io.hpp"

namespace roughwave {

using SpaceTimeFn = std::function<double(double t, double x)>;

/// Smooth bump supported in [-1, 1] with unit integral.
double unit_bump(double x);

/// f_eps(t, x) = cos((x + t) / eps) chi(x + t) chi(x) with chi = unit_bump.
SpaceTimeFn oscillatory_source(double eps);

/// c * int_{t_min}^t f(s, x + c (t - s)) ds by adaptive Gauss-Kronrod
/// quadrature: the causal solution of u_t / c - u_x = f when f vanishes
/// before t_min.
double advection_oracle(double c, const SpaceTimeFn& f, double t, double x, double t_min = 0.0);

/// L2 norm over x in [x_min, x_max] of the oracle at time t (composite
/// Simpson on samples points).
double advection_oracle_norm(double c, const SpaceTimeFn& f, double t, double x_min, double x_max, double t_min = 0.0,
                             int samples = 4001);

/// Scalar 1D system u_t / c - u_x = f on a periodic grid.
DiscreteSystem advection_system(const Grid& grid, double c);

/// Cell-centre sampling of f as a distributed source.
SourceTerm sampled_source(const Grid& grid, int k, int component, const SpaceTimeFn& f, double onset,
                          int smoothness);

/// Homogeneous 1D acoustics (kappa, rho) on the whole line with optional
/// initial data and distributed sources, solved by characteristics:
/// p +- Z v travel at +-c and collect kappa f_p +- c f_v along the way.
struct DalembertProblem {
    double kappa = 1.0;
    double rho = 1.0;
    std::function<double(double)> p0;
    std::function<double(double)> v0;
    SpaceTimeFn fp;
    SpaceTimeFn fv;
    double source_start = 0.0; ///< sources vanish before this time
};

/// (p, v) at (t, x).
std::array<double, 2> dalembert_oracle(const DalembertProblem& problem, double t, double x);

/// Region tau d + t0 - t >= 0 with tau = slowness / (1 + margin) and d the
/// distance from a cell to the ball of the given radius around the apex
/// (radius covers the source support).
struct ConeSpec {
    std::array<double, 3> apex{0.0, 0.0, 0.0};
    double t0 = 0.0;
    double slowness = 1.0; ///< time per length
    double margin = 0.0;
    double radius = 0.0;

    /// slowness = 1 / max_speed.
    static ConeSpec from_speed(const std::array<double, 3>& apex, double t0, double max_speed, double margin,
                               double radius = 0.0);
    double effective_slowness() const { return slowness / (1.0 + margin); }
    bool contains(const std::array<double, 3>& x, double t) const;
    /// Whole cell inside the region (nearest point of the cell is tested).
    bool contains_cell(const Grid& grid, int cell, double t) const;
    void validate() const;
};

/// Fraction of the trajectory's total energy (summed over kept steps and
/// cells) that lies inside the cone's exclusion region. Zero energy gives 0.
double cone_leak(const Trajectory& traj, const ConeSpec& cone, const DiscreteSystem& system);

/// Parameter schedule with named metric series, a fitted slope and a verdict.
struct StudyReport {
    std::string name;
    std::string parameter;
    std::vector<double> schedule;
    std::vector<std::pair<std::string, std::vector<double>>> series;
    double slope = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string criterion;
    Json details = Json::object();

    const std::vector<double>& metric(const std::string& key) const;
    void add_series(std::string key, std::vector<double> values);
    /// Schedule strictly monotone and every series as long as the schedule.
    void validate() const;
};

/// <name>.json with everything and <name>.csv with one row per schedule entry.
void write_study_report(const std::filesystem::path& dir, const StudyReport& report);
StudyReport read_study_report(const std::filesystem::path& json_path);

/// Midpoint solver against advection_oracle at t_end on a periodic box
/// for each cell count, with dt = dt_per_h * h / c. Slope is fitted on the
/// L2 error against h.
StudyReport advection_convergence_study(double c, const SpaceTimeFn& f, double t_min, double t_end, double x_min,
                                        double x_max, const std::vector<int>& cells, double dt_per_h = 0.5,
                                        double min_slope = 1.9, int jobs = 1);

/// Oracle norm of u[c, f_eps](t) for each eps; passes when the last is at
/// least min_ratio below the first.
StudyReport oscillation_suppression_study(double c, const std::vector<double>& eps, double t,
                                          double min_ratio = 10.0);

/// Leak of the base solve and of the solve on a grid refined by
/// refine_factor per axis (same physical setup through make_setup).
struct ConeRun {
    DiscreteSystem system;
    SourceTerm source;
    ConeSpec cone;
};
StudyReport cone_refinement_study(const std::function<ConeRun(int refine)>& make_setup,
                                  const std::vector<int>& refinements, double tolerance = 1e-6,
                                  const IntegratorConfig& config = {}, int jobs = 1);

/// Solves with mollify_field(field, n) for each n and reports the
/// L-infinity-in-time grid L2 distance to the rough solution, the measure
/// of cells where a differs by more than eps, and (with a sampler) the
/// seismogram distance. Passes when the solution distance is strictly
/// decreasing and the last value is at most final_ratio of the first.
StudyReport measure_convergence_study(const DiscreteSystem& system, const SourceTerm& source,
                                      const std::vector<int>& schedule, const Sampler* sampler = nullptr,
                                      double eps = 1e-3, double final_ratio = 0.25,
                                      const IntegratorConfig& config = {}, int jobs = 1);

/// For each smoothness s: a pulse of that smoothness at one cell, the
/// seismogram at dt / r for each refinement r, and the max-norm of its
/// discrete time derivatives of order 0..s-1. Passes when no order grows by
/// more than growth_limit from the coarsest to the finest dt.
StudyReport trace_regularity_probe(const DiscreteSystem& system, int source_cell, int component,
                                   const Sampler& sampler, const std::vector<int>& smoothness, double pulse_width,
                                   const std::vector<int>& refinements = {1, 2, 4}, double growth_limit = 2.0,
                                   const IntegratorConfig& config = {}, int jobs = 1);

/// max_n of |d^order/dt^order d| over channels, by repeated forward differences.
double max_discrete_derivative(const SeismogramData& data, int order);

} // namespace roughwave
