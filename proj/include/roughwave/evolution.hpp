#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "roughwave/operators.hpp"

namespace roughwave {

enum class Scheme { ImplicitMidpoint, RK4 };

const char* scheme_name(Scheme s);

struct IntegratorConfig {
    Scheme scheme = Scheme::ImplicitMidpoint;
    double tolerance = 1e-10;  ///< relative residual of each implicit solve
    int max_iterations = 5;    ///< iterative-refinement sweeps per solve
    double cfl_safety = 0.5;   ///< RK4 only: dt <= safety * h / max speed
    int stride = 1;            ///< keep every stride-th state (1 = dense)
};

/// States u(t_n) on a uniform time axis, plus E(t_n) for every kept state.
struct Trajectory {
    Grid grid;
    int k = 0;
    Scheme scheme = Scheme::ImplicitMidpoint;
    int stride = 1;
    double source_onset = 0.0;
    int source_smoothness = -1; ///< of the causal source, -1 when unknown or zero
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
    std::vector<double> energy;
    double max_solve_residual = 0.0; ///< largest relative residual of the implicit solves

    std::size_t size() const { return states.size(); }
    bool decimated() const { return stride != 1; }
    double dt() const { return grid.dt; }
};

/// One implicit-midpoint step of A u' + (P + B) u + R[u] = f. Prony memory
/// enters through auxiliary states integrated exactly against the linear
/// interpolant of u, so the step stays a single sparse solve; tabulated
/// kernels use the trapezoid rule over the stored history.
class MidpointStepper {
public:
    struct Memory {
        std::vector<Eigen::VectorXd> aux;     ///< Prony auxiliary states s_j
        std::vector<Eigen::VectorXd> history; ///< tabulated: every past state
        Eigen::VectorXd value;                ///< tabulated: R at the current step
        bool quiescent = true;                ///< all memory identically zero
    };

    struct PronyCoefficients {
        PronyStep step;
        const std::vector<double>* weights;
    };

    MidpointStepper(const DiscreteSystem& system, double dt, const IntegratorConfig& config,
                    bool with_transpose = false);

    const DiscreteSystem& system() const { return *system_; }
    double dt() const { return dt_; }
    const std::vector<PronyCoefficients>& prony() const { return prony_; }

    Memory initial_memory() const;

    /// u_{n+1} from u_n and the half-step forcing f(t_{n+1/2}); updates mem.
    Eigen::VectorXd step(const Eigen::VectorXd& u, Memory& mem, const Eigen::VectorXd& forcing,
                         double* residual = nullptr) const;

    /// Left operator M and right operator K of M u_{n+1} = K u_n + ...
    const SparseMatrix& lhs() const { return lhs_; }
    Eigen::VectorXd apply_rhs(const Eigen::VectorXd& u) const;
    Eigen::VectorXd apply_rhs_transpose(const Eigen::VectorXd& w) const;

    /// Solve M x = b (or M^T x = b) with iterative refinement to tolerance.
    Eigen::VectorXd solve(const Eigen::VectorXd& b, double* residual = nullptr) const;
    Eigen::VectorXd solve_transpose(const Eigen::VectorXd& b, double* residual = nullptr) const;

private:
    Eigen::VectorXd refine(const Eigen::SparseLU<Eigen::SparseMatrix<double>>& lu, const SparseMatrix& op,
                           const Eigen::VectorXd& b, double* residual) const;

    const DiscreteSystem* system_;
    double dt_;
    IntegratorConfig config_;
    std::vector<PronyCoefficients> prony_;
    std::vector<double> q_samples_; ///< tabulated kernel at m * dt
    int q_count_ = 0;
    SparseMatrix lhs_;
    SparseMatrix lhs_t_;
    SparseMatrix rhs_;
    std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
    std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_t_;
};

/// Causal solve from u = 0 at t = 0 over the system grid's time axis.
Trajectory solve_causal(const DiscreteSystem& system, const SourceTerm& source, const IntegratorConfig& config = {});

/// Initial-value solve from u(T0) = u0; the system must carry no memory.
Trajectory solve_ivp(const DiscreteSystem& system, const Eigen::VectorXd& u0, double t0, const SourceTerm& source,
                     const IntegratorConfig& config = {});

/// Midpoint solve from u = 0 with forcing supplied per step n at t_{n+1/2}.
Trajectory solve_midpoint_forced(const DiscreteSystem& system,
                                 const std::function<void(int, Eigen::VectorXd&)>& half_step_forcing,
                                 const IntegratorConfig& config = {});

/// r_n = E(t_{n+1}) - E(t_n) - trapezoid of <-B u - R[u] + f, u> over the step.
std::vector<double> energy_identity_residual(const Trajectory& traj, const DiscreteSystem& system,
                                             const SourceTerm& source);

/// Discrete time convolution with a unit-mass hat of the given width in
/// steps (zero before the first state, last state held after the end).
Trajectory smooth_trajectory(const Trajectory& traj, int window);
Trajectory smooth_trajectory(const Trajectory& traj, int window, const DiscreteSystem& system);

/// ||u(t_n)|| + ||P u(t_n)|| in the volume-weighted grid norm.
std::vector<double> graph_norm_series(const Trajectory& traj, const DiscreteSystem& system);

/// Largest RK4-stable dt: safety * min h / max characteristic speed.
double stable_dt(const DiscreteSystem& system, double safety = 0.5);

} // namespace roughwave
