#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "roughwave/grid.hpp"

namespace roughwave {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CellMatrix = Eigen::Map<const RowMatrix>;

/// One exponential relaxation term c(x) exp(-t / tau) of a memory kernel.
struct PronyTerm {
    double tau = 1.0;
    std::vector<double> weights; ///< cells * k * k, row-major per cell
};

/// Causal per-cell matrix kernel q(t): zero, a Prony series, or samples on
/// a uniform time axis starting at t = 0 (linear interpolation between
/// samples, zero past the last one).
class MemoryKernel {
public:
    enum class Kind { Zero, Prony, Tabulated };

    MemoryKernel() = default;
    static MemoryKernel zero() { return {}; }
    static MemoryKernel prony(int cells, int k, std::vector<PronyTerm> terms);
    /// samples are laid out [sample][cell][k][k].
    static MemoryKernel tabulated(int cells, int k, double sample_dt, std::vector<double> samples);

    Kind kind() const { return kind_; }
    bool is_zero() const { return kind_ == Kind::Zero; }
    int cells() const { return cells_; }
    int k() const { return k_; }

    const std::vector<PronyTerm>& prony_terms() const { return terms_; }
    double sample_dt() const { return sample_dt_; }
    int sample_count() const { return sample_count_; }
    const std::vector<double>& samples() const { return samples_; }
    CellMatrix sample(int index, int cell) const;

    /// q(t) at one cell; zero for t < 0.
    RowMatrix evaluate(int cell, double t) const;

    /// max over cells of the trapezoid/closed-form integral of ||q(t)||_2.
    double l1_bound() const;

    /// Apply fn to every per-cell array of the kernel (one call per Prony
    /// term or per time sample, each of length cells * k * k).
    MemoryKernel map_cell_arrays(
        const std::function<std::vector<double>(std::span<const double>)>& fn) const;

private:
    Kind kind_ = Kind::Zero;
    int cells_ = 0;
    int k_ = 0;
    std::vector<PronyTerm> terms_;
    double sample_dt_ = 0.0;
    int sample_count_ = 0;
    std::vector<double> samples_;
};

struct CoefficientBounds {
    double lower = 0.0;  ///< C_*: smallest admissible eigenvalue of a
    double upper = 0.0;  ///< C^*: largest admissible eigenvalue of a
    double b_norm = 0.0; ///< C_B
    double q_l1 = 0.0;   ///< C_Q
};

/// Piecewise-constant coefficients (a, b, q) of a k-component symmetric
/// hyperbolic system. Immutable; construction validates every cell.
class CoefficientField {
public:
    /// Bounds are inferred from the data when not given.
    CoefficientField(Grid grid, int k, std::vector<double> a, std::vector<double> b,
                     MemoryKernel q = MemoryKernel::zero(),
                     std::optional<CoefficientBounds> bounds = std::nullopt);

    static CoefficientField uniform(const Grid& grid, const RowMatrix& a,
                                    const RowMatrix& b = RowMatrix(),
                                    MemoryKernel q = MemoryKernel::zero());

    const Grid& grid() const { return grid_; }
    int k() const { return k_; }
    int cells() const { return grid_.num_cells(); }

    CellMatrix a(int cell) const { return {a_.data() + block(cell), k_, k_}; }
    CellMatrix b(int cell) const { return {b_.data() + block(cell), k_, k_}; }
    const std::vector<double>& a_values() const { return a_; }
    const std::vector<double>& b_values() const { return b_; }
    const MemoryKernel& memory() const { return q_; }
    const CoefficientBounds& bounds() const { return bounds_; }

    /// New field on the same grid; bounds re-inferred.
    CoefficientField with_values(std::vector<double> a, std::vector<double> b, MemoryKernel q) const;
    CoefficientField with_time_axis(double dt, double t_end) const;

private:
    std::size_t block(int cell) const { return static_cast<std::size_t>(cell) * k_ * k_; }
    void validate(const std::optional<CoefficientBounds>& requested);

    Grid grid_;
    int k_;
    std::vector<double> a_;
    std::vector<double> b_;
    MemoryKernel q_;
    CoefficientBounds bounds_;
};

/// Scalar temporal signature of a separable source. Every variant is zero
/// before its onset.
class Wavelet {
public:
    enum class Kind { Zero, Ricker, Pulse, Sampled, Custom };

    static Wavelet zero();
    /// Ricker wavelet peaking 2 / peak_frequency after onset, truncated at onset.
    static Wavelet ricker(double peak_frequency, double onset, double amplitude = 1.0);
    /// sin^s(pi (t - onset) / width) on [onset, onset + width]: s - 1
    /// continuous derivatives and square-integrable s-th derivative.
    static Wavelet pulse(int smoothness, double width, double onset, double amplitude = 1.0);
    /// Linear interpolation of values at onset + i * dt.
    static Wavelet sampled(std::vector<double> values, double dt, double onset, int smoothness = 1);
    static Wavelet custom(std::function<double(double)> fn, double onset, int smoothness);

    double operator()(double t) const;
    Kind kind() const { return kind_; }
    double onset() const { return onset_; }
    int smoothness() const { return smoothness_; }
    double peak_frequency() const { return frequency_; }
    double amplitude() const { return amplitude_; }
    double width() const { return width_; }
    Wavelet scaled(double factor) const;

private:
    Kind kind_ = Kind::Zero;
    double onset_ = 0.0;
    int smoothness_ = 1000;
    double amplitude_ = 0.0;
    double frequency_ = 0.0;
    double width_ = 0.0;
    double dt_ = 0.0;
    std::vector<double> values_;
    std::function<double(double)> fn_;
};

struct SeparableTerm {
    Eigen::VectorXd footprint;
    Wavelet wavelet;
};

/// Right-hand side f(t) as a state-sized vector. Built from separable
/// footprint x wavelet terms, or from a general space-time callback.
class SourceTerm {
public:
    using FieldFn = std::function<void(double t, Eigen::Ref<Eigen::VectorXd> out)>;

    SourceTerm() = default;
    explicit SourceTerm(Eigen::Index size) : size_(size) {}
    static SourceTerm separable(Eigen::VectorXd footprint, Wavelet wavelet);
    static SourceTerm distributed(Eigen::Index size, FieldFn fn, double onset, int smoothness);

    /// Sum of two sources of the same size.
    SourceTerm operator+(const SourceTerm& other) const;
    SourceTerm scaled(double factor) const;

    /// Writes f(t) into out (overwrites).
    void evaluate(double t, Eigen::Ref<Eigen::VectorXd> out) const;
    Eigen::VectorXd evaluate(double t) const;

    Eigen::Index size() const { return size_; }
    double onset() const;
    int smoothness() const;
    bool is_zero() const;
    const std::vector<SeparableTerm>& terms() const { return terms_; }

private:
    Eigen::Index size_ = 0;
    std::vector<SeparableTerm> terms_;
    struct Distributed {
        FieldFn fn;
        double onset;
        int smoothness;
        double scale;
    };
    std::vector<Distributed> fields_;
};

/// Ricker point source in one component of one cell, scaled by 1 / cell volume
/// so that it approximates amplitude * delta(x - x_c). With
/// gaussian_width_cells > 0 the footprint is a unit-mass Gaussian instead.
/// When max_speed > 0, warns if fewer than 10 cells per peak wavelength.
SourceTerm make_ricker_source(const Grid& grid, int k, int center_cell, int component,
                              double peak_frequency, double onset, double amplitude = 1.0,
                              double gaussian_width_cells = 0.0, double max_speed = 0.0);

/// Same footprint construction with an arbitrary wavelet.
SourceTerm make_point_source(const Grid& grid, int k, int center_cell, int component, Wavelet wavelet,
                             double gaussian_width_cells = 0.0);

/// Tensor-product hat mollifier with half-width ceil(cells / n) per axis and
/// edge-replicated boundaries, applied to a per-cell array of m values.
std::vector<double> mollify_cell_array(const Grid& grid, std::span<const double> values, int m, int n);

/// Mollify a, b and the memory kernel cell-wise.
CoefficientField mollify_field(const CoefficientField& field, int n);

enum class FieldPart { A, B, Q };

/// Volume of cells where the max-entry difference of the chosen part exceeds
/// eps. For Q the compared quantity is the entrywise integral of |q1 - q2|
/// over [0, q_window].
double measure_distance(const CoefficientField& f1, const CoefficientField& f2, double eps,
                        FieldPart part = FieldPart::A, double q_window = 1.0);

} // namespace roughwave
