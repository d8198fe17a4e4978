#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "roughwave/evolution.hpp"
#include "roughwave/physics.hpp"

namespace roughwave {

/// Which state components a receiver reads.
enum class TraceTag {
    PressureTrace,       ///< m_D = [1, 0, ..., 0]
    NormalVelocityTrace, ///< m_N = [0, n_1, ..., n_d]
    Custom,              ///< caller-supplied l x k weight matrix
};

const char* trace_tag_name(TraceTag tag);
TraceTag trace_tag_from_string(const std::string& name);

/// Receiver positions on an axis-aligned line or plane (or a free list),
/// with the unit normal used by NormalVelocityTrace.
struct ReceiverGeometry {
    std::vector<std::array<double, 3>> points;
    std::array<double, 3> normal{1.0, 0.0, 0.0};

    /// count points evenly spaced from start to end inclusive.
    static ReceiverGeometry line(const std::array<double, 3>& start, const std::array<double, 3>& end, int count,
                                 const std::array<double, 3>& normal = {1.0, 0.0, 0.0});
    /// nu x nv grid spanning origin + [0,1] u + [0,1] v.
    static ReceiverGeometry plane(const std::array<double, 3>& origin, const std::array<double, 3>& u,
                                  const std::array<double, 3>& v, int nu, int nv,
                                  const std::array<double, 3>& normal);
};

/// Linear map from a state to receiver values: weight rows times
/// multilinear interpolation of cell-centred values.
class Sampler {
public:
    Sampler(Grid grid, int k, ReceiverGeometry geometry, TraceTag tag, RowMatrix weights, SparseMatrix matrix);

    const Grid& grid() const { return grid_; }
    int k() const { return k_; }
    TraceTag tag() const { return tag_; }
    const ReceiverGeometry& geometry() const { return geometry_; }
    /// l x k rows applied at every receiver.
    const RowMatrix& weights() const { return weights_; }
    int receivers() const { return static_cast<int>(geometry_.points.size()); }
    /// Rows of the data: receivers * l, receiver-major.
    int channels() const { return static_cast<int>(matrix_.rows()); }
    const SparseMatrix& matrix() const { return matrix_; }

private:
    Grid grid_;
    int k_;
    ReceiverGeometry geometry_;
    TraceTag tag_;
    RowMatrix weights_;
    SparseMatrix matrix_;
};

/// Receivers must lie in the physical box. Between the boundary and the
/// outermost cell centres the interpolation holds the nearest centre value.
/// Built-in tags need acoustic layout (k = dim + 1); Custom warns that its
/// rows are not vetted for trace continuity.
Sampler build_sampler(const ReceiverGeometry& geometry, TraceTag tag, const Grid& grid, int k,
                      const RowMatrix& custom_weights = RowMatrix());

Eigen::VectorXd apply_sampler(const Sampler& sampler, const Eigen::VectorXd& u);

/// Receiver data d(channel, t_n).
struct SeismogramData {
    std::vector<double> times;
    Eigen::MatrixXd values; ///< channels x times
    std::vector<std::string> labels;

    int channels() const { return static_cast<int>(values.rows()); }
    int samples() const { return static_cast<int>(values.cols()); }
    double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
    /// Same time axis and channel count.
    bool aligned_with(const SeismogramData& other, double tol = 1e-12) const;
};

SeismogramData zero_seismogram(const Sampler& sampler, const std::vector<double>& times);
SeismogramData sample_trajectory(const Sampler& sampler, const Trajectory& traj);

/// CSV: t then one column per channel.
void write_seismogram_csv(const std::filesystem::path& path, const SeismogramData& data);
SeismogramData read_seismogram_csv(const std::filesystem::path& path);
/// RWF1 frame file (dim 1, one cell per time sample, k = channels) plus a
/// JSON sidecar at path + ".json" holding the time axis and labels.
void write_seismogram_binary(const std::filesystem::path& path, const SeismogramData& data);
SeismogramData read_seismogram_binary(const std::filesystem::path& path);

/// solve_causal then sampling at every kept step. Warns when the source
/// smoothness is below 2.
SeismogramData forward_map(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                           const IntegratorConfig& config = {});
SeismogramData forward_map(const ModelFile& model, const SourceTerm& source, const Sampler& sampler,
                           const IntegratorConfig& config = {});

/// One forward solve per source on up to jobs threads; results in source order.
std::vector<SeismogramData> forward_map_batch(const DiscreteSystem& system, const std::vector<SourceTerm>& sources,
                                              const Sampler& sampler, const IntegratorConfig& config = {},
                                              int jobs = 1);

/// S^* r_n for each data time, adjoint in the volume-weighted grid inner
/// product: sum_n <S u_n, r_n> = sum_n grid_dot(u_n, result_n).
std::vector<Eigen::VectorXd> sampler_adjoint_series(const Sampler& sampler, const SeismogramData& residual);

/// The same series as a distributed source, linear in time between samples.
SourceTerm sampler_adjoint_source(const Sampler& sampler, const SeismogramData& residual);

/// Run fn(i) for i in [0, count) on up to jobs threads.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn);

} // namespace roughwave
