#include "roughwave/forward.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "roughwave/error.hpp"
#include "roughwave/io.hpp"

namespace roughwave {

namespace fs = std::filesystem;

const char* trace_tag_name(TraceTag tag)
{
    switch (tag) {
    case TraceTag::PressureTrace: return "pressure";
    case TraceTag::NormalVelocityTrace: return "normal_velocity";
    case TraceTag::Custom: return "custom";
    }
    return "?";
}

TraceTag trace_tag_from_string(const std::string& name)
{
    if (name == "pressure") return TraceTag::PressureTrace;
    if (name == "normal_velocity") return TraceTag::NormalVelocityTrace;
    if (name == "custom") return TraceTag::Custom;
    throw InvalidArgument("unknown trace tag '" + name + "' (expected pressure, normal_velocity, or custom)");
}

ReceiverGeometry ReceiverGeometry::line(const std::array<double, 3>& start, const std::array<double, 3>& end,
                                        int count, const std::array<double, 3>& normal)
{
    if (count < 1) throw InvalidArgument("a receiver line needs at least one receiver");
    ReceiverGeometry g;
    g.normal = normal;
    for (int i = 0; i < count; ++i) {
        const double s = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
        g.points.push_back({start[0] + s * (end[0] - start[0]), start[1] + s * (end[1] - start[1]),
                            start[2] + s * (end[2] - start[2])});
    }
    return g;
}

ReceiverGeometry ReceiverGeometry::plane(const std::array<double, 3>& origin, const std::array<double, 3>& u,
                                         const std::array<double, 3>& v, int nu, int nv,
                                         const std::array<double, 3>& normal)
{
    if (nu < 1 || nv < 1) throw InvalidArgument("a receiver plane needs at least one receiver per direction");
    ReceiverGeometry g;
    g.normal = normal;
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j) {
            const double a = nu == 1 ? 0.0 : static_cast<double>(i) / (nu - 1);
            const double b = nv == 1 ? 0.0 : static_cast<double>(j) / (nv - 1);
            g.points.push_back({origin[0] + a * u[0] + b * v[0], origin[1] + a * u[1] + b * v[1],
                                origin[2] + a * u[2] + b * v[2]});
        }
    return g;
}

Sampler::Sampler(Grid grid, int k, ReceiverGeometry geometry, TraceTag tag, RowMatrix weights, SparseMatrix matrix)
    : grid_(std::move(grid)), k_(k), geometry_(std::move(geometry)), tag_(tag), weights_(std::move(weights)),
      matrix_(std::move(matrix))
{
}

namespace {

struct AxisWeights {
    int lo;
    int hi;
    double w_hi;
};

AxisWeights axis_weights(const Grid& grid, int axis, double x, int receiver)
{
    const double lo_edge = grid.origin[axis];
    const double hi_edge = lo_edge + grid.extent(axis);
    const double tol = 1e-12 * std::max(1.0, std::abs(hi_edge - lo_edge));
    if (x < lo_edge - tol || x > hi_edge + tol)
        throw InvalidArgument("receiver " + std::to_string(receiver) + " lies outside the domain on axis " +
                              std::to_string(axis));
    const int n = grid.cells[axis];
    const double s = std::clamp((x - lo_edge) / grid.h[axis] - 0.5, 0.0, static_cast<double>(n - 1));
    const int i0 = std::min(static_cast<int>(std::floor(s)), n - 2);
    return {i0, i0 + 1, s - i0};
}

} // namespace

Sampler build_sampler(const ReceiverGeometry& geometry, TraceTag tag, const Grid& grid, int k,
                      const RowMatrix& custom_weights)
{
    if (geometry.points.empty()) throw InvalidArgument("sampler needs at least one receiver");
    RowMatrix m;
    if (tag == TraceTag::Custom) {
        if (custom_weights.cols() != k || custom_weights.rows() < 1)
            throw DimensionMismatch("custom weight matrix must be l x k with k = " + std::to_string(k));
        m = custom_weights;
        warn("custom trace weights are not checked for trace continuity");
    } else {
        if (k != grid.dim + 1)
            throw UnsupportedConfiguration(std::string(trace_tag_name(tag)) +
                                           " traces need the acoustic layout (pressure then velocity); use custom");
        m = RowMatrix::Zero(1, k);
        if (tag == TraceTag::PressureTrace) {
            m(0, 0) = 1.0;
        } else {
            double norm = 0.0;
            for (int j = 0; j < grid.dim; ++j) norm += geometry.normal[j] * geometry.normal[j];
            norm = std::sqrt(norm);
            if (!(norm > 0.0)) throw InvalidArgument("normal-velocity traces need a nonzero in-plane normal");
            for (int j = 0; j < grid.dim; ++j) m(0, j + 1) = geometry.normal[j] / norm;
        }
    }

    const int l = static_cast<int>(m.rows());
    std::vector<Eigen::Triplet<double>> t;
    for (int r = 0; r < static_cast<int>(geometry.points.size()); ++r) {
        std::array<AxisWeights, 3> aw{AxisWeights{0, 0, 0.0}, AxisWeights{0, 0, 0.0}, AxisWeights{0, 0, 0.0}};
        for (int a = 0; a < grid.dim; ++a) aw[a] = axis_weights(grid, a, geometry.points[r][a], r);
        const int corners = 1 << grid.dim;
        for (int corner = 0; corner < corners; ++corner) {
            std::array<int, 3> ijk{0, 0, 0};
            double w = 1.0;
            for (int a = 0; a < grid.dim; ++a) {
                const bool hi = (corner >> a) & 1;
                ijk[a] = hi ? aw[a].hi : aw[a].lo;
                w *= hi ? aw[a].w_hi : 1.0 - aw[a].w_hi;
            }
            if (w == 0.0) continue;
            const int cell = grid.index(ijk);
            for (int row = 0; row < l; ++row)
                for (int comp = 0; comp < k; ++comp)
                    if (m(row, comp) != 0.0) t.emplace_back(r * l + row, cell * k + comp, w * m(row, comp));
        }
    }
    SparseMatrix s(static_cast<Eigen::Index>(geometry.points.size()) * l, grid.state_size(k));
    s.setFromTriplets(t.begin(), t.end());
    return Sampler(grid, k, geometry, tag, std::move(m), std::move(s));
}

Eigen::VectorXd apply_sampler(const Sampler& sampler, const Eigen::VectorXd& u)
{
    if (u.size() != sampler.matrix().cols())
        throw DimensionMismatch("state size " + std::to_string(u.size()) + " does not match the sampler (" +
                                std::to_string(sampler.matrix().cols()) + ")");
    return sampler.matrix() * u;
}

bool SeismogramData::aligned_with(const SeismogramData& other, double tol) const
{
    if (channels() != other.channels() || times.size() != other.times.size()) return false;
    for (std::size_t i = 0; i < times.size(); ++i)
        if (std::abs(times[i] - other.times[i]) > tol * std::max(1.0, std::abs(times[i]))) return false;
    return true;
}

namespace {

std::vector<std::string> channel_labels(const Sampler& s)
{
    std::vector<std::string> out;
    const int l = static_cast<int>(s.weights().rows());
    for (int r = 0; r < s.receivers(); ++r)
        for (int row = 0; row < l; ++row)
            out.push_back(l == 1 ? "r" + std::to_string(r) : "r" + std::to_string(r) + "_" + std::to_string(row));
    return out;
}

} // namespace

SeismogramData zero_seismogram(const Sampler& sampler, const std::vector<double>& times)
{
    SeismogramData d;
    d.times = times;
    d.values = Eigen::MatrixXd::Zero(sampler.channels(), static_cast<Eigen::Index>(times.size()));
    d.labels = channel_labels(sampler);
    return d;
}

SeismogramData sample_trajectory(const Sampler& sampler, const Trajectory& traj)
{
    if (!traj.grid.same_space(sampler.grid()) || traj.k != sampler.k())
        throw DimensionMismatch("trajectory and sampler live on different grids");
    SeismogramData d = zero_seismogram(sampler, traj.times);
    for (std::size_t n = 0; n < traj.size(); ++n) d.values.col(static_cast<Eigen::Index>(n)) = sampler.matrix() * traj.states[n];
    return d;
}

void write_seismogram_csv(const fs::path& path, const SeismogramData& data)
{
    std::vector<std::string> header{"t"};
    std::vector<std::vector<double>> cols{data.times};
    for (int c = 0; c < data.channels(); ++c) {
        header.push_back(c < static_cast<int>(data.labels.size()) ? data.labels[c] : "r" + std::to_string(c));
        cols.emplace_back(data.values.row(c).begin(), data.values.row(c).end());
    }
    write_csv(path, header, cols);
}

SeismogramData read_seismogram_csv(const fs::path& path)
{
    const CsvTable t = read_csv(path);
    if (t.header.empty() || t.header.front() != "t") throw IoError("seismogram CSV must start with a t column");
    SeismogramData d;
    d.times = t.columns.front();
    d.values.resize(static_cast<Eigen::Index>(t.columns.size()) - 1, static_cast<Eigen::Index>(d.times.size()));
    for (std::size_t c = 1; c < t.columns.size(); ++c) {
        d.labels.push_back(t.header[c]);
        for (std::size_t n = 0; n < d.times.size(); ++n)
            d.values(static_cast<Eigen::Index>(c) - 1, static_cast<Eigen::Index>(n)) = t.columns[c][n];
    }
    return d;
}

void write_seismogram_binary(const fs::path& path, const SeismogramData& data)
{
    Rwf1Array a;
    a.dim = 1;
    a.k = data.channels();
    a.cells = {std::max<std::int64_t>(1, data.samples()), 1, 1};
    a.values.resize(static_cast<std::size_t>(data.samples()) * data.channels());
    for (int n = 0; n < data.samples(); ++n)
        for (int c = 0; c < data.channels(); ++c) a.values[static_cast<std::size_t>(n) * data.channels() + c] = data.values(c, n);
    if (data.samples() == 0) a.values.assign(static_cast<std::size_t>(data.channels()), 0.0);
    write_rwf1(path, a);
    write_json(fs::path(path.string() + ".json"),
               Json{{"format", "seismogram"}, {"times", data.times}, {"labels", data.labels},
                    {"channels", data.channels()}, {"units", "trace units"}});
}

SeismogramData read_seismogram_binary(const fs::path& path)
{
    const Rwf1Array a = read_rwf1(path);
    const Json meta = read_json(fs::path(path.string() + ".json"));
    SeismogramData d;
    try {
        d.times = meta.at("times").get<std::vector<double>>();
        d.labels = meta.value("labels", std::vector<std::string>{});
    } catch (const Json::exception& e) {
        throw IoError("seismogram sidecar " + path.string() + ".json: " + e.what());
    }
    const auto n = static_cast<Eigen::Index>(d.times.size());
    const auto ch = static_cast<Eigen::Index>(a.k);
    if (n > 0 && (a.cells[0] != n || a.entries_per_cell() != ch))
        throw IoError("seismogram frame file disagrees with its sidecar: " + path.string());
    d.values.resize(ch, n);
    for (Eigen::Index t = 0; t < n; ++t)
        for (Eigen::Index c = 0; c < ch; ++c) d.values(c, t) = a.values[static_cast<std::size_t>(t * ch + c)];
    return d;
}

SeismogramData forward_map(const DiscreteSystem& system, const SourceTerm& source, const Sampler& sampler,
                           const IntegratorConfig& config)
{
    if (source.size() != 0 && !source.is_zero() && source.smoothness() < 2)
        warn("source smoothness " + std::to_string(source.smoothness()) +
             " is below 2; the forward map may lose trace regularity");
    return sample_trajectory(sampler, solve_causal(system, source, config));
}

SeismogramData forward_map(const ModelFile& model, const SourceTerm& source, const Sampler& sampler,
                           const IntegratorConfig& config)
{
    return forward_map(build_system(model), source, sampler, config);
}

void parallel_for(int count, int jobs, const std::function<void(int)>& fn)
{
    jobs = std::max(1, std::min(jobs, count));
    if (jobs == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j)
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<SeismogramData> forward_map_batch(const DiscreteSystem& system, const std::vector<SourceTerm>& sources,
                                              const Sampler& sampler, const IntegratorConfig& config, int jobs)
{
    std::vector<SeismogramData> out(sources.size());
    parallel_for(static_cast<int>(sources.size()), jobs,
                 [&](int i) { out[i] = forward_map(system, sources[i], sampler, config); });
    return out;
}

std::vector<Eigen::VectorXd> sampler_adjoint_series(const Sampler& sampler, const SeismogramData& residual)
{
    if (residual.channels() != sampler.channels())
        throw DimensionMismatch("residual has " + std::to_string(residual.channels()) + " channels, sampler has " +
                                std::to_string(sampler.channels()));
    const double inv_vol = 1.0 / sampler.grid().cell_volume();
    const SparseMatrix st = sampler.matrix().transpose();
    std::vector<Eigen::VectorXd> out;
    out.reserve(residual.times.size());
    for (int n = 0; n < residual.samples(); ++n) out.push_back(inv_vol * (st * residual.values.col(n)));
    return out;
}

SourceTerm sampler_adjoint_source(const Sampler& sampler, const SeismogramData& residual)
{
    auto series = std::make_shared<std::vector<Eigen::VectorXd>>(sampler_adjoint_series(sampler, residual));
    auto times = std::make_shared<std::vector<double>>(residual.times);
    const Eigen::Index size = sampler.matrix().cols();
    if (times->empty()) return SourceTerm(size);
    auto fn = [series, times](double t, Eigen::Ref<Eigen::VectorXd> out) {
        out.setZero();
        const auto& ts = *times;
        if (t < ts.front() || t > ts.back()) return;
        if (ts.size() == 1) {
            out = series->front();
            return;
        }
        const auto it = std::upper_bound(ts.begin(), ts.end(), t);
        const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - ts.begin()), ts.size() - 1);
        const std::size_t lo = hi - 1;
        const double w = (t - ts[lo]) / (ts[hi] - ts[lo]);
        out = (1.0 - w) * (*series)[lo] + w * (*series)[hi];
    };
    return SourceTerm::distributed(size, fn, times->front(), 1);
}

} // namespace roughwave
