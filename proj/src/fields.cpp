#include "roughwave/fields.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "roughwave/error.hpp"

namespace roughwave {

namespace {

constexpr double kSymTol = 1e-12;
constexpr double kBoundTol = 1e-12;

double spectral_norm(const RowMatrix& m)
{
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(0);
}

bool is_symmetric(const CellMatrix& m)
{
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= kSymTol * scale;
}


} // namespace

// ---------------------------------------------------------------- MemoryKernel

MemoryKernel MemoryKernel::prony(int cells, int k, std::vector<PronyTerm> terms)
{
    if (terms.empty()) return zero();
    const auto per = static_cast<std::size_t>(cells) * k * k;
    for (const auto& t : terms) {
        if (!(t.tau > 0.0)) throw InvalidCoefficient("Prony relaxation time must be positive");
        if (t.weights.size() != per) throw DimensionMismatch("Prony weight array has wrong size");
    }
    MemoryKernel q;
    q.kind_ = Kind::Prony;
    q.cells_ = cells;
    q.k_ = k;
    q.terms_ = std::move(terms);
    return q;
}

MemoryKernel MemoryKernel::tabulated(int cells, int k, double sample_dt, std::vector<double> samples)
{
    if (!(sample_dt > 0.0)) throw InvalidArgument("tabulated kernel needs a positive sample spacing");
    const auto per = static_cast<std::size_t>(cells) * k * k;
    if (per == 0 || samples.size() % per != 0 || samples.empty())
        throw DimensionMismatch("tabulated kernel sample array has wrong size");
    MemoryKernel q;
    q.kind_ = Kind::Tabulated;
    q.cells_ = cells;
    q.k_ = k;
    q.sample_dt_ = sample_dt;
    q.sample_count_ = static_cast<int>(samples.size() / per);
    q.samples_ = std::move(samples);
    return q;
}

CellMatrix MemoryKernel::sample(int index, int cell) const
{
    const auto per = static_cast<std::size_t>(cells_) * k_ * k_;
    return {samples_.data() + index * per + static_cast<std::size_t>(cell) * k_ * k_, k_, k_};
}

RowMatrix MemoryKernel::evaluate(int cell, double t) const
{
    RowMatrix out = RowMatrix::Zero(k_, k_);
    if (t < 0.0 || kind_ == Kind::Zero) return out;
    if (kind_ == Kind::Prony) {
        for (const auto& term : terms_) {
            CellMatrix c(term.weights.data() + static_cast<std::size_t>(cell) * k_ * k_, k_, k_);
            out += std::exp(-t / term.tau) * c;
        }
        return out;
    }
    const double x = t / sample_dt_;
    const int i = static_cast<int>(std::floor(x));
    if (i >= sample_count_ - 1) {
        if (i == sample_count_ - 1 && x - i < 1e-12) out = sample(i, cell);
        return out;
    }
    const double w = x - i;
    out = (1.0 - w) * sample(i, cell) + w * sample(i + 1, cell);
    return out;
}

double MemoryKernel::l1_bound() const
{
    double worst = 0.0;
    for (int c = 0; c < cells_; ++c) {
        double total = 0.0;
        if (kind_ == Kind::Prony) {
            for (const auto& term : terms_) {
                CellMatrix w(term.weights.data() + static_cast<std::size_t>(c) * k_ * k_, k_, k_);
                total += spectral_norm(w) * term.tau;
            }
        } else if (kind_ == Kind::Tabulated) {
            for (int i = 0; i < sample_count_; ++i) {
                const double wgt = (i == 0 || i == sample_count_ - 1) ? 0.5 : 1.0;
                total += wgt * sample_dt_ * spectral_norm(sample(i, c));
            }
        }
        worst = std::max(worst, total);
    }
    return worst;
}

MemoryKernel MemoryKernel::map_cell_arrays(
    const std::function<std::vector<double>(std::span<const double>)>& fn) const
{
    if (kind_ == Kind::Zero) return *this;
    MemoryKernel out = *this;
    if (kind_ == Kind::Prony) {
        for (auto& term : out.terms_) term.weights = fn(term.weights);
        return out;
    }
    const auto per = static_cast<std::size_t>(cells_) * k_ * k_;
    for (int i = 0; i < sample_count_; ++i) {
        std::span<const double> slice(samples_.data() + i * per, per);
        auto mapped = fn(slice);
        std::copy(mapped.begin(), mapped.end(), out.samples_.begin() + i * per);
    }
    return out;
}

// ----------------------------------------------------------- CoefficientField

CoefficientField::CoefficientField(Grid grid, int k, std::vector<double> a, std::vector<double> b,
                                   MemoryKernel q, std::optional<CoefficientBounds> bounds)
    : grid_(grid), k_(k), a_(std::move(a)), b_(std::move(b)), q_(std::move(q))
{
    if (k_ < 1) throw InvalidArgument("state width k must be positive");
    const auto per = static_cast<std::size_t>(grid_.num_cells()) * k_ * k_;
    if (a_.size() != per) throw DimensionMismatch("coefficient a has wrong size");
    if (b_.empty()) b_.assign(per, 0.0);
    if (b_.size() != per) throw DimensionMismatch("coefficient b has wrong size");
    if (!q_.is_zero() && (q_.cells() != grid_.num_cells() || q_.k() != k_))
        throw DimensionMismatch("memory kernel does not match grid and state width");
    validate(bounds);
}

CoefficientField CoefficientField::uniform(const Grid& grid, const RowMatrix& a, const RowMatrix& b,
                                           MemoryKernel q)
{
    const int k = static_cast<int>(a.rows());
    if (a.cols() != k) throw DimensionMismatch("coefficient a must be square");
    const int cells = grid.num_cells();
    std::vector<double> av(static_cast<std::size_t>(cells) * k * k);
    std::vector<double> bv(av.size(), 0.0);
    for (int c = 0; c < cells; ++c) {
        for (int i = 0; i < k * k; ++i) {
            av[static_cast<std::size_t>(c) * k * k + i] = a.data()[i];
            if (b.size() != 0) bv[static_cast<std::size_t>(c) * k * k + i] = b.data()[i];
        }
    }
    if (b.size() != 0 && (b.rows() != k || b.cols() != k)) throw DimensionMismatch("coefficient b must be k x k");
    return CoefficientField(grid, k, std::move(av), std::move(bv), std::move(q));
}

void CoefficientField::validate(const std::optional<CoefficientBounds>& requested)
{
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    double bmax = 0.0;
    for (int c = 0; c < grid_.num_cells(); ++c) {
        const auto ac = a(c);
        if (!ac.allFinite() || !is_symmetric(ac))
            throw InvalidCoefficient("coefficient a is not symmetric at " + describe_cell(grid_, c));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ac, Eigen::EigenvaluesOnly);
        const double emin = es.eigenvalues()(0);
        const double emax = es.eigenvalues()(k_ - 1);
        if (!(emin > 0.0)) throw InvalidCoefficient("coefficient a is not positive definite at " + describe_cell(grid_, c));
        if (requested) {
            const double tol = kBoundTol * std::max(1.0, requested->upper);
            if (emin < requested->lower - tol || emax > requested->upper + tol) {
                std::ostringstream os;
                os << "eigenvalues of a outside [" << requested->lower << ", " << requested->upper << "] at "
                   << describe_cell(grid_, c);
                throw InvalidCoefficient(os.str());
            }
        }
        lo = std::min(lo, emin);
        hi = std::max(hi, emax);
        const double bn = spectral_norm(RowMatrix(b(c)));
        if (!b(c).allFinite()) throw InvalidCoefficient("coefficient b is not finite at " + describe_cell(grid_, c));
        if (requested && bn > requested->b_norm * (1 + kBoundTol) + kBoundTol) {
            throw InvalidCoefficient("norm of b exceeds C_B at " + describe_cell(grid_, c));
        }
        bmax = std::max(bmax, bn);
    }

    if (q_.kind() == MemoryKernel::Kind::Prony) {
        for (const auto& term : q_.prony_terms())
            for (int c = 0; c < grid_.num_cells(); ++c) {
                CellMatrix w(term.weights.data() + block(c), k_, k_);
                if (!is_symmetric(w))
                    throw InvalidCoefficient("memory weight is not symmetric at " + describe_cell(grid_, c));
            }
    } else if (q_.kind() == MemoryKernel::Kind::Tabulated) {
        for (int i = 0; i < q_.sample_count(); ++i)
            for (int c = 0; c < grid_.num_cells(); ++c)
                if (!is_symmetric(q_.sample(i, c)))
                    throw InvalidCoefficient("memory kernel sample is not symmetric at " + describe_cell(grid_, c));
    }
    const double ql1 = q_.l1_bound();
    if (requested && ql1 > requested->q_l1 * (1 + kBoundTol) + kBoundTol)
        throw InvalidCoefficient("memory kernel L1 norm exceeds C_Q");

    bounds_ = requested ? *requested : CoefficientBounds{lo, hi, bmax, ql1};
}

CoefficientField CoefficientField::with_values(std::vector<double> a, std::vector<double> b, MemoryKernel q) const
{
    return CoefficientField(grid_, k_, std::move(a), std::move(b), std::move(q));
}

CoefficientField CoefficientField::with_time_axis(double dt, double t_end) const
{
    CoefficientField out = *this;
    out.grid_ = roughwave::with_time_axis(grid_, dt, t_end);
    return out;
}

// -------------------------------------------------------------------- Wavelet

Wavelet Wavelet::zero()
{
    return {};
}

Wavelet Wavelet::ricker(double peak_frequency, double onset, double amplitude)
{
    if (!(peak_frequency > 0.0)) throw InvalidArgument("Ricker peak frequency must be positive");
    if (onset < 0.0) throw InvalidArgument("source onset must be non-negative");
    Wavelet w;
    w.kind_ = Kind::Ricker;
    w.frequency_ = peak_frequency;
    w.onset_ = onset;
    w.amplitude_ = amplitude;
    // The truncation jump at onset is below 6e-16 * amplitude, so the
    // wavelet is treated as smooth; 4 is the class advertised to callers.
    w.smoothness_ = 4;
    return w;
}

Wavelet Wavelet::pulse(int smoothness, double width, double onset, double amplitude)
{
    if (smoothness < 1) throw InvalidArgument("pulse smoothness must be at least 1");
    if (!(width > 0.0)) throw InvalidArgument("pulse width must be positive");
    if (onset < 0.0) throw InvalidArgument("source onset must be non-negative");
    Wavelet w;
    w.kind_ = Kind::Pulse;
    w.smoothness_ = smoothness;
    w.width_ = width;
    w.onset_ = onset;
    w.amplitude_ = amplitude;
    return w;
}

Wavelet Wavelet::sampled(std::vector<double> values, double dt, double onset, int smoothness)
{
    if (!(dt > 0.0)) throw InvalidArgument("sampled wavelet needs positive dt");
    Wavelet w;
    w.kind_ = Kind::Sampled;
    w.values_ = std::move(values);
    w.dt_ = dt;
    w.onset_ = onset;
    w.amplitude_ = 1.0;
    w.smoothness_ = smoothness;
    return w;
}

Wavelet Wavelet::custom(std::function<double(double)> fn, double onset, int smoothness)
{
    Wavelet w;
    w.kind_ = Kind::Custom;
    w.fn_ = std::move(fn);
    w.onset_ = onset;
    w.amplitude_ = 1.0;
    w.smoothness_ = smoothness;
    return w;
}

double Wavelet::operator()(double t) const
{
    if (kind_ == Kind::Zero || t < onset_ || amplitude_ == 0.0) return 0.0;
    switch (kind_) {
    case Kind::Ricker: {
        const double a = std::numbers::pi * frequency_ * (t - onset_ - 2.0 / frequency_);
        const double a2 = a * a;
        return amplitude_ * (1.0 - 2.0 * a2) * std::exp(-a2);
    }
    case Kind::Pulse: {
        const double x = (t - onset_) / width_;
        if (x > 1.0) return 0.0;
        return amplitude_ * std::pow(std::sin(std::numbers::pi * x), smoothness_);
    }
    case Kind::Sampled: {
        const double x = (t - onset_) / dt_;
        const auto i = static_cast<std::size_t>(x);
        if (values_.empty()) return 0.0;
        if (i + 1 >= values_.size()) return (i + 1 == values_.size()) ? amplitude_ * values_.back() : 0.0;
        const double w = x - static_cast<double>(i);
        return amplitude_ * ((1.0 - w) * values_[i] + w * values_[i + 1]);
    }
    case Kind::Custom:
        return amplitude_ * fn_(t);
    default:
        return 0.0;
    }
}

Wavelet Wavelet::scaled(double factor) const
{
    Wavelet w = *this;
    w.amplitude_ *= factor;
    return w;
}

// ----------------------------------------------------------------- SourceTerm

SourceTerm SourceTerm::separable(Eigen::VectorXd footprint, Wavelet wavelet)
{
    SourceTerm s(footprint.size());
    s.terms_.push_back({std::move(footprint), std::move(wavelet)});
    return s;
}

SourceTerm SourceTerm::distributed(Eigen::Index size, FieldFn fn, double onset, int smoothness)
{
    SourceTerm s(size);
    s.fields_.push_back({std::move(fn), onset, smoothness, 1.0});
    return s;
}

SourceTerm SourceTerm::operator+(const SourceTerm& other) const
{
    if (size_ != other.size_) throw DimensionMismatch("cannot add sources of different sizes");
    SourceTerm s = *this;
    s.terms_.insert(s.terms_.end(), other.terms_.begin(), other.terms_.end());
    s.fields_.insert(s.fields_.end(), other.fields_.begin(), other.fields_.end());
    return s;
}

SourceTerm SourceTerm::scaled(double factor) const
{
    SourceTerm s = *this;
    for (auto& t : s.terms_) t.wavelet = t.wavelet.scaled(factor);
    for (auto& f : s.fields_) f.scale *= factor;
    return s;
}

void SourceTerm::evaluate(double t, Eigen::Ref<Eigen::VectorXd> out) const
{
    if (out.size() != size_) throw DimensionMismatch("source evaluation buffer has wrong size");
    out.setZero();
    for (const auto& term : terms_) {
        const double w = term.wavelet(t);
        if (w != 0.0) out += w * term.footprint;
    }
    if (!fields_.empty()) {
        Eigen::VectorXd tmp(size_);
        for (const auto& f : fields_) {
            if (t < f.onset || f.scale == 0.0) continue;
            tmp.setZero();
            f.fn(t, tmp);
            out += f.scale * tmp;
        }
    }
}

Eigen::VectorXd SourceTerm::evaluate(double t) const
{
    Eigen::VectorXd out(size_);
    evaluate(t, out);
    return out;
}

double SourceTerm::onset() const
{
    double t0 = std::numeric_limits<double>::infinity();
    for (const auto& term : terms_)
        if (term.wavelet.kind() != Wavelet::Kind::Zero && term.wavelet.amplitude() != 0.0)
            t0 = std::min(t0, term.wavelet.onset());
    for (const auto& f : fields_)
        if (f.scale != 0.0) t0 = std::min(t0, f.onset);
    return t0;
}

int SourceTerm::smoothness() const
{
    int s = 1000;
    for (const auto& term : terms_) s = std::min(s, term.wavelet.smoothness());
    for (const auto& f : fields_) s = std::min(s, f.smoothness);
    return s;
}

bool SourceTerm::is_zero() const
{
    for (const auto& term : terms_)
        if (term.wavelet.kind() != Wavelet::Kind::Zero && term.wavelet.amplitude() != 0.0 &&
            term.footprint.cwiseAbs().maxCoeff() > 0.0)
            return false;
    for (const auto& f : fields_)
        if (f.scale != 0.0) return false;
    return true;
}

SourceTerm make_point_source(const Grid& grid, int k, int center_cell, int component, Wavelet wavelet,
                             double gaussian_width_cells)
{
    if (center_cell < 0 || center_cell >= grid.num_cells()) throw InvalidArgument("source cell outside the grid");
    if (component < 0 || component >= k) throw InvalidArgument("source component outside the state width");
    Eigen::VectorXd footprint = Eigen::VectorXd::Zero(grid.state_size(k));
    const double vol = grid.cell_volume();
    if (gaussian_width_cells <= 0.0) {
        footprint(static_cast<Eigen::Index>(center_cell) * k + component) = 1.0 / vol;
    } else {
        const auto xc = grid.center(center_cell);
        double mass = 0.0;
        for (int c = 0; c < grid.num_cells(); ++c) {
            const auto x = grid.center(c);
            double r2 = 0.0;
            for (int a = 0; a < grid.dim; ++a) {
                const double d = (x[a] - xc[a]) / (gaussian_width_cells * grid.h[a]);
                r2 += d * d;
            }
            if (r2 > 36.0) continue;
            const double w = std::exp(-0.5 * r2);
            footprint(static_cast<Eigen::Index>(c) * k + component) = w;
            mass += w * vol;
        }
        footprint /= mass;
    }
    return SourceTerm::separable(std::move(footprint), std::move(wavelet));
}

SourceTerm make_ricker_source(const Grid& grid, int k, int center_cell, int component, double peak_frequency,
                              double onset, double amplitude, double gaussian_width_cells, double max_speed)
{
    if (max_speed > 0.0) {
        double hmax = 0.0;
        for (int a = 0; a < grid.dim; ++a) hmax = std::max(hmax, grid.h[a]);
        const double cells_per_wavelength = max_speed / (peak_frequency * hmax);
        if (cells_per_wavelength < 10.0) {
            std::ostringstream os;
            os << "Ricker peak wavelength spans only " << cells_per_wavelength << " cells (< 10)";
            warn(os.str());
        }
    }
    return make_point_source(grid, k, center_cell, component, Wavelet::ricker(peak_frequency, onset, amplitude),
                             gaussian_width_cells);
}

// ---------------------------------------------------------------- mollifiers

std::vector<double> mollify_cell_array(const Grid& grid, std::span<const double> values, int m, int n)
{
    if (n < 1) throw InvalidArgument("mollification index must be at least 1");
    if (values.size() != static_cast<std::size_t>(grid.num_cells()) * m)
        throw DimensionMismatch("cell array has wrong size for mollification");
    std::vector<double> cur(values.begin(), values.end());
    std::vector<double> next(cur.size());
    for (int axis = 0; axis < grid.dim; ++axis) {
        const int len = grid.cells[axis];
        const int half = (len + n - 1) / n;
        if (half <= 1) continue;
        std::vector<double> w(2 * half - 1);
        double total = 0.0;
        for (int s = -(half - 1); s <= half - 1; ++s) {
            w[s + half - 1] = 1.0 - std::abs(s) / static_cast<double>(half);
            total += w[s + half - 1];
        }
        for (double& x : w) x /= total;

        std::fill(next.begin(), next.end(), 0.0);
        for (int c = 0; c < grid.num_cells(); ++c) {
            auto ijk = grid.multi_index(c);
            const int i0 = ijk[axis];
            for (int s = -(half - 1); s <= half - 1; ++s) {
                ijk[axis] = std::clamp(i0 + s, 0, len - 1);
                const int src = grid.index(ijk);
                const double ws = w[s + half - 1];
                for (int j = 0; j < m; ++j)
                    next[static_cast<std::size_t>(c) * m + j] += ws * cur[static_cast<std::size_t>(src) * m + j];
            }
        }
        std::swap(cur, next);
    }
    return cur;
}

CoefficientField mollify_field(const CoefficientField& field, int n)
{
    if (n < 1) throw InvalidArgument("mollification index must be at least 1");
    const Grid& g = field.grid();
    const int kk = field.k() * field.k();
    auto a = mollify_cell_array(g, field.a_values(), kk, n);
    auto b = mollify_cell_array(g, field.b_values(), kk, n);
    auto q = field.memory().map_cell_arrays(
        [&](std::span<const double> v) { return mollify_cell_array(g, v, kk, n); });
    // Re-symmetrize against rounding so the validation tolerance is not consumed.
    const int k = field.k();
    for (int c = 0; c < g.num_cells(); ++c) {
        double* blk = a.data() + static_cast<std::size_t>(c) * kk;
        for (int i = 0; i < k; ++i)
            for (int j = i + 1; j < k; ++j) {
                const double s = 0.5 * (blk[i * k + j] + blk[j * k + i]);
                blk[i * k + j] = blk[j * k + i] = s;
            }
    }
    return CoefficientField(g, k, std::move(a), std::move(b), std::move(q));
}

double measure_distance(const CoefficientField& f1, const CoefficientField& f2, double eps, FieldPart part,
                        double q_window)
{
    if (!f1.grid().same_space(f2.grid()) || f1.k() != f2.k())
        throw DimensionMismatch("measure_distance needs fields on the same grid and state width");
    if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
    const Grid& g = f1.grid();
    const int k = f1.k();
    const double vol = g.cell_volume();
    double total = 0.0;
    for (int c = 0; c < g.num_cells(); ++c) {
        double diff = 0.0;
        if (part == FieldPart::A) {
            diff = (f1.a(c) - f2.a(c)).cwiseAbs().maxCoeff();
        } else if (part == FieldPart::B) {
            diff = (f1.b(c) - f2.b(c)).cwiseAbs().maxCoeff();
        } else {
            if (f1.memory().is_zero() && f2.memory().is_zero()) continue;
            constexpr int kSub = 400;
            const double ds = q_window / kSub;
            RowMatrix acc = RowMatrix::Zero(k, k);
            for (int i = 0; i <= kSub; ++i) {
                const double w = (i == 0 || i == kSub) ? 0.5 : 1.0;
                const double s = i * ds;
                RowMatrix q1 = f1.memory().is_zero() ? RowMatrix::Zero(k, k) : f1.memory().evaluate(c, s);
                RowMatrix q2 = f2.memory().is_zero() ? RowMatrix::Zero(k, k) : f2.memory().evaluate(c, s);
                acc += w * ds * (q1 - q2).cwiseAbs();
            }
            diff = acc.maxCoeff();
        }
        if (diff > eps) total += vol;
    }
    return total;
}

} // namespace roughwave
