#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "roughwave/cli.hpp"
#include "roughwave/error.hpp"

namespace py = pybind11;
using namespace roughwave;

namespace {

Eigen::MatrixXd stack_states(const Trajectory& t)
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(t.size()), t.states.empty() ? 0 : t.states.front().size());
    for (std::size_t n = 0; n < t.size(); ++n) out.row(static_cast<Eigen::Index>(n)) = t.states[n].transpose();
    return out;
}

py::dict trajectory_dict(const Trajectory& t)
{
    py::dict d;
    d["times"] = t.times;
    d["states"] = stack_states(t);
    d["energy"] = t.energy;
    d["scheme"] = scheme_name(t.scheme);
    d["max_solve_residual"] = t.max_solve_residual;
    return d;
}

SeismogramData make_data(const std::vector<double>& times, const Eigen::MatrixXd& values)
{
    if (static_cast<Eigen::Index>(times.size()) != values.cols())
        throw DimensionMismatch("values must have one column per time sample");
    SeismogramData d;
    d.times = times;
    d.values = values;
    return d;
}

IntegratorConfig integrator(const std::string& scheme, int stride)
{
    IntegratorConfig c;
    if (scheme == "rk4")
        c.scheme = Scheme::RK4;
    else if (scheme != "midpoint" && scheme != "implicit_midpoint")
        throw InvalidArgument("scheme must be 'midpoint' or 'rk4'");
    c.stride = stride;
    return c;
}

py::dict sparse_triplets(const SparseMatrix& m)
{
    std::vector<int> rows, cols;
    std::vector<double> vals;
    for (int c = 0; c < m.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(m, c); it; ++it) {
            rows.push_back(static_cast<int>(it.row()));
            cols.push_back(static_cast<int>(it.col()));
            vals.push_back(it.value());
        }
    py::dict d;
    d["rows"] = rows;
    d["cols"] = cols;
    d["values"] = vals;
    d["shape"] = py::make_tuple(m.rows(), m.cols());
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Symmetric hyperbolic wave solver with adjoint sensitivities";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<InvalidCoefficient>(m, "InvalidCoefficient", PyExc_ValueError);
    py::register_exception<DimensionMismatch>(m, "DimensionMismatch", PyExc_ValueError);
    py::register_exception<StabilityError>(m, "StabilityError", PyExc_ValueError);
    py::register_exception<UnsupportedConfiguration>(m, "UnsupportedConfiguration", PyExc_NotImplementedError);
    py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<Grid>(m, "Grid")
        .def_readonly("dim", &Grid::dim)
        .def_readonly("cells", &Grid::cells)
        .def_readonly("h", &Grid::h)
        .def_readonly("origin", &Grid::origin)
        .def_readonly("dt", &Grid::dt)
        .def_readonly("n_steps", &Grid::n_steps)
        .def_property_readonly("t_end", &Grid::t_end)
        .def_property_readonly("num_cells", &Grid::num_cells)
        .def("center", py::overload_cast<int>(&Grid::center, py::const_))
        .def("__repr__", [](const Grid& g) {
            std::ostringstream os;
            os << "Grid(dim=" << g.dim << ", cells=" << g.num_cells() << ", dt=" << g.dt << ", steps=" << g.n_steps
               << ")";
            return os.str();
        });

    m.def("build_grid", &build_grid, py::arg("dim"), py::arg("cells"), py::arg("extent"), py::arg("dt"),
          py::arg("t_end"), py::arg("origin") = std::vector<double>{});

    py::class_<DiscreteSystem>(m, "System")
        .def_property_readonly("grid", &DiscreteSystem::grid)
        .def_property_readonly("k", &DiscreteSystem::k)
        .def_property_readonly("size", &DiscreteSystem::size)
        .def_property_readonly("has_memory", [](const DiscreteSystem& s) { return !s.memory().is_zero(); })
        .def("energy", [](const DiscreteSystem& s, const Eigen::VectorXd& u) { return energy(s, u); })
        .def("skew_matrix", [](const DiscreteSystem& s) { return sparse_triplets(s.skew().matrix()); })
        .def("max_wavespeed", [](const DiscreteSystem& s) { return max_wavespeed(s); })
        .def("stable_dt", &stable_dt, py::arg("safety") = 0.5)
        .def("with_time_axis", &DiscreteSystem::with_time_axis, py::arg("dt"), py::arg("t_end"));

    py::class_<ModelFile>(m, "Model")
        .def_readonly("grid", &ModelFile::grid)
        .def_property_readonly("kind",
                               [](const ModelFile& f) {
                                   static const char* names[] = {"acoustic", "viscoelastic", "field"};
                                   return names[f.model.index()];
                               })
        .def_property_readonly("boundary", [](const ModelFile& f) { return boundary_name(f.boundary); })
        .def("system", [](const ModelFile& f) { return build_system(f); })
        .def("max_wavespeed", [](const ModelFile& f) { return max_wavespeed(f); })
        .def("save", [](const ModelFile& f, const std::filesystem::path& dir) { save_model(dir, f); });

    m.def("load_model", &load_model, py::arg("path"));

    py::class_<SourceTerm>(m, "Source")
        .def_property_readonly("size", &SourceTerm::size)
        .def_property_readonly("onset", &SourceTerm::onset)
        .def_property_readonly("smoothness", &SourceTerm::smoothness)
        .def("evaluate", py::overload_cast<double>(&SourceTerm::evaluate, py::const_))
        .def("__add__", &SourceTerm::operator+);

    m.def(
        "point_source",
        [](const Grid& grid, int k, std::array<double, 3> position, int component, const std::string& wavelet,
           double frequency, int smoothness, double width, double onset, double amplitude) {
            SourceSpec s;
            s.position = position;
            s.component = component;
            s.wavelet = wavelet;
            s.frequency = frequency;
            s.smoothness = smoothness;
            s.width = width;
            s.onset = onset;
            s.amplitude = amplitude;
            if (wavelet != "ricker" && wavelet != "pulse") throw InvalidArgument("wavelet must be 'ricker' or 'pulse'");
            return build_source(s, grid, k);
        },
        py::arg("grid"), py::arg("k"), py::arg("position"), py::arg("component") = 0, py::arg("wavelet") = "ricker",
        py::arg("frequency") = 10.0, py::arg("smoothness") = 4, py::arg("width") = 0.1, py::arg("onset") = 0.0,
        py::arg("amplitude") = 1.0);

    py::class_<Sampler>(m, "Sampler")
        .def_property_readonly("channels", &Sampler::channels)
        .def_property_readonly("receivers", &Sampler::receivers)
        .def_property_readonly("trace", [](const Sampler& s) { return trace_tag_name(s.tag()); })
        .def("apply", [](const Sampler& s, const Eigen::VectorXd& u) { return apply_sampler(s, u); });

    m.def(
        "sampler",
        [](const Grid& grid, int k, const std::vector<std::array<double, 3>>& points, const std::string& trace,
           std::array<double, 3> normal) {
            return build_sampler(ReceiverGeometry{points, normal}, trace_tag_from_string(trace), grid, k);
        },
        py::arg("grid"), py::arg("k"), py::arg("points"), py::arg("trace") = "pressure",
        py::arg("normal") = std::array<double, 3>{1.0, 0.0, 0.0});

    m.def(
        "solve",
        [](const DiscreteSystem& s, const SourceTerm& f, const std::string& scheme, int stride) {
            Trajectory t;
            {
                py::gil_scoped_release release;
                t = solve_causal(s, f, integrator(scheme, stride));
            }
            return trajectory_dict(t);
        },
        py::arg("system"), py::arg("source"), py::arg("scheme") = "midpoint", py::arg("stride") = 1);

    m.def(
        "forward",
        [](const DiscreteSystem& s, const std::vector<SourceTerm>& sources, const Sampler& sampler,
           const std::string& scheme, int jobs) {
            std::vector<SeismogramData> data;
            {
                py::gil_scoped_release release;
                data = forward_map_batch(s, sources, sampler, integrator(scheme, 1), jobs);
            }
            py::list out;
            for (const auto& d : data) out.append(py::make_tuple(d.times, d.values));
            return out;
        },
        py::arg("system"), py::arg("sources"), py::arg("sampler"), py::arg("scheme") = "midpoint",
        py::arg("jobs") = 1);

    m.def(
        "gradient",
        [](const DiscreteSystem& s, const SourceTerm& f, const Sampler& sampler, const std::vector<double>& times,
           const Eigen::MatrixXd& observed) {
            const SeismogramData d = make_data(times, observed);
            GradientReport r;
            {
                py::gil_scoped_release release;
                r = compute_gradient(s, f, sampler, d);
            }
            py::dict out;
            out["objective"] = r.objective;
            out["g_a"] = r.g_a;
            out["g_b"] = r.g_b;
            out["g_q"] = r.g_q;
            out["taus"] = r.taus;
            out["k"] = r.k;
            return out;
        },
        py::arg("system"), py::arg("source"), py::arg("sampler"), py::arg("times"), py::arg("observed"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"roughwave"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
