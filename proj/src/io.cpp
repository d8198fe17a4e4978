#include "roughwave/io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

#include "roughwave/error.hpp"

namespace roughwave {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'R', 'W', 'F', '1'};

void put_u64(std::ostream& os, std::uint64_t v)
{
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint64_t get_u64(std::istream& is, const fs::path& path)
{
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated RWF1 file: " + path.string());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, mode);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    return os;
}

} // namespace

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_rwf1(const fs::path& path, const Rwf1Array& array)
{
    if (array.dim < 1 || array.dim > 3) throw InvalidArgument("RWF1 dimension must be 1, 2, or 3");
    if (array.num_cells() <= 0 || array.values.size() % array.num_cells() != 0)
        throw DimensionMismatch("RWF1 payload is not a whole number of entries per cell");
    auto os = open_out(path, std::ios::out | std::ios::binary);
    os.write(kMagic, 4);
    put_u64(os, static_cast<std::uint64_t>(array.dim));
    put_u64(os, static_cast<std::uint64_t>(array.k));
    for (int a = 0; a < array.dim; ++a) put_u64(os, static_cast<std::uint64_t>(array.cells[a]));
    for (double v : array.values) put_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw IoError("write failed: " + path.string());
}

Rwf1Array read_rwf1(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
        throw IoError("not an RWF1 file: " + path.string());
    Rwf1Array out;
    out.dim = static_cast<int>(get_u64(is, path));
    if (out.dim < 1 || out.dim > 3) throw IoError("RWF1 file has invalid dimension: " + path.string());
    out.k = static_cast<int>(get_u64(is, path));
    for (int a = 0; a < out.dim; ++a) out.cells[a] = static_cast<std::int64_t>(get_u64(is, path));
    if (out.num_cells() <= 0) throw IoError("RWF1 file has empty grid: " + path.string());

    const auto start = is.tellg();
    is.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::int64_t>(is.tellg() - start);
    is.seekg(start);
    if (bytes % 8 != 0 || (bytes / 8) % out.num_cells() != 0)
        throw IoError("RWF1 payload size does not match its header: " + path.string());
    out.values.resize(static_cast<std::size_t>(bytes / 8));
    for (double& v : out.values) v = std::bit_cast<double>(get_u64(is, path));
    return out;
}

Rwf1Array make_rwf1(const Grid& grid, int k, std::vector<double> values)
{
    Rwf1Array a;
    a.dim = grid.dim;
    a.k = k;
    for (int i = 0; i < grid.dim; ++i) a.cells[i] = grid.cells[i];
    a.values = std::move(values);
    return a;
}

void write_rwf1(const fs::path& path, const Grid& grid, int k, const std::vector<double>& values)
{
    write_rwf1(path, make_rwf1(grid, k, values));
}

void write_rwf1(const fs::path& path, const Grid& grid, int k, const Eigen::VectorXd& state)
{
    write_rwf1(path, make_rwf1(grid, k, std::vector<double>(state.data(), state.data() + state.size())));
}

void check_layout(const Rwf1Array& array, const Grid& grid, const std::string& what)
{
    bool ok = array.dim == grid.dim;
    for (int a = 0; ok && a < grid.dim; ++a) ok = array.cells[a] == grid.cells[a];
    if (!ok) throw DimensionMismatch(what + ": array layout does not match the grid");
}

Json read_json(const fs::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    try {
        return Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw IoError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const Json& value)
{
    auto os = open_out(path);
    os << value.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

Json grid_to_json(const Grid& grid)
{
    Json j;
    j["dim"] = grid.dim;
    j["cells"] = std::vector<int>(grid.cells.begin(), grid.cells.begin() + grid.dim);
    j["h"] = std::vector<double>(grid.h.begin(), grid.h.begin() + grid.dim);
    j["origin"] = std::vector<double>(grid.origin.begin(), grid.origin.begin() + grid.dim);
    j["dt"] = grid.dt;
    j["n_steps"] = grid.n_steps;
    return j;
}

Grid grid_from_json(const Json& j)
{
    try {
        const int dim = j.at("dim").get<int>();
        const auto cells = j.at("cells").get<std::vector<int>>();
        const auto h = j.at("h").get<std::vector<double>>();
        std::vector<double> extent;
        for (std::size_t a = 0; a < h.size() && a < cells.size(); ++a) extent.push_back(h[a] * cells[a]);
        const auto origin = j.value("origin", std::vector<double>{});
        const double dt = j.at("dt").get<double>();
        const int steps = j.at("n_steps").get<int>();
        Grid g = build_grid(dim, cells, extent, dt, dt * std::max(steps, 1), origin);
        for (std::size_t a = 0; a < h.size() && a < 3; ++a) g.h[a] = h[a];
        g.n_steps = steps;
        return g;
    } catch (const Json::exception& e) {
        throw IoError(std::string("invalid grid description: ") + e.what());
    }
}

void write_field(const fs::path& dir, const CoefficientField& field)
{
    fs::create_directories(dir);
    const Grid& g = field.grid();
    const int k = field.k();
    write_rwf1(dir / "a.rwf", g, k, field.a_values());
    write_rwf1(dir / "b.rwf", g, k, field.b_values());

    Json j;
    j["grid"] = grid_to_json(g);
    j["k"] = k;
    j["bounds"] = {{"lower", field.bounds().lower},
                   {"upper", field.bounds().upper},
                   {"b_norm", field.bounds().b_norm},
                   {"q_l1", field.bounds().q_l1}};
    j["units"] = {{"a", "dimensionless"}, {"b", "1/time"}, {"q", "1/time^2"}, {"length", "grid units"}};
    const auto& q = field.memory();
    const auto kk = static_cast<std::size_t>(k) * k;
    if (q.kind() == MemoryKernel::Kind::Prony) {
        Json terms = Json::array();
        for (std::size_t i = 0; i < q.prony_terms().size(); ++i) {
            const std::string name = "q_" + std::to_string(i) + ".rwf";
            write_rwf1(dir / name, g, k, q.prony_terms()[i].weights);
            terms.push_back({{"tau", q.prony_terms()[i].tau}, {"file", name}});
        }
        j["memory"] = {{"kind", "prony"}, {"terms", terms}};
    } else if (q.kind() == MemoryKernel::Kind::Tabulated) {
        // Stored per cell: all samples of that cell, then the next cell.
        const int cells = g.num_cells();
        std::vector<double> per_cell(q.samples().size());
        for (int s = 0; s < q.sample_count(); ++s)
            for (int c = 0; c < cells; ++c)
                std::copy_n(q.samples().begin() + (static_cast<std::size_t>(s) * cells + c) * kk, kk,
                            per_cell.begin() + (static_cast<std::size_t>(c) * q.sample_count() + s) * kk);
        write_rwf1(dir / "q.rwf", g, k, per_cell);
        j["memory"] = {{"kind", "tabulated"}, {"sample_dt", q.sample_dt()}, {"samples", q.sample_count()},
                       {"file", "q.rwf"}};
    } else {
        j["memory"] = {{"kind", "zero"}};
    }
    write_json(dir / "field.json", j);
}

CoefficientField read_field(const fs::path& dir)
{
    const Json j = read_json(dir / "field.json");
    try {
        const Grid g = grid_from_json(j.at("grid"));
        const int k = j.at("k").get<int>();
        const auto a = read_rwf1(dir / "a.rwf");
        const auto b = read_rwf1(dir / "b.rwf");
        check_layout(a, g, "a.rwf");
        check_layout(b, g, "b.rwf");
        MemoryKernel q;
        const auto& mem = j.at("memory");
        const std::string kind = mem.at("kind").get<std::string>();
        const auto kk = static_cast<std::size_t>(k) * k;
        if (kind == "prony") {
            std::vector<PronyTerm> terms;
            for (const auto& t : mem.at("terms")) {
                auto arr = read_rwf1(dir / t.at("file").get<std::string>());
                check_layout(arr, g, "Prony weights");
                terms.push_back(PronyTerm{t.at("tau").get<double>(), std::move(arr.values)});
            }
            q = MemoryKernel::prony(g.num_cells(), k, std::move(terms));
        } else if (kind == "tabulated") {
            auto arr = read_rwf1(dir / mem.at("file").get<std::string>());
            check_layout(arr, g, "tabulated kernel");
            const int count = mem.at("samples").get<int>();
            const int cells = g.num_cells();
            if (arr.values.size() != static_cast<std::size_t>(count) * cells * kk)
                throw DimensionMismatch("tabulated kernel file has the wrong number of samples");
            std::vector<double> samples(arr.values.size());
            for (int s = 0; s < count; ++s)
                for (int c = 0; c < cells; ++c)
                    std::copy_n(arr.values.begin() + (static_cast<std::size_t>(c) * count + s) * kk, kk,
                                samples.begin() + (static_cast<std::size_t>(s) * cells + c) * kk);
            q = MemoryKernel::tabulated(cells, k, mem.at("sample_dt").get<double>(), std::move(samples));
        } else if (kind != "zero") {
            throw IoError("unknown memory kind '" + kind + "' in " + (dir / "field.json").string());
        }
        std::optional<CoefficientBounds> bounds;
        if (j.contains("bounds")) {
            const auto& jb = j["bounds"];
            bounds = CoefficientBounds{jb.at("lower").get<double>(), jb.at("upper").get<double>(),
                                       jb.at("b_norm").get<double>(), jb.at("q_l1").get<double>()};
        }
        return CoefficientField(g, k, a.values, b.values, std::move(q), bounds);
    } catch (const Json::exception& e) {
        throw IoError("invalid field description in " + dir.string() + ": " + e.what());
    }
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns)
{
    if (header.size() != columns.size()) throw DimensionMismatch("CSV header and column count differ");
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (const auto& c : columns)
        if (c.size() != rows) throw DimensionMismatch("CSV columns have different lengths");
    auto os = open_out(path);
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << format_double(columns[c][r]);
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

CsvTable read_csv(const fs::path& path)
{
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty CSV file: " + path.string());
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) t.header.push_back(cell);
    }
    t.columns.resize(t.header.size());
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            if (col >= t.columns.size()) throw IoError("too many fields in row " + std::to_string(row));
            double v = 0.0;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc()) throw IoError("non-numeric field in row " + std::to_string(row));
            t.columns[col++].push_back(v);
        }
        if (col != t.columns.size()) throw IoError("too few fields in row " + std::to_string(row));
    }
    return t;
}

void write_energy_csv(const fs::path& path, const std::vector<double>& t, const std::vector<double>& e)
{
    write_csv(path, {"t", "E"}, {t, e});
}

} // namespace roughwave
