#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "roughwave/cli.hpp"
#include "roughwave/error.hpp"

using namespace roughwave;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("rw_cli_" + name))
    {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }

    fs::path put(const std::string& name, const Json& j) const
    {
        write_json(dir / name, j);
        return dir / name;
    }
};

Json acoustic_model(int cells = 200, double t_end = 0.3)
{
    return {{"kind", "acoustic"},
            {"grid", {{"dim", 1}, {"cells", {cells}}, {"extent", 1.0}, {"dt", 0.5 / cells}, {"t_end", t_end}}},
            {"rho", 1.0},
            {"kappa", {{"axis", 0}, {"interface", 0.6}, {"values", {1.0, 2.0}}}},
            {"boundary", "periodic"}};
}

Json viscoelastic_model()
{
    return {{"kind", "viscoelastic"},
            {"grid", {{"dim", 1}, {"cells", {200}}, {"extent", 1.0}, {"dt", 0.5 / 200}, {"t_end", 0.2}}},
            {"rho", 1.0},
            {"lambda", 1.0},
            {"mu", 1.0},
            {"relaxation", {{"kind", "prony"}, {"terms", Json::array({{{"tau", 0.1}, {"c", 0.2}}})}}}};
}

Json base_config(const std::string& command)
{
    return {{"command", command},
            {"model", "model.json"},
            {"output", "out"},
            {"sources",
             Json::array({{{"position", {0.4}}, {"wavelet", {{"kind", "pulse"}, {"width", 0.1}, {"smoothness", 4}}}}})},
            {"receivers", {{"kind", "line"}, {"start", {0.2}}, {"end", {0.8}}, {"count", 4}}}};
}

int invoke(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr)
{
    std::vector<const char*> argv{"roughwave"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return code;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

} // namespace

TEST_CASE("command names round-trip")
{
    for (auto c : {Command::Simulate, Command::Forward, Command::Gradient, Command::Check, Command::Study})
        CHECK(command_from_string(command_name(c)) == c);
    try {
        command_from_string("invert");
        FAIL("expected an exception");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("simulate") != std::string::npos);
    }
}

TEST_CASE("config defaults and field errors")
{
    Workspace ws("parse");
    ws.put("model.json", acoustic_model());
    auto cfg = parse_config(ws.put("c.json", base_config("forward")));
    CHECK(cfg.command == Command::Forward);
    CHECK(cfg.integrator.scheme == Scheme::ImplicitMidpoint);
    CHECK(cfg.integrator.cfl_safety == 0.5);
    CHECK(cfg.leak_tolerance == 1e-6);
    CHECK(cfg.jobs == 1);
    CHECK(cfg.output == ws.dir / "out");
    REQUIRE(cfg.sources.size() == 1);
    CHECK(cfg.sources[0].wavelet == "pulse");
    REQUIRE(cfg.receivers);
    CHECK(cfg.receivers->geometry.points.size() == 4);

    auto expect_field = [&](Json j, const std::string& field) {
        try {
            parse_config(ws.put("bad.json", j));
            FAIL("expected an error for " << field);
        } catch (const InvalidArgument& e) {
            INFO(e.what());
            CHECK(std::string(e.what()).find(field) != std::string::npos);
        }
    };
    Json j = base_config("forward");
    j.erase("model");
    expect_field(j, "model");
    j = base_config("forward");
    j["command"] = "invert";
    expect_field(j, "command");
    j = base_config("forward");
    j["sources"][0]["wavelet"]["kind"] = "gabor";
    expect_field(j, "wavelet.kind");
    j = base_config("forward");
    j["jobs"] = 0;
    expect_field(j, "jobs");
    j = base_config("forward");
    j["integrator"] = {{"scheme", "euler"}};
    expect_field(j, "integrator.scheme");
    j = base_config("forward");
    j.erase("receivers");
    expect_field(j, "receivers");
    j = base_config("forward");
    j["seed"] = "abc";
    expect_field(j, "seed");
}

TEST_CASE("source placement")
{
    Grid g = build_grid(1, {10}, {1.0}, 0.01, 0.1);
    CHECK(locate_cell(g, {0.05, 0, 0}) == 0);
    CHECK(locate_cell(g, {1.0, 0, 0}) == 9);
    CHECK_THROWS_AS(locate_cell(g, {1.2, 0, 0}), InvalidArgument);
    SourceSpec s;
    s.position = {0.55, 0, 0};
    s.component = 2;
    CHECK_THROWS_AS(build_source(s, g, 2), InvalidArgument);
}

TEST_CASE("argument errors exit with 2")
{
    CHECK(invoke({"check"}) == 2);
    CHECK(invoke({"invert", "--config", "nowhere.json"}) == 2);
    CHECK(invoke({"check", "--config", "/nonexistent/config.json"}) == 2);
    std::string out;
    CHECK(invoke({"--help"}, &out) == 0);
    CHECK(out.find("--config") != std::string::npos);
}

TEST_CASE("check suite passes on a layered acoustic model")
{
    Workspace ws("check");
    ws.put("model.json", acoustic_model());
    Json j = base_config("check");
    j.erase("sources");
    j.erase("receivers");
    std::string out;
    const int code = invoke({"check", "--config", ws.put("c.json", j).string(), "--seed", "7"}, &out);
    INFO(out);
    CHECK(code == 0);
    for (const char* name : {"skew_symmetry", "energy_conservation", "adjoint_dot_product", "finite_speed_cone_leak",
                             "gradient_finite_difference", "sampler_adjoint"})
        CHECK(out.find(std::string("PASS  ") + name) != std::string::npos);
    CHECK(fs::exists(ws.dir / "out" / "check.json"));
}

TEST_CASE("check suite on a viscoelastic model with memory")
{
    Workspace ws("check_ve");
    ws.put("model.json", viscoelastic_model());
    Json j = {{"model", "model.json"}, {"output", "out"}};
    std::string out;
    const int code = invoke({"check", "--config", ws.put("c.json", j).string()}, &out);
    INFO(out);
    CHECK(code == 0);
    CHECK(out.find("SKIP  energy_conservation") != std::string::npos);
    CHECK(out.find("PASS  kernel_split_reconstruction") != std::string::npos);
    CHECK(out.find("PASS  adjoint_dot_product") != std::string::npos);
}

TEST_CASE("simulate writes snapshots, energy and the operator")
{
    Workspace ws("simulate");
    ws.put("model.json", acoustic_model(100, 0.1));
    Json j = base_config("simulate");
    j["snapshot_stride"] = 5;
    j["export_operator"] = true;
    CHECK(invoke({"simulate", "--config", ws.put("c.json", j).string()}) == 0);
    const fs::path out = ws.dir / "out";
    const auto energy = read_csv(out / "energy.csv");
    CHECK(energy.header == std::vector<std::string>{"t", "E"});
    CHECK(energy.columns[0].size() == 5); // 20 steps, stride 5
    const Json index = read_json(out / "snapshots" / "snapshots.json");
    CHECK(index["files"].size() == 5);
    const auto last = read_rwf1(out / "snapshots" / index["files"].back().get<std::string>());
    CHECK(last.values.size() == 200);
    const std::string mtx = slurp(out / "P.mtx");
    CHECK(mtx.rfind("%%MatrixMarket", 0) == 0);
}

TEST_CASE("forward output is deterministic across job counts")
{
    Workspace ws("forward");
    ws.put("model.json", acoustic_model(100, 0.2));
    Json j = base_config("forward");
    j["sources"].push_back({{"position", {0.7}}, {"wavelet", {{"kind", "ricker"}, {"frequency", 8.0}, {"onset", 0.15}}}});
    const auto cfg = ws.put("c.json", j).string();
    CHECK(invoke({"forward", "--config", cfg, "--out", (ws.dir / "a").string()}) == 0);
    CHECK(invoke({"forward", "--config", cfg, "--out", (ws.dir / "b").string(), "--jobs", "2"}) == 0);
    for (const char* f : {"seismograms/shot_0.csv", "seismograms/shot_1.csv", "seismograms/shot_1.bin", "forward.json"})
        CHECK(slurp(ws.dir / "a" / f) == slurp(ws.dir / "b" / f));
    const auto d = read_seismogram_csv(ws.dir / "a" / "seismograms" / "shot_0.csv");
    CHECK(d.channels() == 4);
    CHECK(d.samples() == 41);
}

TEST_CASE("gradient of a self-consistent dataset vanishes")
{
    Workspace ws("gradient");
    ws.put("model.json", acoustic_model(100, 0.2));
    const auto cfg = ws.put("c.json", base_config("gradient")).string();
    std::string out;
    CHECK(invoke({"gradient", "--config", cfg}, &out) == 0);
    INFO(out);
    CHECK(out.find("J = 0\n") != std::string::npos);
    CHECK(out.find("PASS") != std::string::npos);
    const auto report = read_gradient_report(ws.dir / "out" / "gradient");
    CHECK(report.is_zero());
    CHECK(report.diagnostics.contains("dot_product_test"));
    CHECK(report.diagnostics.contains("finite_difference"));
}

TEST_CASE("gradient against data from another model")
{
    Workspace ws("gradient_obs");
    ws.put("model.json", acoustic_model(100, 0.2));
    fs::create_directories(ws.dir / "truth");
    Json truth = acoustic_model(100, 0.2);
    truth["rho"] = 1.1;
    write_json(ws.dir / "truth" / "model.json", truth);
    Json j = base_config("gradient");
    j["observed_model"] = "truth/model.json";
    std::string out;
    CHECK(invoke({"gradient", "--config", ws.put("c.json", j).string()}, &out) == 0);
    const auto report = read_gradient_report(ws.dir / "out" / "gradient");
    CHECK(report.objective > 0.0);
    CHECK_FALSE(report.is_zero());
}

TEST_CASE("RK4 beyond the stability limit is a validation error")
{
    Workspace ws("rk4");
    Json m = acoustic_model(100, 0.1);
    m["grid"]["dt"] = 0.05;
    ws.put("model.json", m);
    Json j = base_config("forward");
    j["integrator"] = {{"scheme", "rk4"}};
    std::string err;
    CHECK(invoke({"forward", "--config", ws.put("c.json", j).string()}, nullptr, &err) == 2);
    CHECK(err.find("suggested dt") != std::string::npos);
}

TEST_CASE("study command writes a report and maps the verdict to the exit code")
{
    Workspace ws("study");
    Json j = {{"output", "out"}, {"study", {{"kind", "oscillation"}, {"eps", {0.1, 0.01}}}}};
    CHECK(invoke({"study", "--config", ws.put("c.json", j).string()}) == 0);
    CHECK(read_study_report(ws.dir / "out" / "oscillation_suppression.json").passed);

    j["study"]["min_ratio"] = 1e9;
    CHECK(invoke({"study", "--config", ws.put("c.json", j).string()}) == 3);

    j["study"] = {{"kind", "spectral"}};
    CHECK(invoke({"study", "--config", ws.put("c.json", j).string()}) == 2);
}

TEST_CASE("a failed invariant exits with 3")
{
    Workspace ws("check_fail");
    ws.put("model.json", acoustic_model(100, 0.2));
    Json j = {{"model", "model.json"}, {"output", "out"}, {"leak_tolerance", 1e-300}};
    std::string out;
    CHECK(invoke({"check", "--config", ws.put("c.json", j).string()}, &out) == 3);
    CHECK(out.find("FAIL  finite_speed_cone_leak") != std::string::npos);
    CHECK_FALSE(read_json(ws.dir / "out" / "check.json")["passed"].get<bool>());
}
