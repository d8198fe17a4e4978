#include <catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "roughwave/error.hpp"
#include "roughwave/io.hpp"

using namespace roughwave;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("roughwave_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<unsigned char> bytes_of(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

} // namespace

TEST_CASE("RWF1 header layout is little-endian int64")
{
    auto dir = scratch("layout");
    Grid g = build_grid(2, {3, 2}, {1.0}, 0.1, 1.0);
    std::vector<double> v(12);
    for (int i = 0; i < 12; ++i) v[i] = 0.5 * i;
    write_rwf1(dir / "x.rwf", g, 2, v);
    auto b = bytes_of(dir / "x.rwf");
    REQUIRE(b.size() == 4 + 8 * 4 + 8 * 12);
    CHECK(std::string(b.begin(), b.begin() + 4) == "RWF1");
    auto word = [&](std::size_t off) {
        std::uint64_t w = 0;
        for (int i = 0; i < 8; ++i) w |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
        return w;
    };
    CHECK(word(4) == 2);
    CHECK(word(12) == 2);
    CHECK(word(20) == 3);
    CHECK(word(28) == 2);
    double third;
    const std::uint64_t w = word(36 + 3 * 8);
    std::memcpy(&third, &w, 8);
    CHECK(third == 1.5);
}

TEST_CASE("RWF1 round-trips exactly")
{
    auto dir = scratch("roundtrip");
    Rwf1Array a;
    a.dim = 3;
    a.k = 2;
    a.cells = {2, 1, 3};
    a.values = {1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e308, -3.25, 0.1,
                7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0,
                19.0, 20.0, 21.0, 22.0, 23.0, 24.0};
    write_rwf1(dir / "a.rwf", a);
    auto back = read_rwf1(dir / "a.rwf");
    CHECK(back.dim == 3);
    CHECK(back.k == 2);
    CHECK(back.cells == a.cells);
    CHECK(back.values == a.values);
    CHECK(back.entries_per_cell() == 4);
    CHECK(std::signbit(back.values[1]));
}

TEST_CASE("RWF1 rejects malformed files")
{
    auto dir = scratch("bad");
    {
        std::ofstream os(dir / "magic.rwf", std::ios::binary);
        os << "XXXX";
    }
    CHECK_THROWS_AS(read_rwf1(dir / "magic.rwf"), IoError);
    CHECK_THROWS_AS(read_rwf1(dir / "missing.rwf"), IoError);

    Grid g = build_grid(1, {4}, {1.0}, 0.1, 1.0);
    write_rwf1(dir / "ok.rwf", g, 1, std::vector<double>{1, 2, 3, 4});
    auto raw = bytes_of(dir / "ok.rwf");
    raw.resize(raw.size() - 8);
    {
        std::ofstream os(dir / "short.rwf", std::ios::binary);
        os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    }
    CHECK_THROWS_WITH(read_rwf1(dir / "short.rwf"), ContainsSubstring("payload"));
    CHECK_THROWS_AS(write_rwf1(dir / "x.rwf", g, 1, std::vector<double>{1, 2, 3}), DimensionMismatch);

    Grid other = build_grid(1, {5}, {1.0}, 0.1, 1.0);
    CHECK_THROWS_AS(check_layout(read_rwf1(dir / "ok.rwf"), other, "x"), DimensionMismatch);
}

TEST_CASE("CSV round-trip keeps full precision")
{
    auto dir = scratch("csv");
    std::vector<double> t{0.0, 0.1, 0.2}, e{1.0 / 3.0, 2e-300, -5.5};
    write_energy_csv(dir / "energy.csv", t, e);
    auto tab = read_csv(dir / "energy.csv");
    CHECK(tab.header == std::vector<std::string>{"t", "E"});
    CHECK(tab.columns[0] == t);
    CHECK(tab.columns[1] == e);
    CHECK_THROWS_AS(write_csv(dir / "x.csv", {"a"}, {{1.0}, {2.0}}), DimensionMismatch);

    std::ofstream(dir / "ragged.csv") << "a,b\n1,2\n3\n";
    CHECK_THROWS_WITH(read_csv(dir / "ragged.csv"), ContainsSubstring("row 3"));
}

TEST_CASE("JSON helpers report bad input")
{
    auto dir = scratch("json");
    std::ofstream(dir / "bad.json") << "{not json";
    CHECK_THROWS_AS(read_json(dir / "bad.json"), IoError);
    write_json(dir / "ok.json", Json{{"x", 1}});
    CHECK(read_json(dir / "ok.json")["x"] == 1);
}

TEST_CASE("grid JSON round-trip")
{
    Grid g = build_grid(2, {5, 7}, {1.0, 2.0}, 0.01, 0.3, {0.5, -1.0});
    CHECK(grid_from_json(grid_to_json(g)) == g);
}

TEST_CASE("coefficient fields round-trip through a directory")
{
    Grid g = build_grid(1, {3}, {1.0}, 0.1, 1.0);
    std::vector<double> a{1, 0, 0, 2, 3, 0, 0, 4, 5, 0, 0, 6};
    std::vector<double> b(12, 0.0);
    b[0] = 0.5;
    SECTION("Prony")
    {
        std::vector<double> w(12, 0.0);
        w[3] = 0.25;
        CoefficientField f(g, 2, a, b, MemoryKernel::prony(3, 2, {PronyTerm{0.2, w}}));
        auto dir = scratch("field_prony");
        write_field(dir, f);
        auto back = read_field(dir);
        CHECK(back.a_values() == a);
        CHECK(back.b_values() == b);
        CHECK(back.memory().prony_terms()[0].weights == w);
        CHECK(back.bounds().upper == f.bounds().upper);
    }
    SECTION("tabulated")
    {
        std::vector<double> s(3 * 12);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = (i % 4 == 0 || i % 4 == 3) ? 0.1 * i : 0.0;
        CoefficientField f(g, 2, a, b, MemoryKernel::tabulated(3, 2, 0.05, s));
        auto dir = scratch("field_tab");
        write_field(dir, f);
        auto back = read_field(dir);
        CHECK(back.memory().samples() == s);
        CHECK(back.memory().sample_dt() == 0.05);
    }
}
