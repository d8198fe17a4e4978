#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "roughwave/experiments.hpp"
#include "roughwave/sensitivity.hpp"

namespace roughwave {

enum class Command { Simulate, Forward, Gradient, Check, Study };

const char* command_name(Command c);
/// Throws InvalidArgument listing the valid tags.
Command command_from_string(const std::string& name);

/// Point source with a Ricker or sin^s pulse wavelet.
struct SourceSpec {
    std::array<double, 3> position{0.0, 0.0, 0.0};
    int component = 0;
    std::string wavelet = "ricker"; ///< "ricker" or "pulse"
    double frequency = 10.0;        ///< ricker peak frequency
    int smoothness = 4;             ///< pulse smoothness
    double width = 0.1;             ///< pulse duration
    double onset = 0.0;
    double amplitude = 1.0;
    double gaussian_width_cells = 0.0;
};

struct ReceiverSpec {
    ReceiverGeometry geometry;
    TraceTag tag = TraceTag::PressureTrace;
};

struct RunConfig {
    Command command = Command::Forward;
    std::filesystem::path config_path;
    std::filesystem::path model;
    std::vector<SourceSpec> sources;
    std::optional<ReceiverSpec> receivers;
    IntegratorConfig integrator;
    std::filesystem::path output = "out";
    std::uint64_t seed = 0;
    int jobs = 1;
    double leak_tolerance = 1e-6;
    int snapshot_stride = 0;   ///< simulate: 0 keeps only the final state
    bool export_operator = false;
    std::vector<std::filesystem::path> observed; ///< gradient: one seismogram file per source
    std::filesystem::path observed_model;        ///< gradient: synthesize observed data from this model
    Json study = Json::object();
};

/// Reads a JSON config; relative paths resolve against its directory.
/// Defaults: implicit midpoint, CFL safety 0.5, leak tolerance 1e-6.
/// Schema violations raise InvalidArgument naming the field.
RunConfig parse_config(const std::filesystem::path& path, std::optional<Command> command = std::nullopt);
RunConfig parse_config_json(const Json& j, const std::filesystem::path& base_dir,
                            std::optional<Command> command = std::nullopt);

/// Cell containing a physical point; InvalidArgument outside the box.
int locate_cell(const Grid& grid, const std::array<double, 3>& x);

SourceTerm build_source(const SourceSpec& spec, const Grid& grid, int k);

struct CheckResult {
    std::string name;
    bool passed = true;
    bool skipped = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string detail;
};

/// The invariant suite for one configured system at desk scale.
std::vector<CheckResult> run_checks(const RunConfig& config, const ModelFile& model);

/// Runs the command, writes artifacts under config.output and prints a
/// summary. Returns 0 on success and 3 when a numerical check fails;
/// validation problems propagate as exceptions.
int run(const RunConfig& config, std::ostream& out);

/// argv handling and error-to-exit-code mapping: 0 success, 2 validation
/// error, 3 numerical failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace roughwave
