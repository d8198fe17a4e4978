#pragma once

#include <stdexcept>
#include <string>

namespace roughwave {

/// Base of every error raised by the library. The kind lets the CLI map
/// failures onto exit codes without string matching.
class Error : public std::runtime_error {
public:
    enum class Kind {
        InvalidArgument,
        InvalidCoefficient,
        DimensionMismatch,
        Stability,
        Solver,
        UnsupportedConfiguration,
        Io,
    };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& w) : Error(Kind::InvalidArgument, w) {}
};

struct InvalidCoefficient : Error {
    explicit InvalidCoefficient(const std::string& w) : Error(Kind::InvalidCoefficient, w) {}
};

struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& w) : Error(Kind::DimensionMismatch, w) {}
};

/// Explicit integrator asked to run above its stability limit.
struct StabilityError : Error {
    StabilityError(const std::string& w, double suggested_dt)
        : Error(Kind::Stability, w), suggested_dt_(suggested_dt) {}
    double suggested_dt() const noexcept { return suggested_dt_; }

private:
    double suggested_dt_;
};

struct SolverError : Error {
    explicit SolverError(const std::string& w) : Error(Kind::Solver, w) {}
};

struct UnsupportedConfiguration : Error {
    explicit UnsupportedConfiguration(const std::string& w)
        : Error(Kind::UnsupportedConfiguration, w) {}
};

struct IoError : Error {
    explicit IoError(const std::string& w) : Error(Kind::Io, w) {}
};

/// Emit a non-fatal diagnostic. Silenced with set_warnings_enabled(false).
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);

} // namespace roughwave
