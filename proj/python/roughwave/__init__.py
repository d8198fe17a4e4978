"""Python bindings for the roughwave solver."""

from ._core import (
    DimensionMismatch,
    Grid,
    InvalidArgument,
    InvalidCoefficient,
    IoError,
    Model,
    Sampler,
    SolverError,
    Source,
    StabilityError,
    System,
    UnsupportedConfiguration,
    build_grid,
    forward,
    gradient,
    load_model,
    point_source,
    run_cli,
    sampler,
    solve,
)

__all__ = [
    "DimensionMismatch",
    "Grid",
    "InvalidArgument",
    "InvalidCoefficient",
    "IoError",
    "Model",
    "Sampler",
    "SolverError",
    "Source",
    "StabilityError",
    "System",
    "UnsupportedConfiguration",
    "build_grid",
    "forward",
    "gradient",
    "load_model",
    "point_source",
    "run_cli",
    "sampler",
    "solve",
]
