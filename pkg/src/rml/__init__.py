"""Ricci-DeTurck flow of rough metrics on flat tori: finite-difference solver,
regularity meters, distributional curvature and conjugate heat experiments."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ChecksumError,
    CodimensionError,
    ConfigError,
    DegenerateMetricError,
    GaugeBlowupError,
    NumericalError,
    RMLError,
    SnapshotError,
    SpecError,
    StabilityError,
)
from .fields import InitialDataSpec, MollifierConfig, SingularSetMask, make_initial_metric, mollify  # noqa: E402
from .flow import FlowConfig, FlowTrajectory, evolve  # noqa: E402
from .geometry import Grid, MetricField, TensorField, build_grid, torus_grid  # noqa: E402

__all__ = [
    "ChecksumError", "CodimensionError", "ConfigError", "DegenerateMetricError", "GaugeBlowupError",
    "NumericalError", "RMLError", "SnapshotError", "SpecError", "StabilityError",
    "InitialDataSpec", "MollifierConfig", "SingularSetMask", "make_initial_metric", "mollify",
    "FlowConfig", "FlowTrajectory", "evolve",
    "Grid", "MetricField", "TensorField", "build_grid", "torus_grid",
]
