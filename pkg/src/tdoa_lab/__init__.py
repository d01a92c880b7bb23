"""TDOA source localization with sensor position errors: bounds, checks and campaigns."""

from .crb import CrbReport, crb_with_errors_exact, crb_without_errors, equality_report, gap, trace_c1_simplified
from .errors import ConfigError, DegenerateGeometryError, NumericalConsistencyError
from .geometry import SensorArray, build_cube, build_random_square, build_uaa, perturb
from .model import NoiseModel, simulate_measurements, tdoa_true

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CrbReport",
    "DegenerateGeometryError",
    "NoiseModel",
    "NumericalConsistencyError",
    "SensorArray",
    "build_cube",
    "build_random_square",
    "build_uaa",
    "crb_with_errors_exact",
    "crb_without_errors",
    "equality_report",
    "gap",
    "perturb",
    "simulate_measurements",
    "tdoa_true",
    "trace_c1_simplified",
]
