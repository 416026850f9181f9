"""Simulation and statistical verification toolkit for path-dependent jump
diffusions on Skorokhod space."""

__version__ = "0.1.0"

from .path_core import CadlagPath, InitialCondition, TimeGrid  # noqa: E402
from .sde_engine import CoefficientSet, EngineConfig, JumpMeasure, simulate  # noqa: E402

__all__ = [
    "__version__",
    "CadlagPath",
    "InitialCondition",
    "TimeGrid",
    "CoefficientSet",
    "EngineConfig",
    "JumpMeasure",
    "simulate",
]
