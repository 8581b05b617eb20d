"""Semiclassical impurity motion in a subwavelength array of two-level emitters."""
from .config import (
    DIPOLE_PRESETS,
    ConfigError,
    EmitterParams,
    LatticeGeometry,
    SimulationConfig,
    UnitSystem,
    orbit_config,
    load_config,
)
from .dynamics import run_trajectory, run_trajectory_mobile
from .greens import coupling, green_tensor, green_tensor_gradient

__version__ = "0.1.0"

__all__ = [
    "DIPOLE_PRESETS",
    "ConfigError",
    "EmitterParams",
    "LatticeGeometry",
    "SimulationConfig",
    "UnitSystem",
    "coupling",
    "orbit_config",
    "green_tensor",
    "green_tensor_gradient",
    "load_config",
    "run_trajectory",
    "run_trajectory_mobile",
]
