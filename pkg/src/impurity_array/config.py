"""Unit system, emitter/lattice parameters and the simulation configuration.

Program units: hbar = 1, lambda0 = 1, gamma0 = 1.  Lengths are in lambda0,
momenta in hbar*k0, rates in gamma0 and times in 1/gamma0.  With these
choices the kinematic equations read

    d r / dt = p * 2 omega_rec / k0
    d p / dt = F / k0

where ``F`` is the force in hbar*gamma0/lambda0.

The configuration file is flat JSON.  Physical keys carry their unit as a
suffix (``spacing_lambda0``, ``initial_momentum_hbark0``, ...).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

SCHEMA_VERSION = 1

DIPOLE_PRESETS = {
    "circular": np.array([1, 1j, 0]) / math.sqrt(2),
    "z": np.array([0, 0, 1], dtype=complex),
    "x": np.array([1, 0, 0], dtype=complex),
    "diagonal": np.array([1, 1, 0], dtype=complex) / math.sqrt(2),
}


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


def derived_mass(omega_rec: float, k0: float = 2 * math.pi) -> float:
    """Particle mass from its recoil frequency, ``m = k0^2 / (2 omega_rec)`` (hbar = 1)."""
    if not omega_rec > 0:
        raise ConfigError(f"recoil frequency must be positive, got {omega_rec}")
    return k0**2 / (2 * omega_rec)


@dataclass(frozen=True)
class UnitSystem:
    recoil_frequency: float = 2 * math.pi**2
    wavelength: float = 1.0
    gamma0: float = 1.0

    @property
    def k0(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def mass(self) -> float:
        return derived_mass(self.recoil_frequency, self.k0)


@dataclass(frozen=True, eq=False)
class EmitterParams:
    """Decay rate, detuning and (complex, unit-norm) transition dipole."""

    gamma: float = 1.0
    delta: float = 0.0
    dipole: np.ndarray = field(default_factory=lambda: DIPOLE_PRESETS["circular"].copy())

    def __post_init__(self):
        d = np.asarray(self.dipole, dtype=complex).reshape(3)
        object.__setattr__(self, "dipole", d)
        if abs(np.vdot(d, d).real - 1) > 1e-12:
            raise ConfigError(f"polarization not unit norm: |d|^2 = {np.vdot(d, d).real:.6g}")
        if self.gamma < 0:
            raise ConfigError(f"decay rate must be nonnegative, got {self.gamma}")

    def __eq__(self, other):
        if not isinstance(other, EmitterParams):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and self.delta == other.delta
            and np.array_equal(self.dipole, other.dipole)
        )

    __hash__ = None


@dataclass(frozen=True)
class LatticeGeometry:
    nx: int = 4
    ny: int = 4
    spacing: float = 0.5
    trap_frequency: float = 0.0
    recoil_frequency: float = 2 * math.pi**2

    @property
    def lattice_mass(self) -> float:
        return derived_mass(self.recoil_frequency)

    @property
    def n_atoms(self) -> int:
        return self.nx * self.ny

    @property
    def rest_positions(self) -> np.ndarray:
        """Centered square grid in the z = 0 plane, row-major in (i, j)."""
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        x = (i - (self.nx - 1) / 2) * self.spacing
        y = (j - (self.ny - 1) / 2) * self.spacing
        return np.stack([x.ravel(), y.ravel(), np.zeros(x.size)], axis=-1)

    @property
    def circumradius(self) -> float:
        return math.hypot((self.nx - 1) / 2 * self.spacing, (self.ny - 1) / 2 * self.spacing)

    def central_plaquette(self) -> tuple[np.ndarray, float]:
        """Center and half-width of the plaquette containing the origin.

        For an even atom count per axis the origin is a plaquette center; for
        odd counts the plaquette to the lower-left of the central atom is used.
        """
        cx = 0.0 if self.nx % 2 == 0 else -self.spacing / 2
        cy = 0.0 if self.ny % 2 == 0 else -self.spacing / 2
        return np.array([cx, cy]), self.spacing / 2


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    units: UnitSystem = field(default_factory=UnitSystem)
    lattice: LatticeGeometry = field(default_factory=LatticeGeometry)
    lattice_params: EmitterParams = field(default_factory=EmitterParams)
    impurity_params: EmitterParams = field(default_factory=EmitterParams)
    initial_impurity_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_impurity_momentum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_spin: str = "impurity_excited"
    initial_amplitudes: np.ndarray | None = None
    dt: float = 1e-4
    t_final: float = 3.0
    mobile_lattice: bool = False
    sample_interval: int = 50
    rng_seed: int = 0
    integrator: str = "rk4"
    include_dissipative_force: bool = False
    escape_radius_factor: float = 1.5
    population_floor: float = 1e-6
    elimination_frequency: float = 0.0
    smoothing_window: int = 11
    density_bins: int = 128

    def __post_init__(self):
        r = np.asarray(self.initial_impurity_position, dtype=float).reshape(3)
        p = np.asarray(self.initial_impurity_momentum, dtype=float).reshape(3)
        object.__setattr__(self, "initial_impurity_position", r)
        object.__setattr__(self, "initial_impurity_momentum", p)
        if self.initial_amplitudes is not None:
            amps = np.asarray(self.initial_amplitudes, dtype=complex).ravel()
            object.__setattr__(self, "initial_amplitudes", amps)
        self.validate()

    def validate(self) -> None:
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ConfigError(f"t_final ({self.t_final}) must be at least dt ({self.dt})")
        if self.sample_interval < 1:
            raise ConfigError(f"sample_interval must be >= 1, got {self.sample_interval}")
        if self.initial_impurity_position[2] != 0 or self.initial_impurity_momentum[2] != 0:
            raise ConfigError("impurity confined to lattice plane: z components must be 0")
        if self.lattice.nx < 0 or self.lattice.ny < 0 or self.lattice.spacing <= 0:
            raise ConfigError("lattice needs nonnegative atom counts and positive spacing")
        if self.lattice.trap_frequency < 0:
            raise ConfigError("trap frequency must be nonnegative")
        if self.integrator not in ("rk4", "split"):
            raise ConfigError(f"unknown integrator {self.integrator!r} (rk4 or split)")
        if self.initial_spin not in ("impurity_excited", "custom"):
            raise ConfigError(f"unknown initial_spin {self.initial_spin!r}")
        if self.initial_spin == "custom":
            amps = self.initial_amplitudes
            if amps is None or amps.size != self.lattice.n_atoms + 1:
                raise ConfigError(
                    f"custom initial_amplitudes need {self.lattice.n_atoms + 1} entries"
                )
        if self.smoothing_window < 1 or self.density_bins < 1:
            raise ConfigError("smoothing_window and density_bins must be >= 1")

    def __eq__(self, other):
        if not isinstance(other, SimulationConfig):
            return NotImplemented
        return to_dict(self) == to_dict(other)

    __hash__ = None

    @property
    def impurity_mass(self) -> float:
        return self.units.mass

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def escape_radius(self) -> float:
        return self.escape_radius_factor * self.lattice.circumradius

    def initial_state_amplitudes(self) -> np.ndarray:
        if self.initial_spin == "custom":
            return self.initial_amplitudes.copy()
        amps = np.zeros(self.lattice.n_atoms + 1, dtype=complex)
        amps[0] = 1.0
        return amps

    def with_updates(self, **changes) -> "SimulationConfig":
        """Flat-key update, e.g. ``cfg.with_updates(spacing_lambda0=0.4)``."""
        d = to_dict(self)
        unknown = set(changes) - set(d)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d.update(changes)
        return from_dict(d)


# --- flat (file) representation -------------------------------------------

def _encode_vector(v) -> list:
    out = []
    for c in np.asarray(v).ravel():
        c = complex(c)
        out.append(c.real if c.imag == 0 else [c.real, c.imag])
    return out


def _decode_dipole(value, key: str) -> np.ndarray:
    if isinstance(value, str):
        try:
            return DIPOLE_PRESETS[value].copy()
        except KeyError:
            raise ConfigError(
                f"{key}: unknown polarization preset {value!r} "
                f"(choose from {sorted(DIPOLE_PRESETS)})"
            ) from None
    return _decode_complex_vector(value, key, 3)


def _decode_complex_vector(value, key: str, size: int | None = None) -> np.ndarray:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{key}: expected a list, got {type(value).__name__}")
    out = []
    for item in value:
        if isinstance(item, (list, tuple)) and len(item) == 2:
            out.append(complex(float(item[0]), float(item[1])))
        elif isinstance(item, (int, float)) and not isinstance(item, bool):
            out.append(complex(item))
        elif isinstance(item, str):
            try:
                out.append(complex(item.replace(" ", "")))
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {item!r} as complex") from None
        else:
            raise ConfigError(f"{key}: cannot parse {item!r} as complex")
    if size is not None and len(out) != size:
        raise ConfigError(f"{key}: expected {size} components, got {len(out)}")
    return np.array(out, dtype=complex)


def _decode_real_vector(value, key: str) -> np.ndarray:
    vec = _decode_complex_vector(value, key, 3)
    if np.any(vec.imag != 0):
        raise ConfigError(f"{key}: must be real")
    return vec.real.copy()


_DEFAULTS = None


def to_dict(cfg: SimulationConfig) -> dict[str, Any]:
    """Flat, JSON-serializable representation with unit-suffixed keys."""
    u, lat = cfg.units, cfg.lattice
    d = {
        "schema_version": SCHEMA_VERSION,
        "lattice_nx": lat.nx,
        "lattice_ny": lat.ny,
        "spacing_lambda0": lat.spacing,
        "recoil_frequency_gamma0": u.recoil_frequency,
        "lattice_recoil_frequency_gamma0": lat.recoil_frequency,
        "trap_frequency_gamma0": lat.trap_frequency,
        "impurity_gamma_gamma0": cfg.impurity_params.gamma,
        "impurity_detuning_gamma0": cfg.impurity_params.delta,
        "impurity_dipole": _encode_vector(cfg.impurity_params.dipole),
        "lattice_gamma_gamma0": cfg.lattice_params.gamma,
        "lattice_detuning_gamma0": cfg.lattice_params.delta,
        "lattice_dipole": _encode_vector(cfg.lattice_params.dipole),
        "initial_position_lambda0": [float(x) for x in cfg.initial_impurity_position],
        "initial_momentum_hbark0": [float(x) for x in cfg.initial_impurity_momentum],
        "initial_spin": cfg.initial_spin,
        "initial_amplitudes": (
            None if cfg.initial_amplitudes is None else _encode_vector(cfg.initial_amplitudes)
        ),
        "dt_inv_gamma0": cfg.dt,
        "t_final_inv_gamma0": cfg.t_final,
        "mobile_lattice": cfg.mobile_lattice,
        "sample_interval": cfg.sample_interval,
        "rng_seed": cfg.rng_seed,
        "integrator": cfg.integrator,
        "include_dissipative_force": cfg.include_dissipative_force,
        "escape_radius_circumradius": cfg.escape_radius_factor,
        "population_floor": cfg.population_floor,
        "elimination_frequency_gamma0": cfg.elimination_frequency,
        "smoothing_window": cfg.smoothing_window,
        "density_bins": cfg.density_bins,
    }
    return d


def default_dict() -> dict[str, Any]:
    global _DEFAULTS
    if _DEFAULTS is None:
        _DEFAULTS = to_dict(SimulationConfig())
        # an unset lattice recoil frequency follows the impurity's
        _DEFAULTS["lattice_recoil_frequency_gamma0"] = None
    return dict(_DEFAULTS)


def _expect(d, key, kind):
    value = d[key]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        value = float(value)
    elif kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def from_dict(raw: dict[str, Any]) -> SimulationConfig:
    """Build a validated config from a flat dict; missing keys take defaults."""
    d = default_dict()
    unknown = set(raw) - set(d)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    d.update(raw)
    if d["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {d['schema_version']}")

    omega_rec = _expect(d, "recoil_frequency_gamma0", float)
    units = UnitSystem(recoil_frequency=omega_rec)
    derived_mass(omega_rec, units.k0)
    lattice_rec = d["lattice_recoil_frequency_gamma0"]
    if lattice_rec is None:
        lattice_rec = omega_rec
    else:
        lattice_rec = _expect(d, "lattice_recoil_frequency_gamma0", float)
    derived_mass(lattice_rec)
    lattice = LatticeGeometry(
        nx=_expect(d, "lattice_nx", int),
        ny=_expect(d, "lattice_ny", int),
        spacing=_expect(d, "spacing_lambda0", float),
        trap_frequency=_expect(d, "trap_frequency_gamma0", float),
        recoil_frequency=lattice_rec,
    )
    impurity = EmitterParams(
        gamma=_expect(d, "impurity_gamma_gamma0", float),
        delta=_expect(d, "impurity_detuning_gamma0", float),
        dipole=_decode_dipole(d["impurity_dipole"], "impurity_dipole"),
    )
    lattice_params = EmitterParams(
        gamma=_expect(d, "lattice_gamma_gamma0", float),
        delta=_expect(d, "lattice_detuning_gamma0", float),
        dipole=_decode_dipole(d["lattice_dipole"], "lattice_dipole"),
    )
    amps = d["initial_amplitudes"]
    if amps is not None:
        amps = _decode_complex_vector(amps, "initial_amplitudes")
    return SimulationConfig(
        units=units,
        lattice=lattice,
        lattice_params=lattice_params,
        impurity_params=impurity,
        initial_impurity_position=_decode_real_vector(
            d["initial_position_lambda0"], "initial_position_lambda0"
        ),
        initial_impurity_momentum=_decode_real_vector(
            d["initial_momentum_hbark0"], "initial_momentum_hbark0"
        ),
        initial_spin=_expect(d, "initial_spin", str),
        initial_amplitudes=amps,
        dt=_expect(d, "dt_inv_gamma0", float),
        t_final=_expect(d, "t_final_inv_gamma0", float),
        mobile_lattice=_expect(d, "mobile_lattice", bool),
        sample_interval=_expect(d, "sample_interval", int),
        rng_seed=_expect(d, "rng_seed", int),
        integrator=_expect(d, "integrator", str),
        include_dissipative_force=_expect(d, "include_dissipative_force", bool),
        escape_radius_factor=_expect(d, "escape_radius_circumradius", float),
        population_floor=_expect(d, "population_floor", float),
        elimination_frequency=_expect(d, "elimination_frequency_gamma0", float),
        smoothing_window=_expect(d, "smoothing_window", int),
        density_bins=_expect(d, "density_bins", int),
    )


def dumps(cfg: SimulationConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def loads(text: str, source: str = "<string>") -> SimulationConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{source}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")
    try:
        return from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> SimulationConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text(), source=str(path))


def save_config(cfg: SimulationConfig, path) -> None:
    Path(path).write_text(dumps(cfg) + "\n")


def parse_override(item: str) -> tuple[str, Any]:
    """``key=value`` where value is JSON; bare words fall back to strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, text = item.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.strip(), value


def apply_overrides(cfg: SimulationConfig, items) -> SimulationConfig:
    if not items:
        return cfg
    d = to_dict(cfg)
    for item in items:
        key, value = parse_override(item)
        if key not in d:
            raise ConfigError(f"--set: unknown config key {key!r}")
        d[key] = value
    return from_dict(d)


def config_hash(cfg: SimulationConfig) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, repr floats)."""
    canonical = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def orbit_config(**overrides) -> SimulationConfig:
    """Single-trajectory setup: 4x4 lattice, a = 0.5, start near the plaquette center."""
    a = 0.5
    theta = 0.58 * math.pi
    d = {
        "spacing_lambda0": a,
        "initial_position_lambda0": [-0.1 * a, -0.1 * a, 0.0],
        "initial_momentum_hbark0": [0.05 * math.cos(theta), 0.05 * math.sin(theta), 0.0],
    }
    d.update(overrides)
    return from_dict(d)
