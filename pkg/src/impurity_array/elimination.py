"""Adiabatic elimination of the lattice spins.

When the lattice responds quickly, its amplitudes follow the impurity
adiabatically and can be solved for.  Writing the lattice equations as
``d sigma/dt = -(z 1 + Z0) sigma - Z_s s`` with ``Z = i H`` (so that
``Z_ij = i J_ij + Gamma_ij / 2`` off the diagonal), the oscillating ansatz
gives ``sigma = M Z_s s`` with the resolvent

    M = -((z - i omega) 1 + Z0)^-1

From it follow the complex self-energy ``S = Z_s^† M Z_s`` of the impurity and
the in-plane force field ``F = -2 Im[(grad Z_s)^T M Z_s]`` at unit impurity
population.  At ``omega = 0`` the field equals the force of the full dynamics
(dissipative part included) evaluated in the slaved lattice state.

The lattice block does not depend on the impurity position, so one LU
factorization serves a whole map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .config import EmitterParams, LatticeGeometry, SimulationConfig
from .greens import coupling_prefactor, green_tensor, green_tensor_gradient
from .spin import emitter_couplings

#: Grid points closer than this to a lattice atom are masked (lambda0).
MASK_RADIUS = 0.05
#: Largest condition number accepted for the resolvent matrix.
MAX_CONDITION = 1e12


class NearSingularError(np.linalg.LinAlgError):
    """The lattice resolvent matrix is numerically singular."""

    def __init__(self, condition: float):
        super().__init__(
            f"resolvent matrix is near-singular (condition number ~ {condition:.3g} "
            f">= {MAX_CONDITION:g})"
        )
        self.condition = condition


@dataclass(frozen=True)
class EliminationInputs:
    """Rate-form couplings of one impurity position.

    ``z`` is the lattice diagonal rate, ``Z_matrix`` the off-diagonal lattice
    block (zero diagonal) and ``Z_s`` the lattice-from-impurity couplings.
    """

    z: complex
    Z_matrix: np.ndarray
    Z_s: np.ndarray
    omega: float = 0.0

    def __post_init__(self):
        Z = np.asarray(self.Z_matrix, dtype=complex)
        if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
            raise ValueError(f"Z_matrix must be square, got shape {Z.shape}")
        if np.any(np.diag(Z) != 0):
            raise ValueError("Z_matrix must have a zero diagonal")
        if np.shape(self.Z_s) != (Z.shape[0],):
            raise ValueError(f"Z_s has shape {np.shape(self.Z_s)}, expected ({Z.shape[0]},)")

    def resolvent_matrix(self) -> np.ndarray:
        n = len(self.Z_s)
        return (self.z - 1j * self.omega) * np.eye(n) + np.asarray(self.Z_matrix, dtype=complex)

    def self_energy(self) -> complex:
        zs = np.asarray(self.Z_s, dtype=complex)
        if zs.size == 0:
            return 0j
        lu = _factor(self.resolvent_matrix())
        return complex(-np.vdot(zs, scipy.linalg.lu_solve(lu, zs)))


def _factor(A: np.ndarray):
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise NearSingularError(float(cond))
    return scipy.linalg.lu_factor(A)


def _lattice_positions(lattice) -> np.ndarray:
    if isinstance(lattice, LatticeGeometry):
        return lattice.rest_positions
    return np.asarray(lattice, dtype=float).reshape(-1, 3)


def lattice_rates(lattice, lattice_params: EmitterParams, k0: float = 2 * np.pi):
    """Diagonal rate ``z`` and off-diagonal block ``Z0`` of the lattice."""
    pos = _lattice_positions(lattice)
    n = len(pos)
    p = lattice_params
    C = emitter_couplings(pos, [p.dipole] * n, [p.gamma] * n, k0)
    z = 1j * (-p.delta - 0.5j * p.gamma)
    return complex(z), 1j * C


def impurity_rates(impurity_pos, lattice, impurity_params, lattice_params, k0=2 * np.pi):
    """``Z_s`` and its in-plane gradient for one or many impurity positions.

    ``impurity_pos`` has shape ``(..., 3)``; returns arrays of shape
    ``(..., N)`` and ``(..., N, 2)``.
    """
    pos = _lattice_positions(lattice)
    r = np.asarray(impurity_pos, dtype=float)
    disp = pos - r[..., None, :]  # r_i - r_I
    pref = coupling_prefactor(lattice_params.gamma, impurity_params.gamma, k0)
    dl, di = np.asarray(lattice_params.dipole), np.asarray(impurity_params.dipole)
    G = green_tensor(disp, k0)
    # differentiating G(r_i - r_I) with respect to r_I flips the sign
    dG = -green_tensor_gradient(disp, k0)[..., :2, :, :]
    zs = 1j * pref * np.einsum("a,...ab,b->...", dl.conj(), G, di)
    dzs = 1j * pref * np.einsum("a,...cab,b->...c", dl.conj(), dG, di)
    return zs, dzs


def elimination_inputs(impurity_pos, lattice, impurity_params, lattice_params,
                       omega: float = 0.0, k0: float = 2 * np.pi) -> EliminationInputs:
    z, Z0 = lattice_rates(lattice, lattice_params, k0)
    zs, _ = impurity_rates(impurity_pos, lattice, impurity_params, lattice_params, k0)
    return EliminationInputs(z=z, Z_matrix=Z0, Z_s=zs, omega=omega)


def self_energy(impurity_pos, lattice, impurity_params: EmitterParams,
                lattice_params: EmitterParams, omega: float = 0.0,
                k0: float = 2 * np.pi) -> complex:
    """Complex self-energy the eliminated lattice imprints on the impurity.

    ``lattice`` is a :class:`LatticeGeometry` or an ``(N, 3)`` position array.

    Raises
    ------
    NearSingularError
        If the resolvent matrix has condition number >= ``MAX_CONDITION``.
    """
    pos = _lattice_positions(lattice)
    if len(pos) == 0:
        return 0j
    return elimination_inputs(impurity_pos, pos, impurity_params, lattice_params,
                              omega, k0).self_energy()


@dataclass
class FieldMap:
    """Self-energy and force sampled on a uniform grid over a window.

    ``x`` and ``y`` are the 1-D axes; 2-D arrays are indexed ``[ix, iy]``.
    Masked points (near a lattice atom) hold NaN.
    """

    x: np.ndarray
    y: np.ndarray
    self_energy: np.ndarray
    force: np.ndarray
    mask: np.ndarray
    omega: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return np.stack([X, Y], axis=-1)


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    # symmetric construction so that mirrored windows give mirrored samples
    t = np.linspace(-1.0, 1.0, n)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * t


def effective_force_field(window, resolution, lattice, impurity_params: EmitterParams,
                          lattice_params: EmitterParams, omega: float = 0.0,
                          k0: float = 2 * np.pi) -> FieldMap:
    """Sample ``S`` and the eliminated force on a grid.

    ``window`` is ``((x0, x1), (y0, y1))``; ``resolution`` an int or
    ``(nx, ny)`` with at least 2 points per axis.
    """
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if nx < 2 or ny < 2:
        raise ValueError(f"resolution must be >= 2 per axis, got {(nx, ny)}")
    (x0, x1), (y0, y1) = window
    xs, ys = _axis(x0, x1, nx), _axis(y0, y1, ny)
    pos = _lattice_positions(lattice)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y, np.zeros_like(X)], axis=-1)

    S = np.full((nx, ny), complex(np.nan, np.nan))
    F = np.full((nx, ny, 2), np.nan)
    if len(pos):
        d2 = ((pts[:, :, None, :2] - pos[None, None, :, :2]) ** 2).sum(-1)
        mask = d2.min(axis=-1) < MASK_RADIUS**2
    else:
        mask = np.zeros((nx, ny), bool)
    good = ~mask
    if len(pos) == 0:
        S[good] = 0
        F[good] = 0
    elif good.any():
        z, Z0 = lattice_rates(pos, lattice_params, k0)
        lu = _factor((z - 1j * omega) * np.eye(len(pos)) + Z0)
        zs, dzs = impurity_rates(pts[good], pos, impurity_params, lattice_params, k0)
        mz = -scipy.linalg.lu_solve(lu, zs.T).T  # M Z_s, one row per point
        S[good] = np.einsum("pi,pi->p", zs.conj(), mz)
        F[good] = -2 * np.einsum("pic,pi->pc", dzs, mz).imag
    return FieldMap(x=xs, y=ys, self_energy=S, force=F, mask=mask, omega=omega,
                    meta={"window": [[x0, x1], [y0, y1]], "resolution": [nx, ny],
                          "mask_radius": MASK_RADIUS})


def plaquette_field(cfg: SimulationConfig, resolution: int = 41, omega: float | None = None,
                    dipole=None) -> FieldMap:
    """Field map over the central plaquette of ``cfg``'s lattice.

    ``dipole`` overrides the polarization of both impurity and lattice.
    """
    imp, lat = cfg.impurity_params, cfg.lattice_params
    if dipole is not None:
        imp = EmitterParams(imp.gamma, imp.delta, dipole)
        lat = EmitterParams(lat.gamma, lat.delta, dipole)
    center, half = cfg.lattice.central_plaquette()
    window = ((center[0] - half, center[0] + half), (center[1] - half, center[1] + half))
    w = cfg.elimination_frequency if omega is None else omega
    return effective_force_field(window, resolution, cfg.lattice, imp, lat, w, cfg.units.k0)


def eliminated_mode_frequencies(lattice, lattice_params: EmitterParams,
                                k0: float = 2 * np.pi) -> np.ndarray:
    """Complex rates of the lattice spin normal modes, eigenvalues of ``z 1 + Z0``."""
    pos = _lattice_positions(lattice)
    if len(pos) == 0:
        return np.zeros(0, complex)
    z, Z0 = lattice_rates(pos, lattice_params, k0)
    return np.linalg.eigvals(z * np.eye(len(pos)) + Z0)
