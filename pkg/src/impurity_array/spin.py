"""Single-excitation spin sector: non-Hermitian Hamiltonian and its evolution.

Basis ordering: index 0 is the excited impurity, index ``i >= 1`` is lattice
atom ``i - 1`` excited.  Everything evolves under ``i d/dt psi = H psi`` with
no renormalization, so the lost norm is the emitted photon probability.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .greens import MIN_SEPARATION, SingularityError, coupling_prefactor, green_tensor


@dataclass(frozen=True)
class SpinState:
    amps: np.ndarray
    time: float = 0.0

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)


@dataclass(frozen=True)
class SpinHamiltonian:
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def decay_matrix(self) -> np.ndarray:
        """Hermitian ``Gamma`` with ``H = H_herm - (i/2) Gamma``."""
        return 1j * (self.matrix - self.matrix.conj().T)


def emitter_couplings(positions, dipoles, gammas, k0: float = 2 * np.pi) -> np.ndarray:
    """Dense matrix of ``C[m, n] = -(3 pi sqrt(g_m g_n)/k0) d_m^† G(r_m - r_n) d_n``.

    The diagonal is left at zero.
    """
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    out = np.zeros((n, n), dtype=complex)
    if n < 2:
        return out
    iu, ju = np.triu_indices(n, 1)
    disp = pos[iu] - pos[ju]
    dist = np.linalg.norm(disp, axis=-1)
    bad = np.flatnonzero(dist < MIN_SEPARATION)
    if bad.size:
        raise SingularityError(
            f"emitters {iu[bad[0]]} and {ju[bad[0]]} coincide (|r| = {dist[bad[0]]:.3g})"
        )
    G = green_tensor(disp, k0)
    dips = np.asarray(dipoles, dtype=complex)
    pref = coupling_prefactor(np.asarray(gammas)[iu], np.asarray(gammas)[ju], k0)
    out[iu, ju] = pref * np.einsum("pa,pab,pb->p", dips[iu].conj(), G, dips[ju])
    out[ju, iu] = pref * np.einsum("pa,pab,pb->p", dips[ju].conj(), G, dips[iu])
    return out


def assemble_hamiltonian(
    impurity_pos,
    lattice_positions,
    impurity_params,
    lattice_params,
    k0: float = 2 * np.pi,
) -> SpinHamiltonian:
    """Rotating-frame single-excitation Hamiltonian of impurity plus lattice.

    Diagonal entries are ``-delta - i gamma/2``; off-diagonal entry ``(m, n)``
    is the complex coupling ``C_mn = J_mn - i Gamma_mn / 2``.

    Raises
    ------
    SingularityError
        If two emitters are closer than the minimum separation.
    """
    lat = np.asarray(lattice_positions, dtype=float).reshape(-1, 3)
    pos = np.vstack([np.asarray(impurity_pos, dtype=float).reshape(1, 3), lat])
    n_l = len(lat)
    dipoles = np.vstack([impurity_params.dipole] + [lattice_params.dipole] * n_l)
    gammas = np.array([impurity_params.gamma] + [lattice_params.gamma] * n_l)
    deltas = np.array([impurity_params.delta] + [lattice_params.delta] * n_l)
    H = emitter_couplings(pos, dipoles, gammas, k0)
    H[np.diag_indices_from(H)] = -deltas - 0.5j * gammas
    return SpinHamiltonian(H)


def _rk4(H: np.ndarray, psi: np.ndarray, dt: float) -> np.ndarray:
    k1 = -1j * (H @ psi)
    k2 = -1j * (H @ (psi + 0.5 * dt * k1))
    k3 = -1j * (H @ (psi + 0.5 * dt * k2))
    k4 = -1j * (H @ (psi + dt * k3))
    return psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve_spin(state: SpinState, H: SpinHamiltonian, dt: float, method: str = "rk4") -> SpinState:
    """Advance the amplitudes by ``dt`` under the frozen Hamiltonian.

    ``method="rk4"`` takes one classical Runge-Kutta step (the scheme used by
    the coupled integrator); ``"expm"`` applies the exact propagator.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    psi = np.asarray(state.amps, dtype=complex)
    if psi.shape != (H.dim,):
        raise ValueError(f"state has length {psi.size}, Hamiltonian is {H.dim}x{H.dim}")
    if method == "rk4":
        new = _rk4(H.matrix, psi, dt)
    elif method == "expm":
        new = scipy.linalg.expm(-1j * dt * H.matrix) @ psi
    else:
        raise ValueError(f"unknown method {method!r}")
    return SpinState(new, state.time + dt)


def correlators(state: SpinState) -> np.ndarray:
    """``<s^† sigma_i>`` for every lattice atom, i.e. ``conj(a_0) a_i``."""
    a = np.asarray(state.amps)
    return np.conj(a[0]) * a[1:]


def populations(state: SpinState) -> np.ndarray:
    return np.abs(np.asarray(state.amps)) ** 2
