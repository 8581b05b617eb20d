"""Self-consistent spin + motion integration.

The impurity (and optionally the lattice atoms) move classically in the
z = 0 plane while the single-excitation amplitudes evolve under the
position-dependent non-Hermitian Hamiltonian.  The coupled vector field is
integrated with fixed-step classical RK4, re-evaluating couplings and their
gradients at every stage.  A first-order "evolve spin, then move" scheme is
available as ``integrator="split"`` for cross-checks.

Force convention
----------------
By default the force is conservative, ``F = -grad Re<psi|H|psi>``, which
keeps only the gradient of the coherent couplings ``J`` and conserves total
momentum.  With ``include_dissipative_force`` the full complex coupling
gradient enters as ``F = -2 Re sum_i (grad C_Ii) <s^† sigma_i>``, i.e. the
``Gamma`` gradients contribute as well (photon recoil of correlated decay).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .config import SimulationConfig, derived_mass
from .greens import (
    MIN_SEPARATION,
    SingularityError,
    coupling_prefactor,
    green_tensor,
    green_tensor_gradient,
)
from . import _kernels
from .spin import SpinState

log = logging.getLogger(__name__)


class CollisionError(SingularityError):
    """Two emitters came closer than the minimum separation."""


class NonFiniteStateError(FloatingPointError):
    """The integrated state contains NaN or inf."""


@dataclass(frozen=True)
class SystemState:
    spin: SpinState
    impurity_r: np.ndarray
    impurity_p: np.ndarray
    lattice_r: np.ndarray
    lattice_p: np.ndarray

    @property
    def t(self) -> float:
        return self.spin.time


@dataclass
class TrajectoryRecord:
    """Sampled trajectory of one run.

    Arrays are indexed by sample; positions/momenta are in-plane 2-vectors.
    ``termination`` is one of ``t_final``, ``escaped``, ``depleted``,
    ``collision`` or ``non_finite``.
    """

    t: np.ndarray
    r: np.ndarray
    p: np.ndarray
    pop_impurity: np.ndarray
    pop_lattice: np.ndarray
    norm2: np.ndarray
    lattice_r: np.ndarray | None = None
    termination: str = "t_final"
    error: str | None = None
    sample_dt: float = 0.0

    def __len__(self) -> int:
        return len(self.t)


class CoupledSystem:
    """Right-hand side of the coupled spin-motion equations for one config.

    The state vector ``y`` is complex and laid out as
    ``[amps (N+1) | r_I (2) | p_I (2) | r_L (2N) | p_L (2N)]``; the lattice
    blocks are present only for a mobile lattice.  Kinematic entries are real.
    """

    def __init__(self, cfg: SimulationConfig, mobile: bool | None = None, zero_couplings=False):
        self.cfg = cfg
        self.mobile = cfg.mobile_lattice if mobile is None else mobile
        self.k0 = cfg.units.k0
        lat = cfg.lattice
        self.n = lat.n_atoms
        self.rest = lat.rest_positions[:, :2].copy()
        imp, lp = cfg.impurity_params, cfg.lattice_params
        self.d_imp = imp.dipole
        self.d_lat = lp.dipole
        scale = 0.0 if zero_couplings else 1.0
        self.pref_il = scale * float(coupling_prefactor(imp.gamma, lp.gamma, self.k0))
        self.pref_ll = scale * float(coupling_prefactor(lp.gamma, lp.gamma, self.k0))
        self.h_imp = -imp.delta - 0.5j * imp.gamma
        self.h_lat = -lp.delta - 0.5j * lp.gamma
        self.vel_imp = 2 * cfg.units.recoil_frequency / self.k0
        self.vel_lat = 2 * lat.recoil_frequency / self.k0
        self.trap_k = derived_mass(lat.recoil_frequency, self.k0) * lat.trap_frequency**2
        self.dissipative = cfg.include_dissipative_force
        # d_I^† T d_L and d_L^† T d_I contraction vectors for the 3x3 blocks
        self._w_il = np.outer(self.d_imp.conj(), self.d_lat).ravel()
        self._w_li = np.outer(self.d_lat.conj(), self.d_imp).ravel()
        self._w_ll = np.outer(self.d_lat.conj(), self.d_lat).ravel()
        if self.n > 1:
            self._iu, self._ju = np.triu_indices(self.n, 1)
        self.H = np.zeros((self.n + 1, self.n + 1), dtype=complex)
        if not self.mobile:
            self.H[1:, 1:] = self._lattice_block(self.rest)[0]
        self.size = self.n + 1 + 4 + (4 * self.n if self.mobile else 0)

    # -- packing ------------------------------------------------------------

    def pack(self, amps, r_imp, p_imp, r_lat=None, p_lat=None) -> np.ndarray:
        parts = [np.asarray(amps, dtype=complex), np.asarray(r_imp)[:2], np.asarray(p_imp)[:2]]
        if self.mobile:
            parts += [np.asarray(r_lat)[:, :2].ravel(), np.asarray(p_lat)[:, :2].ravel()]
        return np.concatenate(parts).astype(complex)

    def unpack(self, y):
        n = self.n
        amps = y[: n + 1]
        r_imp = y[n + 1 : n + 3].real
        p_imp = y[n + 3 : n + 5].real
        if self.mobile:
            r_lat = y[n + 5 : 3 * n + 5].real.reshape(n, 2)
            p_lat = y[3 * n + 5 :].real.reshape(n, 2)
        else:
            r_lat, p_lat = self.rest, np.zeros((n, 2))
        return amps, r_imp, p_imp, r_lat, p_lat

    def initial_vector(self) -> np.ndarray:
        cfg = self.cfg
        return self.pack(
            cfg.initial_state_amplitudes(),
            cfg.initial_impurity_position,
            cfg.initial_impurity_momentum,
            self.rest,
            np.zeros((self.n, 2)),
        )

    def to_state(self, y, t: float) -> SystemState:
        amps, r, p, rl, pl = self.unpack(y)
        z = np.zeros((self.n, 1))
        return SystemState(
            spin=SpinState(np.array(amps), t),
            impurity_r=np.array([r[0], r[1], 0.0]),
            impurity_p=np.array([p[0], p[1], 0.0]),
            lattice_r=np.hstack([rl, z]),
            lattice_p=np.hstack([pl, z]),
        )

    def from_state(self, state: SystemState) -> np.ndarray:
        return self.pack(
            state.spin.amps, state.impurity_r, state.impurity_p, state.lattice_r, state.lattice_p
        )

    # -- couplings ----------------------------------------------------------

    @staticmethod
    def _planar(r2):
        return np.concatenate([r2, np.zeros(r2.shape[:-1] + (1,))], axis=-1)

    def _lattice_block(self, r_lat, with_grad=False):
        """Lattice-lattice Hamiltonian block and ``grad[i, j] = d C_ij / d r_i`` (in-plane)."""
        n = self.n
        block = np.zeros((n, n), dtype=complex)
        block[np.diag_indices(n)] = self.h_lat
        grad = None
        if n < 2:
            return block, (np.zeros((n, n, 2), dtype=complex) if with_grad else None)
        iu, ju = self._iu, self._ju
        disp = self._planar(r_lat[iu] - r_lat[ju])
        _check_separation(disp, "lattice atoms")
        G = green_tensor(disp, self.k0).reshape(-1, 9)
        # identical lattice dipoles: C_ij = C_ji, and d C_ji / d r_j = -d C_ij / d r_i
        c = self.pref_ll * (G @ self._w_ll)
        block[iu, ju] = c
        block[ju, iu] = c
        if with_grad:
            dG = green_tensor_gradient(disp, self.k0)[:, :2].reshape(-1, 2, 9)
            g = self.pref_ll * (dG @ self._w_ll)
            grad = np.zeros((n, n, 2), dtype=complex)
            grad[iu, ju] = g
            grad[ju, iu] = -g
        return block, grad

    def couplings(self, r_imp, r_lat, with_grad=True):
        """Hamiltonian at the given positions plus impurity-lattice gradients.

        Returns ``H, g_il, g_li, grad_ll`` where ``g_il[i] = d C_{I i}/d r_I``,
        ``g_li[i] = d C_{i I}/d r_I`` and ``grad_ll`` is the lattice block
        gradient (``None`` for a pinned lattice).
        """
        n = self.n
        H = self.H.copy()
        H[0, 0] = self.h_imp
        grad_ll = None
        if self.mobile:
            H[1:, 1:], grad_ll = self._lattice_block(r_lat, with_grad)
        if n == 0:
            return H, np.zeros((0, 2), complex), np.zeros((0, 2), complex), grad_ll
        disp = self._planar(r_imp[None, :] - r_lat)
        _check_separation(disp, "impurity and lattice atom")
        G = green_tensor(disp, self.k0).reshape(n, 9)
        H[0, 1:] = self.pref_il * (G @ self._w_il)
        H[1:, 0] = self.pref_il * (G @ self._w_li)
        g_il = g_li = None
        if with_grad:
            dG = green_tensor_gradient(disp, self.k0)[:, :2].reshape(n, 2, 9)
            g_il = self.pref_il * (dG @ self._w_il)
            g_li = self.pref_il * (dG @ self._w_li)
        return H, g_il, g_li, grad_ll

    # -- forces -------------------------------------------------------------

    def impurity_force(self, amps, g_il, g_li) -> np.ndarray:
        """In-plane force on the impurity in hbar*gamma0/lambda0."""
        x = np.conj(amps[0]) * amps[1:]
        if self.dissipative:
            return -2 * (x @ g_il).real
        return -(x @ g_il + np.conj(x) @ g_li).real

    def lattice_forces(self, amps, r_lat, g_il, g_li, grad_ll) -> np.ndarray:
        """In-plane forces on each lattice atom, trap included, shape (N, 2)."""
        x = np.conj(amps[0]) * amps[1:]
        a = amps[1:]
        y = np.conj(a)[:, None] * a[None, :]  # <sigma_i^† sigma_j>
        if self.dissipative:
            f = 2 * (np.conj(x)[:, None] * g_li).real
            f -= 2 * np.einsum("ij,ijc->ic", y, grad_ll).real
        else:
            f = (x[:, None] * g_il + np.conj(x)[:, None] * g_li).real
            f -= np.einsum("ij,ijc->ic", y, grad_ll).real
            f += np.einsum("ji,jic->ic", y, grad_ll).real
        f -= self.trap_k * (r_lat - self.rest)
        return f

    # -- vector field -------------------------------------------------------

    def rhs(self, y: np.ndarray) -> np.ndarray:
        n = self.n
        amps, r_imp, p_imp, r_lat, p_lat = self.unpack(y)
        H, g_il, g_li, grad_ll = self.couplings(r_imp, r_lat)
        dy = np.empty_like(y)
        dy[: n + 1] = -1j * (H @ amps)
        dy[n + 1 : n + 3] = self.vel_imp * p_imp
        dy[n + 3 : n + 5] = self.impurity_force(amps, g_il, g_li) / self.k0
        if self.mobile:
            dy[n + 5 : 3 * n + 5] = self.vel_lat * p_lat.ravel()
            f = self.lattice_forces(amps, r_lat, g_il, g_li, grad_ll)
            dy[3 * n + 5 :] = f.ravel() / self.k0
        return dy

    def step_rk4(self, y: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.rhs(y)
        k2 = self.rhs(y + 0.5 * dt * k1)
        k3 = self.rhs(y + 0.5 * dt * k2)
        k4 = self.rhs(y + dt * k3)
        return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def step_split(self, y: np.ndarray, dt: float) -> np.ndarray:
        """Evolve spin with frozen positions, then kick and drift (first order)."""
        amps, r_imp, p_imp, r_lat, p_lat = self.unpack(y)
        H, _, _, _ = self.couplings(r_imp, r_lat, with_grad=False)
        amps = scipy.linalg.expm(-1j * dt * H) @ amps
        _, g_il, g_li, grad_ll = self.couplings(r_imp, r_lat)
        p_imp = p_imp + dt * self.impurity_force(amps, g_il, g_li) / self.k0
        r_imp = r_imp + dt * self.vel_imp * p_imp
        if self.mobile:
            f = self.lattice_forces(amps, r_lat, g_il, g_li, grad_ll)
            p_lat = p_lat + dt * f / self.k0
            r_lat = r_lat + dt * self.vel_lat * p_lat
        return self.pack(amps, r_imp, p_imp, r_lat, p_lat)

    def _kernel_args(self):
        return (
            self.H, self.rest, self.d_imp, self.d_lat, self.k0, self.pref_il, self.pref_ll,
            self.h_imp, self.h_lat, self.vel_imp, self.vel_lat, self.trap_k,
            self.dissipative, self.mobile,
        )

    def advance(self, y: np.ndarray, n_steps: int, dt: float, escape2=np.inf, floor=-1.0):
        """Take up to ``n_steps`` steps in place; returns ``(steps_taken, status)``.

        ``status`` is one of the ``_kernels`` codes.  RK4 runs compiled; the
        split scheme falls back to Python stepping.
        """
        if self.cfg.integrator == "rk4":
            return _kernels.advance(y, n_steps, dt, escape2, floor, *self._kernel_args())
        n = self.n
        for s in range(n_steps):
            try:
                out = self.step_split(y, dt)
            except SingularityError:
                return s, _kernels.COLLISION
            if not np.all(np.isfinite(out)):
                return s, _kernels.NON_FINITE
            y[:] = out
            r = y[n + 1 : n + 3].real
            if r @ r > escape2:
                return s + 1, _kernels.ESCAPED
            if np.vdot(y[: n + 1], y[: n + 1]).real < floor:
                return s + 1, _kernels.DEPLETED
        return n_steps, _kernels.OK

    def step(self, y: np.ndarray, dt: float) -> np.ndarray:
        """One step of the configured integrator (returns a new vector)."""
        out = np.array(y, dtype=complex)
        _, status = self.advance(out, 1, dt)
        if status == _kernels.COLLISION:
            raise CollisionError("emitters closer than the minimum separation")
        if status == _kernels.NON_FINITE:
            raise NonFiniteStateError("state became non-finite")
        return out


def _check_separation(disp, what):
    d2 = np.einsum("...i,...i->...", disp, disp)
    if np.any(d2 < MIN_SEPARATION**2):
        raise SingularityError(f"{what} closer than {MIN_SEPARATION:g} lambda0")


# -- public operations --------------------------------------------------------

_TERMINATION = {
    _kernels.ESCAPED: "escaped",
    _kernels.DEPLETED: "depleted",
    _kernels.COLLISION: "collision",
    _kernels.NON_FINITE: "non_finite",
}


def impurity_force(state: SystemState, cfg: SimulationConfig) -> np.ndarray:
    """Light-induced in-plane force on the impurity, as a 2-vector."""
    system = CoupledSystem(cfg)
    amps, r, _, rl, _ = system.unpack(system.from_state(state))
    if system.mobile:
        rl = state.lattice_r[:, :2]
    _, g_il, g_li, _ = system.couplings(r, rl)
    return system.impurity_force(amps, g_il, g_li)


def lattice_forces(state: SystemState, cfg: SimulationConfig) -> np.ndarray:
    """Dipole plus trap forces on every lattice atom, shape (N, 2)."""
    if not cfg.mobile_lattice:
        raise ValueError("lattice forces need mobile_lattice = true")
    system = CoupledSystem(cfg)
    amps, r, _, rl, _ = system.unpack(system.from_state(state))
    _, g_il, g_li, grad_ll = system.couplings(r, rl)
    return system.lattice_forces(amps, rl, g_il, g_li, grad_ll)


def initial_state(cfg: SimulationConfig) -> SystemState:
    system = CoupledSystem(cfg)
    return system.to_state(system.initial_vector(), 0.0)


def step(state: SystemState, cfg: SimulationConfig) -> SystemState:
    """Advance a state by one ``cfg.dt``."""
    system = CoupledSystem(cfg)
    y = system.step(system.from_state(state), cfg.dt)
    return system.to_state(y, state.t + cfg.dt)


def run_trajectory(
    cfg: SimulationConfig, mobile: bool | None = None, system: CoupledSystem | None = None
) -> TrajectoryRecord:
    """Integrate one trajectory to ``t_final`` or an earlier termination event.

    Runtime failures (collision, non-finite state) do not raise: the partial
    record is returned with ``termination`` and ``error`` set.
    """
    if system is None:
        system = CoupledSystem(cfg, mobile=mobile)
    n = system.n
    y = system.initial_vector()
    dt, every = cfg.dt, cfg.sample_interval
    n_steps = cfg.n_steps
    escape2 = cfg.escape_radius**2
    floor = cfg.population_floor

    samples = [(0.0, y.copy())]
    termination, error = "t_final", None
    k = 0
    while k < n_steps:
        chunk = min(every - k % every, n_steps - k)
        taken, status = system.advance(y, chunk, dt, escape2, floor)
        k += taken
        if taken > 0 and (k % every == 0 or status != _kernels.OK):
            samples.append((k * dt, y.copy()))
        if status != _kernels.OK:
            termination = _TERMINATION[status]
            if status in (_kernels.COLLISION, _kernels.NON_FINITE):
                error = f"{termination} at t = {(k + 1) * dt:.6g}"
                log.warning("trajectory stopped: %s", error)
            break

    ys = np.array([s[1] for s in samples])
    amps = ys[:, : n + 1]
    pops = np.abs(amps) ** 2
    lattice_r = None
    if system.mobile:
        lattice_r = ys[:, n + 5 : 3 * n + 5].real.reshape(len(ys), n, 2)
    return TrajectoryRecord(
        t=np.array([s[0] for s in samples]),
        r=ys[:, n + 1 : n + 3].real.copy(),
        p=ys[:, n + 3 : n + 5].real.copy(),
        pop_impurity=pops[:, 0].copy(),
        pop_lattice=pops[:, 1:].copy(),
        norm2=pops.sum(axis=1),
        lattice_r=lattice_r,
        termination=termination,
        error=error,
        sample_dt=every * dt,
    )


def run_trajectory_mobile(cfg: SimulationConfig) -> tuple[TrajectoryRecord, TrajectoryRecord]:
    """Mobile-lattice trajectory and the pinned reference from the same start."""
    if not cfg.mobile_lattice:
        raise ValueError("run_trajectory_mobile needs mobile_lattice = true")
    return run_trajectory(cfg, mobile=True), run_trajectory(cfg, mobile=False)
