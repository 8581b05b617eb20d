import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impurity_array.config import DIPOLE_PRESETS, EmitterParams, LatticeGeometry
from impurity_array.greens import SingularityError, coupling
from impurity_array.spin import (
    SpinHamiltonian,
    SpinState,
    assemble_hamiltonian,
    correlators,
    emitter_couplings,
    evolve_spin,
    populations,
)

CIRC = EmitterParams()
EMPTY = np.zeros((0, 3))


def evolve(state, H, t, dt=1e-3, method="rk4"):
    for _ in range(int(round(t / dt))):
        state = evolve_spin(state, H, dt, method)
    return state


def test_isolated_impurity_matrix():
    H = assemble_hamiltonian([0, 0, 0], EMPTY, EmitterParams(1.0), CIRC)
    assert H.matrix.shape == (1, 1)
    assert H.matrix[0, 0] == -0.5j


@pytest.mark.parametrize("t", [1.0, 2.0])
def test_single_atom_decay(t):
    H = assemble_hamiltonian([0, 0, 0], EMPTY, EmitterParams(1.0), CIRC)
    s = evolve(SpinState(np.array([1.0 + 0j])), H, t)
    assert populations(s)[0] == pytest.approx(math.exp(-t), abs=1e-8)
    assert s.time == pytest.approx(t)


def test_pair_off_diagonal_is_coupling():
    z = EmitterParams(1.0, 0.0, DIPOLE_PRESETS["z"])
    H = assemble_hamiltonian([0, 0, 0], [[0.5, 0, 0]], z, z)
    c = coupling(z, z, [-0.5, 0, 0])
    assert H.matrix[0, 1] == pytest.approx(c.C, abs=1e-15)
    assert c.Gamma.real == pytest.approx(-0.15198, abs=1e-5)


def test_zero_detuning_diagonal_imaginary():
    H = assemble_hamiltonian([0.1, 0.05, 0], LatticeGeometry().rest_positions, CIRC, CIRC)
    assert np.all(np.diag(H.matrix).real == 0)
    np.testing.assert_allclose(np.diag(H.matrix), -0.5j)


def test_detuning_on_diagonal():
    imp = EmitterParams(0.7, 0.3)
    lat = EmitterParams(1.2, -0.4)
    H = assemble_hamiltonian([0.1, 0, 0], [[0.5, 0, 0], [0, 0.5, 0]], imp, lat)
    assert H.matrix[0, 0] == pytest.approx(-0.3 - 0.35j)
    np.testing.assert_allclose(np.diag(H.matrix)[1:], 0.4 - 0.6j)


def test_coincident_emitters_raise():
    with pytest.raises(SingularityError):
        assemble_hamiltonian([0.25, 0.25, 0], LatticeGeometry().rest_positions, CIRC, CIRC)


def test_zero_hamiltonian_identity():
    psi = np.array([0.6, 0.8j])
    s = evolve_spin(SpinState(psi), SpinHamiltonian(np.zeros((2, 2), complex)), 0.1)
    np.testing.assert_array_equal(s.amps, psi)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        evolve_spin(SpinState(np.ones(3, complex)), SpinHamiltonian(np.zeros((2, 2))), 0.1)
    with pytest.raises(ValueError):
        evolve_spin(SpinState(np.ones(2, complex)), SpinHamiltonian(np.zeros((2, 2))), 0.0)


def test_superradiant_pair():
    # two identical atoms in the symmetric state decay at gamma + Gamma_12
    p = EmitterParams(1.0, 0.0, DIPOLE_PRESETS["z"])
    H = assemble_hamiltonian([0, 0, 0], [[0.2, 0, 0]], p, p)
    g12 = coupling(p, p, [0.2, 0, 0]).Gamma.real
    psi = np.array([1, 1]) / math.sqrt(2) + 0j
    t = 0.5
    s = evolve(SpinState(psi), H, t, dt=1e-3)
    assert s.norm2 == pytest.approx(math.exp(-(1 + g12) * t), rel=1e-9)
    # 2x2 eigen-decomposition oracle
    w, v = np.linalg.eig(H.matrix)
    ref = v @ (np.exp(-1j * w * t) * np.linalg.solve(v, psi))
    np.testing.assert_allclose(s.amps, ref, atol=1e-10)


def test_expm_and_rk4_agree():
    H = assemble_hamiltonian([0.05, -0.1, 0], LatticeGeometry().rest_positions, CIRC, CIRC)
    psi = np.zeros(17, complex)
    psi[0] = 1
    a = evolve(SpinState(psi), H, 0.2, dt=1e-3)
    b = evolve_spin(SpinState(psi), H, 0.2, "expm")
    np.testing.assert_allclose(a.amps, b.amps, atol=1e-11)


def test_correlator_examples():
    assert np.all(correlators(SpinState(np.array([1, 0, 0, 0], complex))) == 0)
    amps = np.array([1, 1, 0, 0], complex) / math.sqrt(2)
    np.testing.assert_allclose(correlators(SpinState(amps)), [0.5, 0, 0], atol=1e-15)


def _lowering(k, n_sites):
    sm = np.array([[0, 1], [0, 0]], complex)  # |g><e| with basis (g, e)
    eye = np.eye(2)
    return reduce(np.kron, [sm if j == k else eye for j in range(n_sites)])


def _embed(amps):
    """Single-excitation amplitudes -> full tensor-product state."""
    n_sites = len(amps)
    psi = np.zeros(2**n_sites, complex)
    for k, a in enumerate(amps):
        idx = 1 << (n_sites - 1 - k)
        psi[idx] = a
    return psi


def test_correlators_match_operator_oracle():
    rng = np.random.default_rng(7)
    amps = rng.normal(size=4) + 1j * rng.normal(size=4)
    amps /= np.linalg.norm(amps)
    psi = _embed(amps)
    s = _lowering(0, 4)
    want = [np.vdot(psi, s.conj().T @ _lowering(i, 4) @ psi) for i in range(1, 4)]
    np.testing.assert_allclose(correlators(SpinState(amps)), want, atol=1e-14)


def test_hamiltonian_matches_full_space_restriction():
    # H = sum_m h_m sigma_m^+ sigma_m + sum_{m != n} C_mn sigma_m^+ sigma_n on 2^3 states
    pos = np.array([[0.05, 0.02, 0], [0.25, 0.25, 0], [-0.25, 0.25, 0]])
    H = assemble_hamiltonian(pos[0], pos[1:], CIRC, CIRC).matrix
    C = emitter_couplings(pos, [CIRC.dipole] * 3, [1.0] * 3)
    full = np.zeros((8, 8), complex)
    for m in range(3):
        for n in range(3):
            op = _lowering(m, 3).conj().T @ _lowering(n, 3)
            full += (-0.5j if m == n else C[m, n]) * op
    basis = np.array([_embed(np.eye(3)[k]) for k in range(3)])
    np.testing.assert_allclose(basis.conj() @ full @ basis.T, H, atol=1e-14)


def test_population_examples():
    np.testing.assert_allclose(populations(SpinState(np.array([1, 0, 0], complex))), [1, 0, 0])
    np.testing.assert_allclose(populations(SpinState(np.array([0.6, 0.8j, 0]))), [0.36, 0.64, 0])


def test_decay_matrix_positive_semidefinite():
    rng = np.random.default_rng(11)
    for _ in range(20):
        pos = rng.uniform(-1, 1, size=(8, 3))
        pos[:, 2] = 0
        H = assemble_hamiltonian(pos[0], pos[1:], CIRC, CIRC)
        assert np.linalg.eigvalsh(H.decay_matrix()).min() > -1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(sorted(DIPOLE_PRESETS)))
def test_norm_nonincreasing(seed, dip):
    rng = np.random.default_rng(seed)
    n = rng.integers(1, 7)
    pos = np.zeros((n + 1, 3))
    k = 0
    while k <= n:  # keep atoms at least 0.1 apart
        cand = rng.uniform(-0.8, 0.8, size=3) * [1, 1, 0]
        if k == 0 or np.min(np.linalg.norm(pos[:k] - cand, axis=1)) > 0.1:
            pos[k] = cand
            k += 1
    p = EmitterParams(1.0, 0.0, DIPOLE_PRESETS[dip])
    H = assemble_hamiltonian(pos[0], pos[1:], p, p)
    psi = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
    s = SpinState(psi / np.linalg.norm(psi))
    prev = s.norm2
    assert prev <= 1 + 1e-9
    for _ in range(100):
        s = evolve_spin(s, H, 1e-2)
        assert len(s.amps) == n + 1
        assert s.norm2 <= prev + 1e-10
        prev = s.norm2


def test_embedding_extends_lifetime():
    H = assemble_hamiltonian([0, 0, 0], LatticeGeometry().rest_positions, CIRC, CIRC)
    psi = np.zeros(17, complex)
    psi[0] = 1
    s = evolve_spin(SpinState(psi), H, 3.0, "expm")
    assert populations(s)[0] > math.exp(-3)
