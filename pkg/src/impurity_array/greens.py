"""Free-space dyadic Green's tensor and photon-mediated dipole couplings.

All functions broadcast over leading axes of the displacement array, so a
whole lattice of displacements (shape ``(..., 3)``) is evaluated in one call.
The wavenumber plays the role of the transition frequency (c = 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import spherical_jn

#: Separations below this (in units of the transition wavelength) are refused.
MIN_SEPARATION = 1e-9


class SingularityError(ValueError):
    """Two emitters closer than :data:`MIN_SEPARATION`."""


def _radial_parts(r: np.ndarray, k0: float):
    r = np.asarray(r, dtype=float)
    dist = np.sqrt(np.einsum("...i,...i->...", r, r))
    if np.any(dist < MIN_SEPARATION):
        raise SingularityError(
            f"separation below {MIN_SEPARATION:g} lambda0 (min |r| = {np.min(dist):.3g})"
        )
    u = k0 * dist
    pref = np.exp(1j * u) * (k0 / (4 * np.pi))
    return r, dist, u, pref


def _coefficients(u, pref, k0, with_derivative=False):
    """``A``, ``B`` (and ``dA/dr``, ``dB/dr``) of ``G = A 1 + B n n``.

    The real parts use the closed form.  The imaginary parts are regular at
    ``u = 0`` but the closed form loses them to cancellation for small ``u``,
    so they are taken from spherical Bessel functions:
    ``Im A = k0 (2 j0 - j2) / (12 pi)`` and ``Im B = k0 j2 / (4 pi)``.
    """
    a = pref * (1 / u + 1j / u**2 - 1 / u**3)
    b = -pref * (1 / u + 3j / u**2 - 3 / u**3)
    j0, j2 = spherical_jn(0, u), spherical_jn(2, u)
    scale = k0 / (4 * np.pi)
    a = a.real + 1j * scale * (2 * j0 - j2) / 3
    b = b.real + 1j * scale * j2
    if not with_derivative:
        return a, b
    da = k0 * pref * (1j / u - 2 / u**2 - 3j / u**3 + 3 / u**4)
    db = -k0 * pref * (1j / u - 4 / u**2 - 9j / u**3 + 9 / u**4)
    dj0 = spherical_jn(0, u, derivative=True)
    dj2 = spherical_jn(2, u, derivative=True)
    da = da.real + 1j * k0 * scale * (2 * dj0 - dj2) / 3
    db = db.real + 1j * k0 * scale * dj2
    return a, b, da, db


def green_tensor(r, k0: float = 2 * np.pi) -> np.ndarray:
    """Green's tensor of a point dipole in vacuum, without the contact term.

    ``G = A(r) 1 + B(r) n n`` with ``n = r/|r|`` and

        A = e^{iu}/(4 pi r) (1 + i/u - 1/u^2)
        B = -e^{iu}/(4 pi r) (1 + 3i/u - 3/u^2),     u = k0 |r|

    Parameters
    ----------
    r : array_like, shape (..., 3)
        Displacement vector(s) in units of lambda0.
    k0 : float
        Wavenumber (2 pi for lambda0 = 1).

    Returns
    -------
    ndarray, shape (..., 3, 3), complex
    """
    r, dist, u, pref = _radial_parts(r, k0)
    a, b = _coefficients(u, pref, k0)
    n = r / dist[..., None]
    eye = np.eye(3)
    return a[..., None, None] * eye + b[..., None, None] * n[..., :, None] * n[..., None, :]


def green_tensor_gradient(r, k0: float = 2 * np.pi) -> np.ndarray:
    """Spatial gradient of :func:`green_tensor`.

    Returns an array of shape ``(..., 3, 3, 3)`` where index ``[..., c, a, b]``
    holds ``d G_ab / d r_c``.

    Differentiating ``G_ab = A d_ab + B n_a n_b`` by hand:

        d_c G_ab = A' n_c d_ab + B' n_c n_a n_b
                   + B (d_ac n_b + d_bc n_a - 2 n_a n_b n_c) / r

    with ``A' = k0^2/(4 pi) e^{iu} (i/u - 2/u^2 - 3i/u^3 + 3/u^4)`` and
    ``B' = -k0^2/(4 pi) e^{iu} (i/u - 4/u^2 - 9i/u^3 + 9/u^4)``.
    """
    r, dist, u, pref = _radial_parts(r, k0)
    _, b, da, db = _coefficients(u, pref, k0, with_derivative=True)
    n = r / dist[..., None]
    eye = np.eye(3)

    nc = n[..., :, None, None]
    na = n[..., None, :, None]
    nb = n[..., None, None, :]
    d_ab = eye[None, :, :]
    d_ac = eye[:, :, None]
    d_bc = eye[:, None, :]
    e = (...,) + (None,) * 3
    return (
        da[e] * nc * d_ab
        + db[e] * nc * na * nb
        + (b / dist)[e] * (d_ac * nb + d_bc * na - 2 * na * nb * nc)
    )


def coupling_prefactor(gamma_m, gamma_n, k0: float = 2 * np.pi):
    """``-3 pi sqrt(gamma_m gamma_n) / k0``, so that ``C = pref * d_m^† G d_n``."""
    return -3 * np.pi * np.sqrt(np.asarray(gamma_m) * np.asarray(gamma_n)) / k0


@dataclass(frozen=True)
class CouplingSample:
    """Complex coupling ``C = J - i Gamma / 2`` and its gradient.

    ``J`` and ``Gamma`` are stored as complex numbers: they are real whenever
    both emitters carry the same linear or circular dipole, but for unequal
    complex dipoles ``d_m^† Re G d_n`` has an imaginary part.
    The gradient is taken with respect to the first emitter's position.
    """

    J: complex
    Gamma: complex
    grad_C: np.ndarray

    @property
    def C(self) -> complex:
        return self.J - 0.5j * self.Gamma


def _couple(dm, dn, tensor):
    # d_m^† T d_n contracted over the last two axes
    return np.einsum("...a,...ab,...b->...", np.conj(dm), tensor, dn)


def coupling(m, n, r_mn, k0: float = 2 * np.pi) -> CouplingSample:
    """Coherent and dissipative coupling between emitters ``m`` and ``n``.

    ``r_mn = r_m - r_n``.  The dipole of ``m`` enters conjugated (left side).
    """
    r_mn = np.asarray(r_mn, dtype=float)
    pref = coupling_prefactor(m.gamma, n.gamma, k0)
    G = green_tensor(r_mn, k0)
    dG = green_tensor_gradient(r_mn, k0)
    dm, dn = np.asarray(m.dipole), np.asarray(n.dipole)
    J = pref * np.conj(dm) @ G.real @ dn
    gamma = -2 * pref * np.conj(dm) @ G.imag @ dn
    grad = pref * np.array([np.conj(dm) @ dG[c] @ dn for c in range(3)])
    return CouplingSample(J=complex(J), Gamma=complex(gamma), grad_C=grad)


def coupling_gradient_pairs(positions, params, k0: float = 2 * np.pi):
    """All pairwise couplings of a set of emitters.

    Returns
    -------
    C : ndarray (N, N) complex
        ``C[i, j]`` couples displacement ``r_i - r_j``; diagonal is NaN.
    grad_C : ndarray (N, N, 3) complex
        Gradient of ``C[i, j]`` with respect to ``r_i``; diagonal is NaN.

    Raises
    ------
    SingularityError
        If any two emitters are closer than :data:`MIN_SEPARATION`; the
        message names the offending pair.
    """
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    C = np.full((n, n), np.nan + 0j)
    grad = np.full((n, n, 3), np.nan + 0j)
    if n < 2:
        return C, grad
    iu, ju = np.triu_indices(n, 1)
    disp = pos[iu] - pos[ju]
    dist = np.linalg.norm(disp, axis=-1)
    bad = np.flatnonzero(dist < MIN_SEPARATION)
    if bad.size:
        i, j = iu[bad[0]], ju[bad[0]]
        raise SingularityError(f"emitters {i} and {j} coincide (|r| = {dist[bad[0]]:.3g})")
    dip = np.array([p.dipole for p in params], dtype=complex)
    gam = np.array([p.gamma for p in params], dtype=float)
    G = green_tensor(disp, k0)
    dG = green_tensor_gradient(disp, k0)
    pref_ij = coupling_prefactor(gam[iu], gam[ju], k0)
    # G is even and dG odd in the displacement, so the (j, i) entries reuse them
    C[iu, ju] = pref_ij * _couple(dip[iu], dip[ju], G)
    C[ju, iu] = pref_ij * _couple(dip[ju], dip[iu], G)
    grad[iu, ju] = pref_ij[:, None] * np.einsum("pa,pcab,pb->pc", np.conj(dip[iu]), dG, dip[ju])
    grad[ju, iu] = -pref_ij[:, None] * np.einsum("pa,pcab,pb->pc", np.conj(dip[ju]), dG, dip[iu])
    return C, grad
