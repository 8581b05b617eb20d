"""Compiled RK4 kernels for the coupled system.

These mirror ``CoupledSystem.rhs`` but use the closed form of the Green's
tensor for in-plane displacements, contracted with the dipoles:

    d_m^† G d_n = A (d_m^†.d_n) + B (d_m^†.n)(n.d_n)

so a pair costs a handful of scalar operations.  The numpy path in
``dynamics`` stays the reference; tests compare the two.
"""
from __future__ import annotations

import numpy as np
from numba import njit

OK, ESCAPED, DEPLETED, COLLISION, NON_FINITE = 0, 1, 2, 3, 4

_MIN_SEP2 = 1e-18


@njit(cache=True)
def _pair(dx, dy, k0, dm, dn, pref):
    """Coupling ``C = pref d_m^† G(r) d_n`` and its x/y gradient for planar ``r``."""
    dist = np.sqrt(dx * dx + dy * dy)
    nx = dx / dist
    ny = dy / dist
    u = k0 * dist
    e = np.exp(1j * u) * (k0 / (4 * np.pi))
    iu = 1.0 / u
    a = e * (iu + 1j * iu**2 - iu**3)
    b = -e * (iu + 3j * iu**2 - 3 * iu**3)
    da = k0 * e * (1j * iu - 2 * iu**2 - 3j * iu**3 + 3 * iu**4)
    db = -k0 * e * (1j * iu - 4 * iu**2 - 9j * iu**3 + 9 * iu**4)
    s0 = np.conj(dm[0]) * dn[0] + np.conj(dm[1]) * dn[1] + np.conj(dm[2]) * dn[2]
    p = np.conj(dm[0]) * nx + np.conj(dm[1]) * ny
    q = nx * dn[0] + ny * dn[1]
    pq = p * q
    c = pref * (a * s0 + b * pq)
    radial = da * s0 + db * pq
    bd = b / dist
    gx = pref * (radial * nx + bd * (np.conj(dm[0]) * q + p * dn[0] - 2 * nx * pq))
    gy = pref * (radial * ny + bd * (np.conj(dm[1]) * q + p * dn[1] - 2 * ny * pq))
    return c, gx, gy


@njit(cache=True)
def rhs(y, dy, H0, rest, d_imp, d_lat, k0, pref_il, pref_ll, h_imp, h_lat,
        vel_imp, vel_lat, trap_k, dissipative, mobile):
    """Fill ``dy`` with the time derivative of ``y``; returns False on collision."""
    n = rest.shape[0]
    rx = y[n + 1].real
    ry = y[n + 2].real
    H = H0.copy()
    H[0, 0] = h_imp
    fx = 0.0
    fy = 0.0
    g_il = np.empty((n, 2), dtype=np.complex128)
    g_li = np.empty((n, 2), dtype=np.complex128)
    lx = np.empty(n)
    ly = np.empty(n)
    for i in range(n):
        if mobile:
            lx[i] = y[n + 5 + 2 * i].real
            ly[i] = y[n + 6 + 2 * i].real
        else:
            lx[i] = rest[i, 0]
            ly[i] = rest[i, 1]
    for i in range(n):
        dx = rx - lx[i]
        dyy = ry - ly[i]
        if dx * dx + dyy * dyy < _MIN_SEP2:
            return False
        c_il, gx_il, gy_il = _pair(dx, dyy, k0, d_imp, d_lat, pref_il)
        c_li, gx_li, gy_li = _pair(dx, dyy, k0, d_lat, d_imp, pref_il)
        H[0, i + 1] = c_il
        H[i + 1, 0] = c_li
        g_il[i, 0] = gx_il
        g_il[i, 1] = gy_il
        g_li[i, 0] = gx_li
        g_li[i, 1] = gy_li
    if mobile:
        gll = np.zeros((n, n, 2), dtype=np.complex128)
        for i in range(n):
            H[i + 1, i + 1] = h_lat
            for j in range(i + 1, n):
                dx = lx[i] - lx[j]
                dyy = ly[i] - ly[j]
                if dx * dx + dyy * dyy < _MIN_SEP2:
                    return False
                c, gx, gy = _pair(dx, dyy, k0, d_lat, d_lat, pref_ll)
                H[i + 1, j + 1] = c
                H[j + 1, i + 1] = c
                gll[i, j, 0] = gx
                gll[i, j, 1] = gy
                gll[j, i, 0] = -gx
                gll[j, i, 1] = -gy

    amps = y[: n + 1]
    for a in range(n + 1):
        acc = 0j
        for b in range(n + 1):
            acc += H[a, b] * amps[b]
        dy[a] = -1j * acc

    a0c = np.conj(amps[0])
    for i in range(n):
        x = a0c * amps[i + 1]
        if dissipative:
            fx -= 2 * (x * g_il[i, 0]).real
            fy -= 2 * (x * g_il[i, 1]).real
        else:
            fx -= (x * g_il[i, 0] + np.conj(x) * g_li[i, 0]).real
            fy -= (x * g_il[i, 1] + np.conj(x) * g_li[i, 1]).real
    dy[n + 1] = vel_imp * y[n + 3].real
    dy[n + 2] = vel_imp * y[n + 4].real
    dy[n + 3] = fx / k0
    dy[n + 4] = fy / k0

    if mobile:
        for i in range(n):
            x = a0c * amps[i + 1]
            ai = amps[i + 1]
            if dissipative:
                f0 = 2 * (np.conj(x) * g_li[i, 0]).real
                f1 = 2 * (np.conj(x) * g_li[i, 1]).real
            else:
                f0 = (x * g_il[i, 0] + np.conj(x) * g_li[i, 0]).real
                f1 = (x * g_il[i, 1] + np.conj(x) * g_li[i, 1]).real
            for j in range(n):
                if j == i:
                    continue
                y_ij = np.conj(ai) * amps[j + 1]
                if dissipative:
                    f0 -= 2 * (y_ij * gll[i, j, 0]).real
                    f1 -= 2 * (y_ij * gll[i, j, 1]).real
                else:
                    y_ji = np.conj(y_ij)
                    f0 -= (y_ij * gll[i, j, 0] - y_ji * gll[j, i, 0]).real
                    f1 -= (y_ij * gll[i, j, 1] - y_ji * gll[j, i, 1]).real
            f0 -= trap_k * (lx[i] - rest[i, 0])
            f1 -= trap_k * (ly[i] - rest[i, 1])
            dy[n + 5 + 2 * i] = vel_lat * y[3 * n + 5 + 2 * i].real
            dy[n + 6 + 2 * i] = vel_lat * y[3 * n + 6 + 2 * i].real
            dy[3 * n + 5 + 2 * i] = f0 / k0
            dy[3 * n + 6 + 2 * i] = f1 / k0
    return True


@njit(cache=True)
def advance(y, n_steps, dt, escape2, floor, H0, rest, d_imp, d_lat, k0, pref_il, pref_ll,
            h_imp, h_lat, vel_imp, vel_lat, trap_k, dissipative, mobile):
    """Take up to ``n_steps`` RK4 steps in place.

    Returns ``(steps_taken, status)``; on a failing step ``y`` keeps the last
    good state and ``steps_taken`` excludes the failed step.
    """
    n = rest.shape[0]
    m = y.shape[0]
    k1 = np.empty(m, dtype=np.complex128)
    k2 = np.empty(m, dtype=np.complex128)
    k3 = np.empty(m, dtype=np.complex128)
    k4 = np.empty(m, dtype=np.complex128)
    tmp = np.empty(m, dtype=np.complex128)
    args = (H0, rest, d_imp, d_lat, k0, pref_il, pref_ll, h_imp, h_lat,
            vel_imp, vel_lat, trap_k, dissipative, mobile)
    for s in range(n_steps):
        if not rhs(y, k1, *args):
            return s, COLLISION
        for a in range(m):
            tmp[a] = y[a] + 0.5 * dt * k1[a]
        if not rhs(tmp, k2, *args):
            return s, COLLISION
        for a in range(m):
            tmp[a] = y[a] + 0.5 * dt * k2[a]
        if not rhs(tmp, k3, *args):
            return s, COLLISION
        for a in range(m):
            tmp[a] = y[a] + dt * k3[a]
        if not rhs(tmp, k4, *args):
            return s, COLLISION
        finite = True
        for a in range(m):
            tmp[a] = y[a] + dt / 6 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a])
            if not np.isfinite(tmp[a].real) or not np.isfinite(tmp[a].imag):
                finite = False
        if not finite:
            return s, NON_FINITE
        y[:] = tmp
        rx = y[n + 1].real
        ry = y[n + 2].real
        if rx * rx + ry * ry > escape2:
            return s + 1, ESCAPED
        norm = 0.0
        for a in range(n + 1):
            norm += y[a].real ** 2 + y[a].imag ** 2
        if norm < floor:
            return s + 1, DEPLETED
    return n_steps, OK
