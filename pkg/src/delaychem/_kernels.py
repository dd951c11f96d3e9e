"""Compiled method-of-steps kernels (classical RK4, cubic Hermite history).

The solution lives on one uniform grid of spacing ``dt`` whose first ``K`` nodes
hold the initial history; node ``K`` is the start time.  ``F`` stores node
slopes.  The history's own slope at the start time (``fleft``) is kept apart
because the solution's derivative may jump there.
"""

import math

import numpy as np
from numba import njit

MICHAELIS_MENTEN, LINEAR, TABLE = 0, 1, 2


@njit(cache=True)
def uptake(i, x, kinds, rb, rk, tab_x, tab_y, tab_n):
    if x < 0.0:
        return 0.0
    kind = kinds[i]
    if kind == MICHAELIS_MENTEN:
        return rb[i] * x / (1.0 + rk[i] * x)
    if kind == LINEAR:
        return rb[i] * x
    n = tab_n[i]
    if x <= tab_x[i, 0]:
        return tab_y[i, 0]
    for j in range(1, n):
        if x <= tab_x[i, j]:
            w = (x - tab_x[i, j - 1]) / (tab_x[i, j] - tab_x[i, j - 1])
            return tab_y[i, j - 1] + w * (tab_y[i, j] - tab_y[i, j - 1])
    return tab_y[i, n - 1]


@njit(cache=True)
def dense(q, tb, dt, Y, F, K, fleft, c):
    u = (q - tb) / dt
    g = int(math.floor(u))
    if g < 0:
        g = 0
    last = Y.shape[0] - 2
    if g > last:
        g = last
    th = u - g
    m0 = F[g, c]
    m1 = fleft[c] if g + 1 == K else F[g + 1, c]
    th2 = th * th
    th3 = th2 * th
    return ((2.0 * th3 - 3.0 * th2 + 1.0) * Y[g, c] + (th3 - 2.0 * th2 + th) * dt * m0
            + (-2.0 * th3 + 3.0 * th2) * Y[g + 1, c] + (th3 - th2) * dt * m1)


@njit(cache=True)
def _chem_rhs(j, t, z, out, tb, dt, Y, F, K, fleft, taus, dh, s0h, E, kinds, rb, rk, tab_x, tab_y, tab_n):
    n = taus.shape[0]
    S = z[0]
    dS = dh[j] * (s0h[j] - S)
    for i in range(n):
        xi = z[i + 1]
        dS -= uptake(i, S, kinds, rb, rk, tab_x, tab_y, tab_n) * xi
        if taus[i] > 0.0:
            q = t - taus[i]
            S_del = dense(q, tb, dt, Y, F, K, fleft, 0)
            x_del = dense(q, tb, dt, Y, F, K, fleft, i + 1)
        else:
            S_del = S
            x_del = xi
        out[i + 1] = -dh[j] * xi + E[i, j] * uptake(i, S_del, kinds, rb, rk, tab_x, tab_y, tab_n) * x_del
    out[0] = dS


@njit(cache=True)
def _finish_step(Y, g, dt, k1, k2, k3, k4, clamp_tol, counts):
    m = Y.shape[1]
    for c in range(m):
        v = Y[g, c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
        if not (abs(v) < 1e300):
            return False
        if v < 0.0:
            if v >= -clamp_tol:
                v = 0.0
                counts[0] += 1
            else:
                counts[1] += 1
        Y[g + 1, c] = v
    return True


@njit(cache=True)
def rk4_chemostat(Y, F, K, N, t_start, dt, fleft, taus, dh, s0h, E, kinds, rb, rk, tab_x, tab_y, tab_n, clamp_tol):
    """Integrate (S, x_1..x_n); returns (fault_step or -1, clamped, violations)."""
    m = Y.shape[1]
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    counts = np.zeros(2, dtype=np.int64)
    tb = t_start - K * dt
    for s in range(N):
        g = K + s
        t = t_start + s * dt
        _chem_rhs(2 * s, t, Y[g], k1, tb, dt, Y, F, K, fleft, taus, dh, s0h, E, kinds, rb, rk, tab_x, tab_y, tab_n)
        for c in range(m):
            F[g, c] = k1[c]
            tmp[c] = Y[g, c] + 0.5 * dt * k1[c]
        _chem_rhs(2 * s + 1, t + 0.5 * dt, tmp, k2, tb, dt, Y, F, K, fleft, taus, dh, s0h, E, kinds, rb, rk, tab_x, tab_y, tab_n)
        for c in range(m):
            tmp[c] = Y[g, c] + 0.5 * dt * k2[c]
        _chem_rhs(2 * s + 1, t + 0.5 * dt, tmp, k3, tb, dt, Y, F, K, fleft, taus, dh, s0h, E, kinds, rb, rk, tab_x, tab_y, tab_n)
        for c in range(m):
            tmp[c] = Y[g, c] + dt * k3[c]
        _chem_rhs(2 * s + 2, t + dt, tmp, k4, tb, dt, Y, F, K, fleft, taus, dh, s0h, E, kinds, rb, rk, tab_x, tab_y, tab_n)
        if not _finish_step(Y, g, dt, k1, k2, k3, k4, clamp_tol, counts):
            return s, counts[0], counts[1]
    _chem_rhs(2 * N, t_start + N * dt, Y[K + N], k1, tb, dt, Y, F, K, fleft, taus, dh, s0h, E, kinds, rb, rk, tab_x, tab_y, tab_n)
    for c in range(m):
        F[K + N, c] = k1[c]
    return -1, counts[0], counts[1]


@njit(cache=True)
def _linear_rhs(j, t, z, out, tb, dt, Y, F, K, fleft, taus, dh, C):
    n = taus.shape[0]
    for i in range(n):
        if taus[i] > 0.0:
            u_del = dense(t - taus[i], tb, dt, Y, F, K, fleft, i)
        else:
            u_del = z[i]
        out[i] = -dh[j] * z[i] + C[i, j] * u_del


@njit(cache=True)
def rk4_linear(Y, F, K, N, t_start, dt, fleft, taus, dh, C, clamp_tol):
    """Decoupled scalar linear DDEs ``u_i' = -d u_i + C_i(t) u_i(t - tau_i)``."""
    m = Y.shape[1]
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    counts = np.zeros(2, dtype=np.int64)
    tb = t_start - K * dt
    for s in range(N):
        g = K + s
        t = t_start + s * dt
        _linear_rhs(2 * s, t, Y[g], k1, tb, dt, Y, F, K, fleft, taus, dh, C)
        for c in range(m):
            F[g, c] = k1[c]
            tmp[c] = Y[g, c] + 0.5 * dt * k1[c]
        _linear_rhs(2 * s + 1, t + 0.5 * dt, tmp, k2, tb, dt, Y, F, K, fleft, taus, dh, C)
        for c in range(m):
            tmp[c] = Y[g, c] + 0.5 * dt * k2[c]
        _linear_rhs(2 * s + 1, t + 0.5 * dt, tmp, k3, tb, dt, Y, F, K, fleft, taus, dh, C)
        for c in range(m):
            tmp[c] = Y[g, c] + dt * k3[c]
        _linear_rhs(2 * s + 2, t + dt, tmp, k4, tb, dt, Y, F, K, fleft, taus, dh, C)
        if not _finish_step(Y, g, dt, k1, k2, k3, k4, clamp_tol, counts):
            return s, counts[0], counts[1]
    _linear_rhs(2 * N, t_start + N * dt, Y[K + N], k1, tb, dt, Y, F, K, fleft, taus, dh, C)
    for c in range(m):
        F[K + N, c] = k1[c]
    return -1, counts[0], counts[1]


def encode_responses(responses):
    """Pack ResponseFn objects into the arrays the kernels read."""
    n = len(responses)
    width = max([len(p.breakpoints) for p in responses if p.kind == "table"] + [1])
    kinds = np.zeros(n, dtype=np.int64)
    rb = np.zeros(n)
    rk = np.zeros(n)
    tab_x = np.zeros((n, width))
    tab_y = np.zeros((n, width))
    tab_n = np.ones(n, dtype=np.int64)
    for i, p in enumerate(responses):
        if p.kind == "michaelis_menten":
            kinds[i], rb[i], rk[i] = MICHAELIS_MENTEN, p.b, p.k
        elif p.kind == "linear":
            kinds[i], rb[i] = LINEAR, p.b
        else:
            kinds[i] = TABLE
            pts = np.array(p.breakpoints)
            tab_n[i] = len(pts)
            tab_x[i, : len(pts)] = pts[:, 0]
            tab_y[i, : len(pts)] = pts[:, 1]
    return kinds, rb, rk, tab_x, tab_y, tab_n
