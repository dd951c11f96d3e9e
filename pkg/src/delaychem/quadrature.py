"""Quadrature on the periodic grid.

The workhorse is :func:`periodic_response`: the unique omega-periodic solution of
``z' = -d(t) z + f(t)`` sampled on the grid.  It is the same object as the
forward-window integral

    z(t) = (e^{D(omega)} - 1)^{-1} int_t^{t+omega} e^{int_t^s d} f(s) ds,

evaluated by prefix sums of the cell integrals ``int e^{-(D(t_{k+1}) - D(s))} f(s) ds``
(composite Simpson using cell midpoints, or trapezoid), which never forms
``e^{D}`` and so cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

from .model import ChemostatModel, PeriodicFn, QuadratureGrid


@dataclass(frozen=True)
class GridSamples:
    """Nodes ``t_k = k h`` (k = 0..M) and cell midpoints for one period."""

    omega: float
    M: int
    rule: str

    @classmethod
    def for_model(cls, model: ChemostatModel, grid: QuadratureGrid | None = None) -> "GridSamples":
        grid = grid or QuadratureGrid()
        return cls(model.omega, grid.points_per_period, grid.rule)

    @property
    def h(self) -> float:
        return self.omega / self.M

    @property
    def nodes(self) -> np.ndarray:
        """M nodes on [0, omega)."""
        return self.h * np.arange(self.M)

    @property
    def closed_nodes(self) -> np.ndarray:
        """M + 1 nodes on [0, omega]."""
        return self.h * np.arange(self.M + 1)

    @property
    def mids(self) -> np.ndarray:
        return self.h * (np.arange(self.M) + 0.5)


@njit(cache=True)
def _cell_recursion(a, g, decay_period):
    m = a.shape[0]
    z = np.empty(m + 1)
    z[0] = 0.0
    for k in range(m):
        z[k + 1] = a[k] * z[k] + g[k]
    z0 = z[m] / (1.0 - decay_period)
    # second sweep from the periodic initial value
    z[0] = z0
    for k in range(m):
        z[k + 1] = a[k] * z[k] + g[k]
    return z[:m]


def cell_weights(D_nodes: np.ndarray, D_mid: np.ndarray | None, h: float, rule: str):
    """Decay factors and quadrature weights for the cell integrals.

    ``D_nodes`` has M + 1 entries (the last is ``D(omega)``).  Returns
    ``(a, w_left, w_mid, w_right)`` with ``a_k = e^{-(D_{k+1}-D_k)}``.
    """
    a = np.exp(-(D_nodes[1:] - D_nodes[:-1]))
    if rule == "simpson":
        w_mid = (4.0 * h / 6.0) * np.exp(-(D_nodes[1:] - D_mid))
        return a, (h / 6.0) * a, w_mid, np.full_like(a, h / 6.0)
    return a, 0.5 * h * a, None, np.full_like(a, 0.5 * h)


def periodic_response(weights, decay_period: float, f_nodes: np.ndarray, f_mid: np.ndarray | None) -> np.ndarray:
    """Periodic solution of ``z' = -d z + f`` at the M nodes.

    ``f_nodes`` has M entries (wrapping), ``f_mid`` M entries (Simpson only).
    Works on the last axis so several right-hand sides can be solved at once.
    """
    a, wl, wm, wr = weights
    f_right = np.roll(f_nodes, -1, axis=-1)
    g = wl * f_nodes + wr * f_right
    if wm is not None:
        g = g + wm * f_mid
    if g.ndim == 1:
        return _cell_recursion(a, g, decay_period)
    return np.stack([_cell_recursion(a, row, decay_period) for row in g])


class PeriodicSolver:
    """Cached cell weights for one model and grid."""

    def __init__(self, model: ChemostatModel, grid: QuadratureGrid | None = None):
        self.model = model
        self.grid = GridSamples.for_model(model, grid)
        h = self.grid.h
        self.D_nodes = model.D(self.grid.closed_nodes)
        self.D_mid = model.D(self.grid.mids)
        self.D_omega = model.D_omega
        self.decay_period = float(np.exp(-self.D_omega))
        self.weights = cell_weights(self.D_nodes, self.D_mid if self.grid.rule == "simpson" else None, h, self.grid.rule)

    def solve_samples(self, f_nodes, f_mid=None) -> np.ndarray:
        return periodic_response(self.weights, self.decay_period, f_nodes, f_mid)

    def solve(self, forcing) -> PeriodicFn:
        """Periodic solution for a callable forcing, as a Hermite grid function.

        Node slopes are exact from the equation, ``z' = -d z + f``.
        """
        t = self.grid.nodes
        f_nodes = np.asarray(forcing(t), dtype=float)
        f_mid = np.asarray(forcing(self.grid.mids), dtype=float) if self.grid.rule == "simpson" else None
        z = self.solve_samples(f_nodes, f_mid)
        slopes = -self.model.d(t) * z + f_nodes
        return PeriodicFn.from_samples(z, self.model.omega, slopes)


def periodic_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order centred difference of periodic samples along the last axis."""
    v = values
    return (-np.roll(v, -2, -1) + 8 * np.roll(v, -1, -1) - 8 * np.roll(v, 1, -1) + np.roll(v, 2, -1)) / (12.0 * h)


def grid_minimum(fn, omega: float, M: int, refine: bool = True) -> tuple[float, float]:
    """Minimum of a periodic callable: sample M nodes, then refine around the argmin."""
    t = omega * np.arange(M) / M
    v = np.asarray(fn(t), dtype=float)
    k = int(np.argmin(v))
    best, t_best = float(v[k]), float(t[k])
    if refine:
        h = omega / M
        res = minimize_scalar(lambda s: float(fn(np.array([s]))[0]), bounds=(t[k] - h, t[k] + h),
                              method="bounded", options={"xatol": 1e-10 * omega})
        if res.fun < best:
            best, t_best = float(res.fun), float(np.mod(res.x, omega))
    return best, t_best


def grid_maximum(fn, omega: float, M: int, refine: bool = True) -> tuple[float, float]:
    value, t = grid_minimum(lambda s: -np.asarray(fn(s)), omega, M, refine)
    return -value, t


def period_integral(fn, omega: float, M: int) -> float:
    """Composite Simpson over one period, mid-cell samples (periodic integrand)."""
    h = omega / M
    t = h * np.arange(M)
    return float(h / 6.0 * (2.0 * np.sum(fn(t)) + 4.0 * np.sum(fn(t + 0.5 * h))))
