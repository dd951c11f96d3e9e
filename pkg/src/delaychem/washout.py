"""The periodic washout level y*(t): periodic solution of y' = d(t)(S0(t) - y)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ChemostatModel, PeriodicFn, QuadratureGrid, periodic_min_max
from .quadrature import GridSamples, PeriodicSolver, periodic_derivative


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class WashoutSolution:
    y_star: PeriodicFn
    y0: float
    min: float
    max: float

    def __call__(self, t):
        return self.y_star(t)

    @property
    def nodes(self) -> np.ndarray:
        return self.y_star.nodes

    @property
    def values(self) -> np.ndarray:
        return self.y_star.values


def _require_positive_d(model: ChemostatModel, samples: int = 4096):
    t = model.omega * np.arange(samples) / samples
    dv = model.d(t)
    if np.any(dv <= 0):
        k = int(np.argmin(dv))
        raise ValidationError(f"washout rate d must be positive; d({t[k]:.6g}) = {dv[k]:.6g}")


def washout_initial(model: ChemostatModel, grid: QuadratureGrid | None = None) -> float:
    """``y*(0) = (e^{D(omega)} - 1)^{-1} int_0^omega d(s) e^{D(s)} S0(s) ds``."""
    _require_positive_d(model)
    gs = GridSamples.for_model(model, grid)
    # scaled by e^{-D(omega)} throughout so large D(omega) cannot overflow
    D_nodes = model.D(gs.closed_nodes) - model.D_omega
    D_mid = model.D(gs.mids) - model.D_omega
    t, tm = gs.closed_nodes, gs.mids
    f = model.d(t) * model.s0(t) * np.exp(D_nodes)
    h = gs.h
    if gs.rule == "simpson":
        fm = model.d(tm) * model.s0(tm) * np.exp(D_mid)
        integral = h / 6.0 * (np.sum(f[:-1] + f[1:]) + 4.0 * np.sum(fm))
    else:
        integral = 0.5 * h * np.sum(f[:-1] + f[1:])
    return float(integral / -math.expm1(-model.D_omega))


def washout_solution(model: ChemostatModel, grid: QuadratureGrid | None = None) -> WashoutSolution:
    """Materialise y* on the grid (exact node slopes, cubic Hermite in between)."""
    _require_positive_d(model)
    solver = PeriodicSolver(model, grid)
    y_star = solver.solve(lambda t: model.d(t) * model.s0(t))
    lo, hi = periodic_min_max(y_star)
    return WashoutSolution(y_star, float(y_star.values[0]), lo, hi)


def washout_residual(model: ChemostatModel, ws: WashoutSolution) -> np.ndarray:
    """``|y*' - d (S0 - y*)|`` at the grid nodes, derivative by centred differences."""
    t = ws.nodes
    h = model.omega / len(t)
    dy = periodic_derivative(ws.values, h)
    return np.abs(dy - model.d(t) * (model.s0(t) - ws.values))


def forward_scalar(model: ChemostatModel, y_init: float, t) -> np.ndarray:
    """Solution of ``y' = d (S0 - y)`` from ``y(0) = y_init`` at the (increasing) times ``t``.

    Used as an independent check of the attraction towards y*: exact propagator
    plus Simpson cell integrals on a fine uniform grid.
    """
    t = np.asarray(t, dtype=float)
    stops = np.concatenate([[0.0], t])
    hmax = model.omega / 2048
    pieces = [np.array([0.0])]
    for t0, t1 in zip(stops[:-1], stops[1:]):
        m = max(1, int(math.ceil((t1 - t0) / hmax)))
        pieces.append(np.linspace(t0, t1, m + 1)[1:])
    nodes = np.concatenate(pieces)
    D_nodes = model.D(nodes)
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    h = np.diff(nodes)
    a = np.exp(-(D_nodes[1:] - D_nodes[:-1]))
    f = model.d(nodes) * model.s0(nodes)
    fm = model.d(mids) * model.s0(mids) * np.exp(-(D_nodes[1:] - model.D(mids)))
    g = h / 6.0 * (a * f[:-1] + 4.0 * fm + f[1:])
    y = np.empty(len(nodes))
    y[0] = y_init
    for k in range(len(nodes) - 1):
        y[k + 1] = a[k] * y[k] + g[k]
    idx = np.cumsum([len(p) for p in pieces]) - 1
    return y[idx[1:]]
