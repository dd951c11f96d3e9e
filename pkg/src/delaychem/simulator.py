"""Forward integration of the full delay system by the method of steps.

The scheme is classical fixed-step RK4; delayed arguments are read from a
cubic Hermite interpolant of the already computed solution (node values and
node slopes), so every stage of every step sees a C^1 history.  The heavy
loop lives in :mod:`delaychem._kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import _kernels
from .model import ChemostatModel, PeriodicFn, periodic_min_max
from .washout import WashoutSolution

CLAMP_TOL = 1e-12
DEFAULT_STEPS_PER_PERIOD = 2048


class IntegrationError(RuntimeError):
    """Non-finite state during integration; ``t`` is the start of the failing step."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (at t = {t:.10g})")
        self.t = t


@dataclass(frozen=True, eq=False)
class History:
    """Initial data ``(S, x_1..x_n)`` on ``[t_start - tau, t_start]``.

    Built from a constant vector, a callable, or node samples (values and,
    optionally, slopes).  The callable form returns an ``(len(t), n + 1)`` array.
    """

    t_start: float = 0.0
    constant: np.ndarray | None = None
    func: Callable | None = None
    times: np.ndarray | None = None
    values: np.ndarray | None = None
    slopes: np.ndarray | None = None
    _spline: object = field(default=None, repr=False)

    @classmethod
    def constant_state(cls, state, t_start: float = 0.0) -> "History":
        return cls(t_start=t_start, constant=np.asarray(state, dtype=float))

    @classmethod
    def from_function(cls, func: Callable, t_start: float = 0.0) -> "History":
        return cls(t_start=t_start, func=func)

    @classmethod
    def from_samples(cls, times, values, slopes=None) -> "History":
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("history sample times must be strictly increasing (at least two)")
        if slopes is None:
            slopes = np.gradient(values, times, axis=0, edge_order=2 if len(times) > 2 else 1)
        slopes = np.asarray(slopes, dtype=float).reshape(values.shape)
        spline = CubicHermiteSpline(times, values, slopes, axis=0, extrapolate=True)
        return cls(t_start=float(times[-1]), times=times, values=values, slopes=slopes, _spline=spline)

    @classmethod
    def from_trajectory(cls, traj: "Trajectory", span: float) -> "History":
        """The last ``span`` time units of ``traj`` as history for a continuation run."""
        keep = int(math.ceil(span / traj.dt - 1e-9)) + 3
        lo = max(0, traj.Y.shape[0] - keep)
        times = traj.tb + traj.dt * np.arange(lo, traj.Y.shape[0])
        return cls.from_samples(times, traj.Y[lo:], traj.F[lo:])

    def dim(self) -> int | None:
        if self.constant is not None:
            return len(self.constant)
        if self.values is not None:
            return self.values.shape[1]
        return None

    def sample(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Values and slopes at times ``t`` (arrays of shape ``(len(t), n + 1)``)."""
        t = np.asarray(t, dtype=float)
        if self.constant is not None:
            vals = np.broadcast_to(self.constant, (len(t), len(self.constant))).copy()
            return vals, np.zeros_like(vals)
        if self._spline is not None:
            # padding nodes before the sampled window are never read for values
            t = np.clip(t, self.times[0], self.times[-1])
            return self._spline(t), self._spline(t, 1)
        vals = np.atleast_2d(np.asarray(self.func(t), dtype=float))
        if vals.shape[0] != len(t):
            vals = vals.T
        eps = 1e-6
        dv = (np.asarray(self.func(t + eps), dtype=float) - np.asarray(self.func(t - eps), dtype=float)) / (2 * eps)
        dv = np.atleast_2d(dv)
        if dv.shape[0] != len(t):
            dv = dv.T
        return vals, dv

    def at_start(self) -> np.ndarray:
        return self.sample(np.array([self.t_start]))[0][0]

    def in_cone(self, span: float, samples: int = 256) -> bool:
        """Nonnegative on ``[t_start - span, t_start]`` (the cone C+)."""
        t = self.t_start - span * np.linspace(0, 1, samples)
        return bool(np.all(self.sample(t)[0] >= 0))

    def in_positive_cone(self, span: float, samples: int = 256) -> bool:
        """In C+ with every species strictly positive at the start time."""
        return self.in_cone(span, samples) and bool(np.all(self.at_start()[1:] > 0))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense output of a method-of-steps run.

    ``Y``/``F`` hold node values and slopes on the global grid that includes the
    history nodes; index ``K`` is ``t_start``.  ``fleft`` is the history slope at
    ``t_start`` (the derivative may jump there).  ``breaks`` are the first
    propagated breakpoints ``t_start + tau_i``, where second derivatives jump;
    a cell straddling one is evaluated with the neighbouring cell's cubic on
    the same side so the dense output keeps its order there.
    """

    t_start: float
    dt: float
    K: int
    Y: np.ndarray
    F: np.ndarray
    fleft: np.ndarray
    clamped: int = 0
    violations: int = 0
    labels: tuple = ()
    breaks: tuple = ()

    @property
    def tb(self) -> float:
        return self.t_start - self.K * self.dt

    @property
    def steps(self) -> int:
        return self.Y.shape[0] - 1 - self.K

    @property
    def t(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.steps + 1)

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt * self.steps

    @property
    def states(self) -> np.ndarray:
        return self.Y[self.K:]

    @property
    def S(self) -> np.ndarray:
        return self.Y[self.K:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.Y[self.K:, 1:]

    def __call__(self, t) -> np.ndarray:
        """Hermite dense output at times ``t``, shape ``(len(t), components)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u = (t - self.tb) / self.dt
        near = np.rint(u)
        u = np.where(np.abs(u - near) < 1e-9, near, u)
        last = self.Y.shape[0] - 2
        g = np.clip(np.floor(u).astype(np.int64), 0, last)
        for b in self.breaks:
            ub = (b - self.tb) / self.dt
            c = int(math.floor(ub))
            if ub - c < 1e-9 or c + 1 - ub < 1e-9 or c - 1 < self.K or c + 1 > last:
                continue
            inside = g == c
            g = np.where(inside & (u < ub), c - 1, np.where(inside, c + 1, g))
        th = (u - g)[:, None]
        m0 = self.F[g]
        m1 = self.F[g + 1].copy()
        at_kink = g + 1 == self.K
        m1[at_kink] = self.fleft
        th2, th3 = th * th, th * th * th
        return ((2 * th3 - 3 * th2 + 1) * self.Y[g] + (th3 - 2 * th2 + th) * self.dt * m0
                + (-2 * th3 + 3 * th2) * self.Y[g + 1] + (th3 - th2) * self.dt * m1)

    def window(self, t0: float, t1: float) -> tuple[np.ndarray, np.ndarray]:
        """Node times and states in ``[t0, t1]``."""
        t = self.t
        sel = (t >= t0 - 1e-9 * self.dt) & (t <= t1 + 1e-9 * self.dt)
        return t[sel], self.states[sel]

    def last_period(self, omega: float, M: int) -> tuple[np.ndarray, np.ndarray]:
        """States at the phases ``j omega / M`` within the last period ``(t_end - omega, t_end]``.

        Returns ``(phases, states)`` so rows line up with periodic-grid nodes.
        """
        phase = omega / M * np.arange(M)
        t = phase + omega * np.floor((self.t_end - phase) / omega)
        return phase, self(t)


def _breaks(t_start: float, taus) -> tuple:
    return tuple(sorted({t_start + float(tau) for tau in taus if tau > 0}))


def default_dt(model: ChemostatModel) -> float:
    dt = model.omega / DEFAULT_STEPS_PER_PERIOD
    positive = model.taus[model.taus > 0] if model.n else np.array([])
    if positive.size:
        while dt >= positive.min() / 4:
            dt /= 2
    return dt


def _check_dt(model: ChemostatModel, dt: float):
    if not dt > 0:
        raise ValueError("dt must be positive")
    positive = model.taus[model.taus > 0] if model.n else np.array([])
    if positive.size and dt >= positive.min() / 4:
        raise ValueError(f"delay under-resolved: dt = {dt:g} must be below min positive tau / 4 = {positive.min() / 4:g}")


def _grid_setup(init: History, span: float, t_end: float, dt: float, m: int):
    t_start = init.t_start
    if not t_end > t_start:
        raise ValueError("t_end must exceed the history start time")
    N = int(math.ceil((t_end - t_start) / dt - 1e-9))
    K = int(math.ceil(span / dt - 1e-9)) + 2
    t_hist = t_start + dt * np.arange(-K, 1)
    values, slopes = init.sample(t_hist)
    if values.shape[1] != m:
        raise ValueError(f"history has {values.shape[1]} components, model needs {m}")
    Y = np.zeros((K + N + 1, m))
    F = np.zeros((K + N + 1, m))
    Y[: K + 1] = values
    F[:K] = slopes[:K]
    fleft = np.ascontiguousarray(slopes[K])
    half = t_start + 0.5 * dt * np.arange(2 * N + 1)
    return N, K, Y, F, fleft, half


def simulate(model: ChemostatModel, init: History, t_end: float, dt: float | None = None) -> Trajectory:
    """Integrate ``(S, x_1..x_n)`` from ``init`` up to ``t_end`` with step ``dt``.

    The step count is rounded up so the last node is at or just past ``t_end``.
    """
    dt = default_dt(model) if dt is None else float(dt)
    _check_dt(model, dt)
    m = model.n + 1
    N, K, Y, F, fleft, half = _grid_setup(init, model.tau, t_end, dt, m)
    head = Y[: K + 1]
    if np.any(head < -CLAMP_TOL):
        raise ValueError("history leaves the nonnegative cone")
    head[head < 0] = 0.0
    taus = model.taus if model.n else np.zeros(0)
    dh = np.asarray(model.d(half), dtype=float)
    s0h = np.asarray(model.s0(half), dtype=float)
    Dh = model.D(half)
    E = np.array([np.exp(-(Dh - model.D(half - tau))) for tau in taus]).reshape(len(taus), len(half))
    codes = _kernels.encode_responses([sp.response for sp in model.species])
    fault, clamped, violations = _kernels.rk4_chemostat(
        Y, F, K, N, init.t_start, dt, fleft, taus, dh, s0h, E, *codes, CLAMP_TOL)
    if fault >= 0:
        raise IntegrationError("non-finite state", init.t_start + fault * dt)
    labels = ("S",) + tuple(f"x{i + 1}" for i in range(model.n))
    return Trajectory(init.t_start, dt, K, Y, F, fleft, int(clamped), int(violations), labels,
                      _breaks(init.t_start, taus))


def simulate_linear_comparison(model: ChemostatModel, washout: WashoutSolution, init: History,
                               t_end: float, dt: float | None = None) -> Trajectory:
    """Scalar linear DDEs ``u_i' = -d u_i + e^{-int_{t-tau_i}^t d} p_i(y*(t - tau_i)) u_i(t - tau_i)``.

    ``init`` carries the species components only (n columns); these dominate
    the species of the full system from the same data.
    """
    dt = default_dt(model) if dt is None else float(dt)
    _check_dt(model, dt)
    n = model.n
    N, K, Y, F, fleft, half = _grid_setup(init, model.tau, t_end, dt, n)
    taus = model.taus
    dh = np.asarray(model.d(half), dtype=float)
    Dh = model.D(half)
    C = np.array([np.exp(-(Dh - model.D(half - tau))) * model.response(i)(washout(half - tau))
                  for i, tau in enumerate(taus)])
    fault, clamped, violations = _kernels.rk4_linear(Y, F, K, N, init.t_start, dt, fleft, taus, dh, C, CLAMP_TOL)
    if fault >= 0:
        raise IntegrationError("non-finite state", init.t_start + fault * dt)
    return Trajectory(init.t_start, dt, K, Y, F, fleft, int(clamped), int(violations),
                      tuple(f"u{i + 1}" for i in range(n)), _breaks(init.t_start, taus))


@dataclass(frozen=True)
class ConservationSeries:
    t: np.ndarray
    y: np.ndarray
    residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.residual.max()) if self.residual.size else 0.0


def conservation_series(model: ChemostatModel, traj: Trajectory) -> ConservationSeries:
    """``y(t) = S(t) + sum_i e^{int_t^{t+tau_i} d} x_i(t + tau_i)`` and its ODE defect.

    Restricted to ``t <= t_end - tau`` so the advanced reads stay inside the run.
    """
    tau = model.tau
    if traj.t_end - traj.t_start < tau + 3 * traj.dt:
        raise ValueError("trajectory is too short for the delay span")
    t = traj.t
    t = t[t <= traj.t_end - tau + 1e-9 * traj.dt]
    y = traj(t)[:, 0].copy()
    for i, tau_i in enumerate(model.taus):
        y += model.exp_int_d(t, t + tau_i) * traj(t + tau_i)[:, i + 1]
    dy = np.gradient(y, traj.dt, edge_order=2)
    residual = np.abs(dy - model.d(t) * (model.s0(t) - y))
    return ConservationSeries(t, y, residual)


def asymptotic_summary(traj: Trajectory, window: float) -> list[tuple[float, float]]:
    """Per-component (min, max) over the trailing ``window`` of the run."""
    if window > traj.t_end - traj.t_start + 1e-12:
        raise ValueError("window longer than the trajectory")
    _, states = traj.window(traj.t_end - window, traj.t_end)
    return [(float(states[:, c].min()), float(states[:, c].max())) for c in range(states.shape[1])]


def dissipative_limits(model: ChemostatModel) -> list[float]:
    """Bounds on limsup: ``S <= max S0`` and ``x_i <= e^{-min d tau_i} max S0``."""
    _, s0_max = periodic_min_max(model.s0)
    d_min, _ = periodic_min_max(model.d)
    return [s0_max] + [s0_max * math.exp(-d_min * tau) for tau in model.taus]


def periodic_extension(values: np.ndarray, omega: float) -> PeriodicFn:
    """Wrap one period of node samples (excluding the endpoint) as a periodic function."""
    return PeriodicFn.from_samples(np.asarray(values, dtype=float), omega)
