"""Nontrivial periodic solutions: the integral fixed-point operator and shooting.

A periodic candidate ``x = (x_1..x_n)`` eliminates S through the conservation
identity ``S(t) = y*(t) - sum_i e^{int_t^{t+tau_i} d} x_i(t + tau_i)``; each
species then obeys ``x_i' = -d x_i + f_i(t, x)`` with

    f_i(s) = e^{-int_{s-tau_i}^s d} p_i(y*(s - tau_i) - sum_j W_ij(s) x_j(s + tau_j - tau_i)) x_i(s - tau_i),
    W_ij(s) = e^{int_{s-tau_i}^{s+tau_j-tau_i} d}.

The operator maps x to the periodic solutions of those linear equations, so
its fixed points are the periodic orbits.  Advanced and delayed reads wrap
modulo the period.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import NoConvergence, newton_krylov

from .model import ChemostatModel, PeriodicFn, QuadratureGrid, periodic_min_max
from .quadrature import GridSamples, PeriodicSolver, periodic_derivative
from .simulator import DEFAULT_STEPS_PER_PERIOD, History, simulate
from .washout import WashoutSolution

CONVERGED = "converged"
WASHOUT = "converged-to-washout"
MAX_ITERS = "max-iters"
NOT_CONVERGED = "not-converged"

TRIVIAL_FRACTION = 1e-8


@dataclass(frozen=True, eq=False)
class PeriodicCandidate:
    """n periodic grid functions sampled at ``t_k = k omega / M`` (k < M)."""

    values: np.ndarray
    omega: float
    _fns: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, ndmin=2)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, n: int, M: int, omega: float, c) -> "PeriodicCandidate":
        return cls(np.broadcast_to(np.asarray(c, dtype=float).reshape(-1, 1), (n, M)).copy(), omega)

    @classmethod
    def zeros(cls, n: int, M: int, omega: float) -> "PeriodicCandidate":
        return cls(np.zeros((n, M)), omega)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.omega / self.M * np.arange(self.M)

    def component(self, i: int) -> PeriodicFn:
        if i not in self._fns:
            self._fns[i] = PeriodicFn.from_samples(self.values[i], self.omega)
        return self._fns[i]

    def __call__(self, t) -> np.ndarray:
        """Values at times ``t`` (periodic cubic spline), shape ``(n, len(t))``."""
        return np.stack([self.component(i)(t) for i in range(self.n)])

    @property
    def norm(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def cone_slack(self, sigma: float) -> float:
        """``min_i (min_t x_i - sigma max_t x_i)``; nonnegative inside the cone."""
        return float(np.min(self.values.min(axis=1) - sigma * self.values.max(axis=1)))

    def in_cone(self, sigma: float, slack: float = 1e-12) -> bool:
        return bool(np.all(self.values >= -slack)) and self.cone_slack(sigma) >= -slack


class PhiOperator:
    """The fixed-point operator for one model and nutrient ceiling.

    ``ceiling`` is y* for the full problem; the coexistence cascade passes a
    reduced level instead.  Evaluation points are the grid nodes plus, for
    Simpson, the cell midpoints.
    """

    def __init__(self, model: ChemostatModel, ceiling: PeriodicFn, grid: QuadratureGrid | None = None):
        self.model = model
        self.ceiling = ceiling
        self.grid = GridSamples.for_model(model, grid)
        self.solver = PeriodicSolver(model, grid)
        self.simpson = self.grid.rule == "simpson"
        t = self.grid.nodes
        self.points = np.concatenate([t, self.grid.mids]) if self.simpson else t
        P = self.points
        taus = model.taus
        D = model.D
        DP = D(P)
        self.E = np.array([np.exp(-(DP - D(P - tau))) for tau in taus])
        self.W = np.array([[np.exp(D(P + tj - ti) - D(P - ti)) for tj in taus] for ti in taus])
        self.ceiling_delayed = np.array([ceiling(P - ti) for ti in taus])
        self.responses = [sp.response for sp in model.species]

    @property
    def M(self) -> int:
        return self.grid.M

    def forcing(self, x: PeriodicCandidate) -> np.ndarray:
        """``f_i`` at the evaluation points, shape ``(n, len(points))``."""
        taus = self.model.taus
        P = self.points
        n = self.model.n
        out = np.empty((n, len(P)))
        for i in range(n):
            arg = self.ceiling_delayed[i].copy()
            for j in range(n):
                arg -= self.W[i, j] * x.component(j)(P + taus[j] - taus[i])
            # spline reads of nonnegative data may dip below zero between nodes
            lagged = np.maximum(x.component(i)(P - taus[i]), 0.0)
            out[i] = self.E[i] * self.responses[i](arg) * lagged
        return out

    def __call__(self, x: PeriodicCandidate) -> PeriodicCandidate:
        if not x.values.any():
            return PeriodicCandidate.zeros(x.n, x.M, x.omega)
        f = self.forcing(x)
        M = self.M
        if self.simpson:
            z = self.solver.solve_samples(f[:, :M], f[:, M:])
        else:
            z = self.solver.solve_samples(f, None)
        return PeriodicCandidate(z, x.omega)

    def residual(self, x: PeriodicCandidate) -> float:
        return float(np.abs(self(x).values - x.values).max())

    def fde_defect(self, x: PeriodicCandidate) -> np.ndarray:
        """``|x_i' + d x_i - f_i|`` at the nodes (fourth-order centred derivative)."""
        f = self.forcing(x)[:, : self.M]
        h = self.grid.h
        dx = periodic_derivative(x.values, h)
        return np.abs(dx + self.model.d(self.grid.nodes) * x.values - f)


def phi_apply(model: ChemostatModel, washout: WashoutSolution, x: PeriodicCandidate,
              grid: QuadratureGrid | None = None) -> PeriodicCandidate:
    return PhiOperator(model, washout.y_star, _grid_for(x, grid))(x)


def fde_residual(model: ChemostatModel, washout: WashoutSolution, x: PeriodicCandidate,
                 grid: QuadratureGrid | None = None) -> float:
    defect = PhiOperator(model, washout.y_star, _grid_for(x, grid)).fde_defect(x)
    return float(defect.max()) if defect.size else 0.0


def reconstruct_S(model: ChemostatModel, washout: WashoutSolution | PeriodicFn, x: PeriodicCandidate) -> PeriodicFn:
    """``S*(t) = y*(t) - sum_i e^{int_t^{t+tau_i} d} x_i(t + tau_i)`` on the grid of ``x``."""
    ceiling = washout.y_star if isinstance(washout, WashoutSolution) else washout
    t = x.nodes
    s = np.asarray(ceiling(t), dtype=float).copy()
    for i, tau in enumerate(model.taus):
        s -= model.exp_int_d(t, t + tau) * x.component(i)(t + tau)
    return PeriodicFn.from_samples(s, model.omega)


def s_star_flags(s_star: PeriodicFn, ceiling: PeriodicFn) -> tuple[int, int]:
    """Number of nodes with ``S* <= 0`` and with ``S* >= ceiling``."""
    t = s_star.nodes
    s = s_star.values
    return int(np.sum(s <= 0)), int(np.sum(s >= ceiling(t)))


def _grid_for(x: PeriodicCandidate, grid: QuadratureGrid | None) -> QuadratureGrid:
    if grid is not None and grid.points_per_period != x.M:
        raise ValueError(f"candidate has {x.M} nodes, grid has {grid.points_per_period}")
    rule = grid.rule if grid is not None else ("simpson" if x.M % 2 == 0 else "trapezoid")
    return QuadratureGrid(x.M, rule)


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 2000
    theta: float = 0.5
    depth: int = 3
    residual_tol: float = 1e-8
    init: object = None  # None (multi-start), a constant, or a PeriodicCandidate
    seeds: tuple = (0.1, 0.5, 0.9)
    polish: bool = True

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.max_iters < 1 or self.depth < 0:
            raise ValueError("max_iters must be >= 1 and depth >= 0")


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    x_star: PeriodicCandidate
    s_star: PeriodicFn
    phi_residual: float
    fde_residual: float
    positivity: tuple
    cone_slack: float
    image_cone_slack: float
    s_nonpositive: int = 0
    s_above_ceiling: int = 0
    method: str = "phi"

    @property
    def nontrivial(self) -> bool:
        return self.x_star.norm > 0 and min(self.positivity) > 0

    def table(self) -> np.ndarray:
        """Rows ``(t, S*, x_1..x_n)`` at the grid nodes."""
        t = self.x_star.nodes
        return np.column_stack([t, self.s_star.values, self.x_star.values.T])


@dataclass(frozen=True, eq=False)
class SolveResult:
    status: str
    orbit: PeriodicOrbit | None
    residuals: tuple = ()
    iterations: int = 0
    start: object = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == CONVERGED


def trivial_threshold(model: ChemostatModel) -> float:
    return TRIVIAL_FRACTION * periodic_min_max(model.s0)[1]


def _seed_scale(model: ChemostatModel) -> np.ndarray:
    """Per-species dissipative bounds ``max S0 e^{-min d tau_i}``."""
    s0_max = periodic_min_max(model.s0)[1]
    d_min = periodic_min_max(model.d)[0]
    return s0_max * np.exp(-d_min * model.taus)


def _anderson(op: PhiOperator, x0: np.ndarray, opts: SolveOptions, threshold: float, patience: int = 25):
    """Damped iteration with Anderson mixing of the last ``depth`` residuals.

    When the residual stops improving for ``patience`` sweeps (or blows up) the
    damping is halved and the mixing restarts from the best iterate so far.
    Returns (status, x, residual history).  Iterates are projected onto x >= 0.
    """
    omega = op.model.omega
    x = np.maximum(x0, 0.0)
    theta = opts.theta
    dxs: deque = deque(maxlen=opts.depth)
    dgs: deque = deque(maxlen=opts.depth)
    prev = None
    history = []
    best_res, best_x, stall = math.inf, x, 0
    for _ in range(opts.max_iters):
        cand = PeriodicCandidate(x, omega)
        g = op(cand).values - x
        res = float(np.abs(g).max())
        history.append(res)
        norm = float(np.abs(x).max())
        if math.isfinite(res) and res < opts.residual_tol:
            if norm < threshold:
                return WASHOUT, x, history
            if res <= 1e-3 * norm:
                return CONVERGED, x, history
        elif norm < threshold and res < threshold:
            return WASHOUT, x, history
        if res < 0.99 * best_res:
            best_res, best_x, stall = res, x, 0
        else:
            stall += 1
        if not math.isfinite(res) or stall >= patience or res > 1e3 * best_res:
            theta *= 0.5
            if theta < 1e-6:
                break
            x, prev, stall = best_x, None, 0
            dxs.clear()
            dgs.clear()
            continue
        gv = g.ravel()
        if prev is not None and opts.depth > 0:
            dxs.append(x.ravel() - prev[0])
            dgs.append(gv - prev[1])
        prev = (x.ravel().copy(), gv.copy())
        step = theta * gv
        if dgs:
            dG = np.column_stack(dgs)
            dX = np.column_stack(dxs)
            gamma, *_ = np.linalg.lstsq(dG, gv, rcond=None)
            step = step - (dX + theta * dG) @ gamma
        x = np.maximum(x + step.reshape(x.shape), 0.0)
    return MAX_ITERS, best_x, history


def _polish(op: PhiOperator, x: np.ndarray, tol: float):
    """Newton-Krylov on ``Phi x - x`` from the best damped iterate."""
    omega = op.model.omega
    shape = x.shape

    def F(v):
        v = v.reshape(shape)
        return (op(PeriodicCandidate(v, omega)).values - v).ravel()

    try:
        sol = newton_krylov(F, x.ravel(), f_tol=0.5 * tol, maxiter=60, method="lgmres")
    except (NoConvergence, ValueError, np.linalg.LinAlgError) as exc:
        sol = exc.args[0] if isinstance(exc, NoConvergence) and exc.args else None
        if sol is None:
            return None
    sol = np.asarray(sol).reshape(shape)
    if np.any(sol < -tol):
        return None
    return np.maximum(sol, 0.0)


def _make_orbit(op: PhiOperator, x: np.ndarray, sigma: float, method: str = "phi") -> PeriodicOrbit:
    cand = PeriodicCandidate(x, op.model.omega)
    image = op(cand)
    phi_res = float(np.abs(image.values - cand.values).max())
    defect = op.fde_defect(cand)
    s_star = reconstruct_S(op.model, op.ceiling, cand)
    nonpos, above = s_star_flags(s_star, op.ceiling)
    return PeriodicOrbit(
        x_star=cand,
        s_star=s_star,
        phi_residual=phi_res,
        fde_residual=float(defect.max()) if defect.size else 0.0,
        positivity=tuple(float(v) for v in cand.values.min(axis=1)),
        cone_slack=cand.cone_slack(sigma),
        image_cone_slack=image.cone_slack(sigma),
        s_nonpositive=nonpos,
        s_above_ceiling=above,
        method=method,
    )


def _solve(op: PhiOperator, opts: SolveOptions) -> SolveResult:
    model = op.model
    M = op.M
    threshold = trivial_threshold(model)
    sigma = math.exp(-model.D_omega)
    if isinstance(opts.init, PeriodicCandidate):
        starts = [("user", opts.init.values)]
    elif opts.init is not None:
        starts = [(f"constant {float(opts.init):g}", np.full((model.n, M), float(opts.init)))]
    else:
        scale = _seed_scale(model)
        starts = [(f"{s:g} x dissipative bound", np.tile((s * scale)[:, None], (1, M))) for s in opts.seeds]
    all_hist = []
    washouts = 0
    best = None
    for label, x0 in starts:
        if x0.shape != (model.n, M):
            raise ValueError(f"initial candidate has shape {x0.shape}, expected {(model.n, M)}")
        status, x, hist = _anderson(op, x0, opts, threshold)
        all_hist.extend(hist)
        if status == MAX_ITERS and opts.polish and float(np.abs(x).max()) >= threshold:
            polished = _polish(op, x, opts.residual_tol)
            if polished is not None:
                res = op.residual(PeriodicCandidate(polished, model.omega))
                all_hist.append(res)
                if res < opts.residual_tol:
                    x = polished
                    norm = float(np.abs(x).max())
                    status = WASHOUT if norm < threshold else CONVERGED
        if status == CONVERGED:
            return SolveResult(CONVERGED, _make_orbit(op, x, sigma), tuple(all_hist), len(all_hist), label)
        if status == WASHOUT:
            washouts += 1
            best = best or (label, x)
        elif best is None or hist and min(hist) < op.residual(PeriodicCandidate(best[1], model.omega)):
            best = (label, x)
    if washouts:
        label, x = best
        zero = np.zeros_like(x)
        return SolveResult(WASHOUT, _make_orbit(op, zero, sigma), tuple(all_hist), len(all_hist), label,
                           "every start converged to the washout solution")
    label, x = best
    return SolveResult(MAX_ITERS, None, tuple(all_hist), len(all_hist), label,
                       f"no convergence; best residual {min(all_hist):.3e}")


def find_fixed_point(model: ChemostatModel, washout: WashoutSolution, opts: SolveOptions | None = None,
                     grid: QuadratureGrid | None = None) -> SolveResult:
    return _solve(PhiOperator(model, washout.y_star, grid), opts or SolveOptions())


def single_species_solve(model: ChemostatModel, ceiling: PeriodicFn, i: int, opts: SolveOptions | None = None,
                         grid: QuadratureGrid | None = None) -> SolveResult:
    """Periodic solution of species ``i`` alone, with ``ceiling`` in place of y*."""
    if not 0 <= i < model.n:
        raise IndexError(f"species index {i} out of range")
    return _solve(PhiOperator(model.restrict([i]), ceiling, grid), opts or SolveOptions())


@dataclass(frozen=True, eq=False)
class ShootResult:
    status: str
    orbit: PeriodicOrbit | None
    distances: tuple
    periods: int
    s_gap: float = math.nan  # sup |S_sim - S_reconstructed| on the last period

    @property
    def ok(self) -> bool:
        return self.status in (CONVERGED, WASHOUT)


def shooting_steps(model: ChemostatModel, steps_per_period: int | None = None) -> int:
    N = steps_per_period or DEFAULT_STEPS_PER_PERIOD
    positive = model.taus[model.taus > 0]
    if steps_per_period is None and positive.size:
        while model.omega / N >= positive.min() / 4:
            N *= 2
    return N


def poincare_shoot(model: ChemostatModel, init: History, n_periods: int = 300, tol: float = 1e-8,
                   steps_per_period: int | None = None, grid: QuadratureGrid | None = None,
                   washout: WashoutSolution | None = None, chunk: int = 10) -> ShootResult:
    """Iterate the period map by forward simulation until consecutive periods agree.

    The distance is the sup over all components and nodes between one period
    of the trajectory and the next.
    """
    from .washout import washout_solution

    grid = grid or QuadratureGrid()
    ws = washout or washout_solution(model, grid)
    omega = model.omega
    N = shooting_steps(model, steps_per_period)
    dt = omega / N
    hist = init
    prev = None
    distances: list[float] = []
    done = 0
    status = MAX_ITERS
    traj = None
    while done < n_periods:
        k = min(chunk, n_periods - done)
        t_end = hist.t_start + k * omega
        traj = simulate(model, hist, t_end, dt)
        states = traj.states
        for p in range(k):
            seg = states[p * N: (p + 1) * N + 1]
            if prev is not None:
                distances.append(float(np.abs(seg - prev).max()))
            prev = seg
        done += k
        if distances and distances[-1] < tol:
            status = CONVERGED
            break
        hist = History.from_trajectory(traj, model.tau)
    M = grid.points_per_period
    _, vals = traj.last_period(omega, M)
    x = np.maximum(vals[:, 1:].T, 0.0)
    op = PhiOperator(model, ws.y_star, grid)
    sigma = math.exp(-model.D_omega)
    if status == CONVERGED and float(np.abs(x).max()) < trivial_threshold(model):
        status = WASHOUT
        x = np.zeros_like(x)
    orbit = _make_orbit(op, x, sigma, method="shoot")
    s_gap = float(np.abs(vals[:, 0] - orbit.s_star.values).max())
    return ShootResult(status, orbit, tuple(distances), done, s_gap)


@dataclass(frozen=True)
class ConeParams:
    sigma: float
    r: float
    R: float
    eps: float = math.nan
    delta: float = math.nan
    note: str = ""

    @property
    def degenerate(self) -> bool:
        return not (self.r < self.R)


def cone_params(model: ChemostatModel, washout: WashoutSolution | None = None,
                grid: QuadratureGrid | None = None, samples: int = 2048) -> ConeParams:
    """Cone constant and the radii of the annulus the fixed point lives in.

    ``r`` comes from a sampled continuity modulus of the responses on
    ``[min S0, max S0]`` against half the smallest existence margin.
    """
    from .conditions import existence_integrals
    from .washout import washout_solution

    sigma = math.exp(-model.D_omega)
    s0_min, s0_max = periodic_min_max(model.s0)
    d_min, d_max = periodic_min_max(model.d)
    min_tau = float(model.taus.min()) if model.n else 0.0
    R = s0_max * math.exp(-d_min * min_tau) / sigma
    if model.n == 0:
        return ConeParams(sigma, math.nan, R, note="no species")
    ws = washout or washout_solution(model, grid)
    target = math.expm1(model.D_omega)
    margins = [F.min() - target for F in existence_integrals(model, ws, grid)]
    margin = min(margins)
    if not margin > 0:
        return ConeParams(sigma, math.nan, R, note=f"existence margin {margin:.3e} <= 0: r undefined")
    delta = 0.5 * margin * d_max / math.expm1(d_max * model.omega)
    xs = np.linspace(s0_min, s0_max, samples)

    def modulus(eps):
        return max(float(np.max(sp.response(xs) - sp.response(xs - eps))) for sp in model.species)

    lo, hi = 0.0, s0_max
    if modulus(hi) < delta:
        eps = hi
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if modulus(mid) < delta:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-14 * s0_max:
                break
        eps = lo
    r = eps * math.exp(-d_max * model.tau) / model.n
    note = "degenerate bracket: r >= R" if not r < R else ""
    return ConeParams(sigma, r, R, eps, delta, note)


def shoot_and_compare(phi: PeriodicOrbit, shoot: PeriodicOrbit) -> float:
    """Sup-norm distance between two orbits' species components (same grid)."""
    return float(np.abs(phi.x_star.values - shoot.x_star.values).max())


def species_orbit_distance(a: PeriodicCandidate, b: PeriodicCandidate, components: Sequence[int] | None = None) -> float:
    idx = list(range(a.n)) if components is None else list(components)
    return float(np.abs(a.values[idx] - b.values[: len(idx)]).max())
