"""Sufficient conditions for extinction, existence, persistence, exclusion and coexistence.

Every checker samples the relevant time function on the quadrature grid,
refines around the worst node and reports ``margin = RHS - LHS`` of the
inequality, so ``margin > 0`` means the condition holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ChemostatModel, PeriodicFn, QuadratureGrid, periodic_min_max, strictly_increasing, validate_model
from .quadrature import GridSamples, PeriodicSolver, grid_maximum, grid_minimum, period_integral
from .report import HOLDS, INCONCLUSIVE, ConditionReport, Entry, verdict_for
from .washout import WashoutSolution

EQ_TOL = 1e-12


def _M(model: ChemostatModel, grid: QuadratureGrid | None) -> int:
    return GridSamples.for_model(model, grid).M


def growth_threshold(model: ChemostatModel, i: int):
    """``G_i(t) = d(t + tau_i) e^{int_t^{t+tau_i} d}``."""
    tau = model.species[i].tau
    return lambda t: model.d(t + tau) * model.exp_int_d(t, t + tau)


def stability_threshold(model: ChemostatModel, i: int):
    """``d(t) e^{int_t^{t+tau_i} d}``."""
    tau = model.species[i].tau
    return lambda t: model.d(t) * model.exp_int_d(t, t + tau)


def lagged_threshold(model: ChemostatModel, i: int):
    """``d(t) e^{int_{t-tau_i}^t d}``."""
    tau = model.species[i].tau
    return lambda t: model.d(t) * model.exp_int_d(t - tau, t)


def _forward_growth(model: ChemostatModel, i: int):
    tau = model.species[i].tau
    return lambda t: model.exp_int_d(t, t + tau)


def _uptake_on(model: ChemostatModel, i: int, level: PeriodicFn):
    p = model.response(i)
    return lambda t: p(level(t))


def check_extinction(model: ChemostatModel, washout: WashoutSolution, grid: QuadratureGrid | None = None) -> ConditionReport:
    """Per-species extinction thresholds and the linear-comparison integrals."""
    M = _M(model, grid)
    omega = model.omega
    report = ConditionReport()
    y = washout.y_star
    for i in range(model.n):
        p_y = _uptake_on(model, i, y)
        G = growth_threshold(model, i)
        A = stability_threshold(model, i)

        m, t_w = grid_minimum(lambda t: G(t) - p_y(t), omega, M)
        report.add(Entry.from_margin("EXT_I", m, species=i, witness_t=t_w, witness_x=float(y(t_w))))

        stab, t_s = grid_minimum(lambda t: A(t) - p_y(t), omega, M)
        report.add(Entry.from_margin("EXT_STAB", stab, species=i, witness_t=t_s, witness_x=float(y(t_s))))

        strict, t_g = grid_maximum(lambda t: A(t) - p_y(t), omega, M)
        gas = strict if stab >= -EQ_TOL else stab
        note = "" if stab >= -EQ_TOL else "threshold inequality violated"
        report.add(Entry.from_margin("EXT_GAS", gas, species=i, witness_t=t_g if stab >= -EQ_TOL else t_s, note=note))

        tau = model.species[i].tau

        def g(t, tau=tau, p_y=p_y):
            return np.exp(-(model.D(t + tau) - model.D(t))) * p_y(t) - model.d(t)

        g_max, t_hi = grid_maximum(g, omega, M)
        g_min, t_lo = grid_minimum(g, omega, M)
        r = period_integral(g, omega, M)
        sign_margin = max(-g_max, g_min)
        constant_sign = sign_margin > EQ_TOL
        if not constant_sign:
            stability = "inconclusive"
        elif r < -EQ_TOL:
            stability = "asymptotically stable"
        elif r > EQ_TOL:
            stability = "unstable"
        else:
            stability = "stable"
        report.add(Entry.from_margin(
            "RI_SIGN", sign_margin, species=i, witness_t=t_hi if -g_max < g_min else t_lo,
            details={"r": r, "integrand_min": g_min, "integrand_max": g_max, "linear_comparison": stability}))
    return report


def existence_integrals(model: ChemostatModel, washout: WashoutSolution, grid: QuadratureGrid | None = None,
                        level: PeriodicFn | None = None) -> list[np.ndarray]:
    """``F_i(t) = int_t^{t+omega} e^{int_{t+tau_i}^s d} p_i(y*(s)) ds`` at the grid nodes."""
    solver = PeriodicSolver(model, grid)
    gs = solver.grid
    level = level or washout.y_star
    scale = math.expm1(model.D_omega)
    out = []
    for i, sp in enumerate(model.species):
        fn = _uptake_on(model, i, level)
        z = solver.solve_samples(fn(gs.nodes), fn(gs.mids) if gs.rule == "simpson" else None)
        t = gs.nodes
        out.append(scale * z * np.exp(-(model.D(t + sp.tau) - model.D(t))))
    return out


def _existence_function(model, washout, grid, i):
    """F_i as a Hermite periodic function (node slopes from its ODE)."""
    solver = PeriodicSolver(model, grid)
    fn = _uptake_on(model, i, washout.y_star)
    z = solver.solve(fn)
    tau = model.species[i].tau
    scale = math.expm1(model.D_omega)
    return lambda t: scale * z(t) * np.exp(-(model.D(t + tau) - model.D(t)))


def check_existence(model: ChemostatModel, washout: WashoutSolution, grid: QuadratureGrid | None = None) -> ConditionReport:
    M = _M(model, grid)
    omega = model.omega
    report = ConditionReport()
    y = washout.y_star
    target = math.expm1(model.D_omega)
    s0_const = model.s0.is_constant
    for i in range(model.n):
        p = model.response(i)
        p_y = _uptake_on(model, i, y)
        G = growth_threshold(model, i)
        growth = _forward_growth(model, i)
        max_growth, t_mg = grid_maximum(growth, omega, M)

        F = _existence_function(model, washout, grid, i)
        F_min, t_F = grid_minimum(F, omega, M)
        mean_p = period_integral(p_y, omega, M) / omega
        mean_G = period_integral(G, omega, M) / omega
        h3 = report.add(Entry.from_margin(
            "H3", F_min - target, species=i, witness_t=t_F,
            details={"integral_min": F_min, "target": target, "mean_uptake": mean_p, "mean_growth_threshold": mean_G}))

        a, t_a = grid_minimum(lambda t: p_y(t) - G(t), omega, M)
        h3a = report.add(Entry.from_margin("H3A", a, species=i, witness_t=t_a, witness_x=float(y(t_a))))

        integral = mean_p * omega
        h3b = report.add(Entry.from_margin("H3B", integral - target * max_growth, species=i, witness_t=t_mg,
                                           details={"uptake_integral": integral}))

        ratio_min, t_c = grid_minimum(lambda t: p_y(t) / model.d(t), omega, M)
        h3c = report.add(Entry.from_margin("H3C", ratio_min - max_growth, species=i, witness_t=t_c))

        for strong in (h3a, h3b, h3c):
            if strong.margin > EQ_TOL and not h3.margin > 0:
                h3.note = (h3.note + "; " if h3.note else "") + f"{strong.condition_id} holds but H3 does not (quadrature)"

        if s0_const:
            c = float(model.s0(np.array([0.0]))[0])
            pc = float(p(c))
            tau = model.species[i].tau

            solver = PeriodicSolver(model, grid)
            gs = solver.grid
            k = lambda t: np.exp(-(model.D(t) - model.D(t - tau)))
            z = solver.solve_samples(k(gs.nodes), k(gs.mids) if gs.rule == "simpson" else None)
            inner = target * z
            j = int(np.argmin(inner))
            report.add(Entry.from_margin("H4", pc * float(inner[j]) - target, species=i, witness_t=float(gs.nodes[j])))
            lag_max, t_l = grid_maximum(lagged_threshold(model, i), omega, M)
            report.add(Entry.from_margin("H4_0", pc - lag_max, species=i, witness_t=t_l))
            report.add(Entry.from_margin("H4_1", pc - target * max_growth / omega, species=i, witness_t=t_mg))
    return report


@dataclass
class PersistenceEstimate:
    m0: float
    h_samples: np.ndarray  # rows (s, h(s))
    b_bound: float | None
    m0_closed: float | None  # the closed-form lower bound as commonly printed
    m0_closed_sqrt: float | None  # same bound built from the washout extrema
    bounds: str = "forcing"
    no_root: bool = False
    conservative: bool = False
    notes: list = field(default_factory=list)

    @property
    def closed_form_consistent(self) -> bool | None:
        if self.m0_closed is None:
            return None
        return self.m0_closed <= self.m0 + 1e-9


def _h_function(model: ChemostatModel, d_val: float, top: float):
    taus = model.taus
    responses = [sp.response for sp in model.species]

    def h(s):
        s = np.asarray(s, dtype=float)
        total = np.zeros_like(s)
        for p, tau in zip(responses, taus):
            total += p(s) * math.exp(-d_val * tau)
        return d_val * s + (top - s) * total

    return h


def _leftmost_root(fn, lo: float, hi: float, scan: int = 4096, tol: float = 1e-12):
    s = np.linspace(lo, hi, scan + 1)
    v = fn(s)
    idx = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) <= 0)[0]
    if idx.size == 0:
        return None
    k = int(idx[0])
    a, b = s[k], s[k + 1]
    fa = float(fn(np.array([a]))[0])
    if fa == 0:
        return float(a)
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = float(fn(np.array([mid]))[0])
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def estimate_persistence(model: ChemostatModel, washout: WashoutSolution, grid: QuadratureGrid | None = None,
                         bounds: str = "forcing") -> tuple[PersistenceEstimate, ConditionReport]:
    """Lower bound m0 for liminf S and the persistence inequality it feeds.

    ``bounds='forcing'`` takes ``[min S0, max S0]``; ``'washout'`` takes the extrema
    of y*, the choice behind the closed-form bound.
    """
    if bounds not in ("forcing", "washout"):
        raise ValueError("bounds must be 'forcing' or 'washout'")
    M = _M(model, grid)
    omega = model.omega
    d_min, d_max = periodic_min_max(model.d)
    conservative = not model.d.is_constant
    d_val = d_min
    lo_level, hi_level = (periodic_min_max(model.s0) if bounds == "forcing" else (washout.min, washout.max))
    h = _h_function(model, d_val, hi_level)
    target = d_val * lo_level
    s_grid = np.linspace(0.0, hi_level, 257)
    h_samples = np.column_stack([s_grid, h(s_grid)])
    root = _leftmost_root(lambda s: h(s) - target, 0.0, hi_level)
    notes = []
    no_root = root is None
    if no_root:
        root = hi_level
        notes.append("h(s) never reaches the target on the bracket; m0 set to its upper end")
    if conservative:
        notes.append("washout rate not constant: h(s) built with min d, result is conservative")

    b_bound = None
    m0_closed = None
    m0_sqrt = None
    if model.n and not conservative:
        b_bound = sum(sp.response.slope_at_zero * math.exp(-d_val * sp.tau) for sp in model.species) / d_val
        m0_sqrt = washout.min / (1.0 + b_bound * washout.max)
        s = model.s0
        if s.kind == "sinusoid" and math.isclose(omega, 2 * math.pi) and math.isclose(math.hypot(s.params[1], s.params[2]), 1.0):
            a = s.params[0]
            q = d_val / (d_val * d_val + 1.0)
            m0_closed = (a - q) / (1.0 + b_bound * (a + q))
    est = PersistenceEstimate(float(root), h_samples, b_bound, m0_closed, m0_sqrt, bounds, no_root, conservative, notes)
    m0_washout_root = None
    if m0_closed is not None:
        if bounds == "washout":
            m0_washout_root = est.m0
        else:
            hw = _h_function(model, d_val, washout.max)
            m0_washout_root = _leftmost_root(lambda s: hw(s) - d_val * washout.min, 0.0, washout.max)
        if m0_washout_root is not None and m0_closed > m0_washout_root + 1e-9:
            est.notes.append(
                f"closed-form bound {m0_closed:.6g} exceeds the root {m0_washout_root:.6g} computed with the "
                f"washout extrema; the form with d/sqrt(d^2+1) gives {m0_sqrt:.6g}")

    report = ConditionReport()
    for i in range(model.n):
        lag_max, t_l = grid_maximum(lagged_threshold(model, i), omega, M)
        p_m0 = float(model.response(i)(est.m0))
        margin = p_m0 - lag_max
        details = {"m0": est.m0, "p_m0": p_m0, "threshold_max": lag_max, "bounds": bounds}
        if est.m0_closed is not None:
            details["m0_closed"] = est.m0_closed
            details["m0_closed_sqrt"] = est.m0_closed_sqrt
        note = "; ".join(notes)
        if conservative:
            verdict = INCONCLUSIVE
        elif margin > EQ_TOL:
            verdict = HOLDS
        else:
            # h(m0) = d min S0 forces p_i(m0) < d e^{d tau_i} for some species,
            # so a nonpositive margin says nothing about persistence itself
            verdict = INCONCLUSIVE
            lower = d_val * est.m0 + (hi_level - est.m0) * sum(
                float(sp.response(est.m0)) * math.exp(-d_val * sp.tau) for sp in model.species)
            details["h_at_m0"] = lower
            note = (note + "; " if note else "") + "m0 estimate route cannot certify persistence"
        report.add(Entry("PERS", verdict, float(margin), species=i, witness_t=t_l, note=note, details=details))
    return est, report


def check_exclusion(model: ChemostatModel, washout: WashoutSolution, survivor: int,
                    grid: QuadratureGrid | None = None) -> ConditionReport:
    """Survival of species ``survivor`` (zero-based) with washout of all others."""
    if not 0 <= survivor < model.n:
        raise IndexError(f"survivor index {survivor} out of range for n = {model.n}")
    M = _M(model, grid)
    omega = model.omega
    y = washout.y_star
    report = ConditionReport()
    x_top = max(washout.max, periodic_min_max(model.s0)[1])
    strict, gap = strictly_increasing(model.response(survivor), x_top)
    for i in range(model.n):
        p_y = _uptake_on(model, i, y)
        G = growth_threshold(model, i)
        if i == survivor:
            m, t_w = grid_minimum(lambda t: p_y(t) - G(t), omega, M)
            if not strict:
                report.add(Entry("EXCL_1", INCONCLUSIVE, float(m), species=i, witness_t=t_w,
                                 note=f"survivor response not strictly increasing (flat step {gap:.3e})",
                                 details={"role": "survivor"}))
                continue
            report.add(Entry.from_margin("EXCL_1", m, species=i, witness_t=t_w, details={"role": "survivor"}))
        else:
            m, t_w = grid_minimum(lambda t: G(t) - p_y(t), omega, M)
            report.add(Entry.from_margin("EXCL_1", m, species=i, witness_t=t_w, details={"role": "excluded"}))
    return report


@dataclass
class CascadeStage:
    species: int
    ceiling: PeriodicFn
    result: object  # SolveResult of the scalar solve, None when skipped
    reduced: PeriodicFn | None  # ceiling minus this species' share


def coexistence_cascade(model: ChemostatModel, washout: WashoutSolution, order: Sequence[int] | None = None,
                        grid: QuadratureGrid | None = None, opts=None) -> tuple[ConditionReport, list[CascadeStage]]:
    """Stagewise coexistence test: each species must invade the level left by the previous ones."""
    from .periodic import SolveOptions, single_species_solve

    order = list(range(model.n)) if order is None else [int(i) for i in order]
    if sorted(order) != list(range(model.n)):
        raise ValueError(f"order must be a permutation of 0..{model.n - 1}")
    M = _M(model, grid)
    omega = model.omega
    target = math.expm1(model.D_omega)
    report = ConditionReport()
    stages: list[CascadeStage] = []
    level = washout.y_star
    opts = opts or SolveOptions()
    for k, i in enumerate(order):
        p_l = _uptake_on(model, i, level)
        G = growth_threshold(model, i)
        m, t_w = grid_minimum(lambda t: p_l(t) - G(t), omega, M)
        if k > 0:
            max_growth, t_mg = grid_maximum(_forward_growth(model, i), omega, M)
            avg = period_integral(p_l, omega, M) - target * max_growth
            report.add(Entry.from_margin("COEX_AVG", avg, species=i, witness_t=t_mg, details={"stage": k + 1}))
        entry = report.add(Entry.from_margin("COEX", m, species=i, witness_t=t_w, details={"stage": k + 1}))
        if not entry.holds:
            entry.note = f"cascade stops at stage {k + 1}"
            stages.append(CascadeStage(i, level, None, None))
            break
        result = single_species_solve(model, level, i, opts, grid)
        if not result.ok:
            entry.verdict = INCONCLUSIVE
            entry.note = f"scalar solve at stage {k + 1} ended with status {result.status}"
            stages.append(CascadeStage(i, level, result, None))
            break
        x = result.orbit.x_star.component(0)
        tau = model.species[i].tau
        t = GridSamples.for_model(model, grid).nodes
        reduced_vals = level(t) - model.exp_int_d(t, t + tau) * x(t + tau)
        entry.details["orbit_min"] = min(result.orbit.positivity)
        entry.details["phi_residual"] = result.orbit.phi_residual
        reduced = PeriodicFn.from_samples(reduced_vals, omega)
        stages.append(CascadeStage(i, level, result, reduced))
        level = reduced
    return report, stages


def _verdict_line(report: ConditionReport, cid: str) -> str | None:
    found = report.find(cid)
    if not found:
        return None
    return f"{cid}: {report.verdict(cid)} (min margin {min(e.margin for e in found):.6g})"


def check_all(model: ChemostatModel, washout: WashoutSolution, grid: QuadratureGrid | None = None,
              survivor: int | None = None, cascade: bool = False, order: Sequence[int] | None = None) -> ConditionReport:
    """Every checker in one report.

    Exclusion is evaluated for ``survivor`` when given (or species 0 when n >= 2);
    the coexistence cascade runs only on request since it solves periodic problems.
    """
    report = validate_model(model)
    report.extend(check_extinction(model, washout, grid))
    report.extend(check_existence(model, washout, grid))
    report.extend(estimate_persistence(model, washout, grid)[1])
    if model.n >= 2 or survivor is not None:
        report.extend(check_exclusion(model, washout, 0 if survivor is None else survivor, grid))
    if cascade and model.n:
        report.extend(coexistence_cascade(model, washout, order, grid)[0])
    return report


def theorem_summary(report: ConditionReport) -> list[str]:
    """One line per condition family, in a fixed order."""
    from .report import CONDITION_IDS

    lines = []
    for cid in CONDITION_IDS:
        line = _verdict_line(report, cid)
        if line:
            lines.append(line)
    return lines


__all__ = [
    "CascadeStage",
    "PersistenceEstimate",
    "check_all",
    "check_exclusion",
    "check_existence",
    "check_extinction",
    "coexistence_cascade",
    "estimate_persistence",
    "existence_integrals",
    "theorem_summary",
    "verdict_for",
]
