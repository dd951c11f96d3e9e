"""Problem instances: periodic coefficients, uptake functions and the model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import minimize_scalar

from .report import ConditionReport, Entry

TWO_PI = 2.0 * math.pi

# safe namespace for "expression" periodic functions
_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "tanh", "arctan")
}


@dataclass(frozen=True, eq=False)
class PeriodicFn:
    """An omega-periodic scalar function of time.

    ``kind`` is one of ``constant``, ``sinusoid``, ``grid``, ``hermite`` or
    ``expression``.  Sinusoids are ``a + b sin(2 pi t / omega) + c cos(2 pi t / omega)``,
    which is ``a + b sin t + c cos t`` for the usual period ``2 pi``.

    Grid kinds hold ``M`` samples on the uniform grid ``k omega / M``; ``grid``
    uses a periodic cubic spline and ``hermite`` a cubic Hermite interpolant
    built from supplied node slopes.
    """

    period: float
    kind: str
    params: tuple = ()
    values: np.ndarray | None = None
    slopes: np.ndarray | None = None
    expr: str | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")
        if self.kind in ("grid", "hermite"):
            if self.values is None or len(self.values) < 4:
                raise ValueError("grid functions need at least 4 samples")
            if self.kind == "hermite" and (self.slopes is None or len(self.slopes) != len(self.values)):
                raise ValueError("hermite functions need one slope per sample")
        elif self.kind == "constant":
            if len(self.params) != 1:
                raise ValueError("constant takes one parameter")
        elif self.kind == "sinusoid":
            if len(self.params) != 3:
                raise ValueError("sinusoid takes (a, b, c)")
        elif self.kind == "expression":
            if not self.expr:
                raise ValueError("expression functions need an expression string")
        else:
            raise ValueError(f"unknown periodic function kind {self.kind!r}")

    # constructors -----------------------------------------------------------

    @classmethod
    def constant(cls, c: float, period: float = TWO_PI) -> "PeriodicFn":
        return cls(period, "constant", (float(c),))

    @classmethod
    def sinusoid(cls, a: float, b: float = 0.0, c: float = 0.0, period: float = TWO_PI) -> "PeriodicFn":
        return cls(period, "sinusoid", (float(a), float(b), float(c)))

    @classmethod
    def from_samples(cls, values, period: float, slopes=None) -> "PeriodicFn":
        values = np.asarray(values, dtype=float).copy()
        values.setflags(write=False)
        if slopes is None:
            return cls(period, "grid", values=values)
        slopes = np.asarray(slopes, dtype=float).copy()
        slopes.setflags(write=False)
        return cls(period, "hermite", values=values, slopes=slopes)

    @classmethod
    def expression(cls, expr: str, period: float = TWO_PI) -> "PeriodicFn":
        return cls(period, "expression", expr=expr)

    # evaluation ---------------------------------------------------------------

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or (self.kind == "sinusoid" and self.params[1] == 0 and self.params[2] == 0)

    @property
    def nodes(self) -> np.ndarray:
        m = len(self.values)
        return self.period * np.arange(m) / m

    def _interpolant(self):
        if "pp" not in self._cache:
            m = len(self.values)
            t = self.period * np.arange(m + 1) / m
            y = np.append(self.values, self.values[0])
            if self.kind == "grid":
                pp = CubicSpline(t, y, bc_type="periodic")
            else:
                pp = CubicHermiteSpline(t, y, np.append(self.slopes, self.slopes[0]))
            self._cache["pp"] = pp
            self._cache["anti"] = pp.antiderivative()
            self._cache["deriv"] = pp.derivative()
        return self._cache["pp"]

    def _reduce(self, t):
        return np.mod(t, self.period)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.params[0])
        if self.kind == "sinusoid":
            a, b, c = self.params
            w = TWO_PI / self.period
            phase = w * self._reduce(t)
            return a + b * np.sin(phase) + c * np.cos(phase)
        if self.kind == "expression":
            out = eval(self.expr, {"__builtins__": {}}, dict(_EXPR_NAMESPACE, t=self._reduce(t)))
            return np.broadcast_to(np.asarray(out, dtype=float), t.shape).copy()
        return self._interpolant()(self._reduce(t))

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(t)
        if self.kind == "sinusoid":
            a, b, c = self.params
            w = TWO_PI / self.period
            phase = w * self._reduce(t)
            return w * (b * np.cos(phase) - c * np.sin(phase))
        if self.kind == "expression":
            h = 1e-5 * self.period
            return (self(t + h) - self(t - h)) / (2 * h)
        self._interpolant()
        return self._cache["deriv"](self._reduce(t))

    def mean(self) -> float:
        return self.antiderivative(self.period) / self.period

    def antiderivative(self, t):
        """Return ``int_0^t f(s) ds``, valid for any real ``t`` (negative too)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return self.params[0] * t
        if self.kind == "sinusoid":
            a, b, c = self.params
            w = TWO_PI / self.period
            # whole periods contribute a * omega each; reduce for accuracy at large t
            k = np.floor(t / self.period)
            r = t - k * self.period
            return a * t + b * (1.0 - np.cos(w * r)) / w + c * np.sin(w * r) / w
        if self.kind == "expression":
            anti, total = self._expression_antiderivative()
        else:
            self._interpolant()
            anti_pp = self._cache["anti"]
            anti, total = anti_pp, float(anti_pp(self.period))
        k = np.floor(t / self.period)
        r = t - k * self.period
        return k * total + anti(r)

    def _expression_antiderivative(self):
        if "anti" not in self._cache:
            m = 4096
            tt = self.period * np.arange(m + 1) / m
            yy = self(tt)
            yy[-1] = yy[0]
            pp = CubicSpline(tt, yy, bc_type="periodic").antiderivative()
            self._cache["anti"] = pp
            self._cache["total"] = float(pp(self.period))
        return self._cache["anti"], self._cache["total"]

    def integral(self, t0, t1):
        return self.antiderivative(t1) - self.antiderivative(t0)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant({self.params[0]:g})"
        if self.kind == "sinusoid":
            a, b, c = self.params
            return f"sinusoid(a={a:g}, b={b:g}, c={c:g})"
        if self.kind == "expression":
            return f"expression({self.expr})"
        return f"{self.kind}(M={len(self.values)})"

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_cache"] = {}
        return state

    def __setstate__(self, state):
        for key, value in state.items():
            object.__setattr__(self, key, value)


@dataclass(frozen=True)
class ResponseFn:
    """Monotone uptake function with ``p(0) = 0``, extended by zero for ``x < 0``.

    Kinds: ``michaelis_menten`` (``b x / (1 + k x)``), ``linear`` (``b x``) and
    ``table`` (piecewise linear through ``breakpoints``, constant beyond the last one).
    """

    kind: str
    b: float = 0.0
    k: float = 0.0
    breakpoints: tuple = ()

    def __post_init__(self):
        if self.kind == "michaelis_menten":
            if not (self.b > 0 and self.k >= 0):
                raise ValueError("michaelis_menten needs b > 0 and k >= 0")
        elif self.kind == "linear":
            if not self.b > 0:
                raise ValueError("linear response needs b > 0")
        elif self.kind == "table":
            if len(self.breakpoints) < 2:
                raise ValueError("table response needs at least two breakpoints")
            xs = [p[0] for p in self.breakpoints]
            if any(x1 <= x0 for x0, x1 in zip(xs, xs[1:])):
                raise ValueError("table breakpoints must have strictly increasing x")
        else:
            raise ValueError(f"unknown response kind {self.kind!r}")

    @classmethod
    def michaelis_menten(cls, b: float, k: float = 1.0) -> "ResponseFn":
        return cls("michaelis_menten", float(b), float(k))

    @classmethod
    def linear(cls, b: float) -> "ResponseFn":
        return cls("linear", float(b))

    @classmethod
    def table(cls, breakpoints: Sequence[tuple[float, float]]) -> "ResponseFn":
        return cls("table", breakpoints=tuple((float(x), float(y)) for x, y in breakpoints))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        if self.kind == "michaelis_menten":
            val = self.b * xp / (1.0 + self.k * xp)
        elif self.kind == "linear":
            val = self.b * xp
        else:
            bx = np.array([p[0] for p in self.breakpoints])
            by = np.array([p[1] for p in self.breakpoints])
            val = np.interp(xp, bx, by)
        return np.where(x < 0, 0.0, val)

    @property
    def slope_at_zero(self) -> float:
        """Right derivative at 0 (the ``b_i`` of the closed-form persistence bound)."""
        if self.kind in ("michaelis_menten", "linear"):
            return self.b
        (x0, y0), (x1, y1) = self.breakpoints[:2]
        return (y1 - y0) / (x1 - x0)

    def describe(self) -> str:
        if self.kind == "michaelis_menten":
            return f"michaelis_menten(b={self.b:g}, k={self.k:g})"
        if self.kind == "linear":
            return f"linear(b={self.b:g})"
        return f"table({len(self.breakpoints)} points)"


@dataclass(frozen=True)
class Species:
    response: ResponseFn
    tau: float = 0.0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"delays must be nonnegative, got {self.tau}")


@dataclass(frozen=True)
class QuadratureGrid:
    points_per_period: int = 512
    rule: str = "simpson"

    def __post_init__(self):
        if self.rule not in ("simpson", "trapezoid"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.points_per_period < 4:
            raise ValueError("need at least 4 points per period")
        if self.rule == "simpson" and self.points_per_period % 2:
            raise ValueError("simpson rule needs an even number of points per period")


@dataclass(frozen=True)
class ChemostatModel:
    """The n-species delayed chemostat with omega-periodic washout rate and input."""

    omega: float
    d: PeriodicFn
    s0: PeriodicFn
    species: tuple[Species, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        for name, fn in (("d", self.d), ("s0", self.s0)):
            if not math.isclose(fn.period, self.omega, rel_tol=1e-12):
                raise ValueError(f"{name} has period {fn.period}, model period is {self.omega}")

    @property
    def n(self) -> int:
        return len(self.species)

    @property
    def taus(self) -> np.ndarray:
        return np.array([sp.tau for sp in self.species], dtype=float)

    @property
    def tau(self) -> float:
        return float(self.taus.max()) if self.n else 0.0

    @property
    def tau0(self) -> float:
        """Largest delay difference ``max_{i,j} (tau_i - tau_j)``."""
        if not self.n:
            return 0.0
        return float(self.taus.max() - self.taus.min())

    def response(self, i: int) -> ResponseFn:
        return self.species[i].response

    def D(self, t):
        """Cumulative washout ``int_0^t d``."""
        return self.d.antiderivative(t)

    @property
    def D_omega(self) -> float:
        return float(self.d.antiderivative(self.omega))

    def exp_int_d(self, t0, t1):
        """``exp(int_{t0}^{t1} d)`` (vectorised)."""
        return np.exp(self.D(t1) - self.D(t0))

    def restrict(self, indices: Sequence[int]) -> "ChemostatModel":
        return ChemostatModel(self.omega, self.d, self.s0, tuple(self.species[i] for i in indices))

    def with_species(self, species: Sequence[Species]) -> "ChemostatModel":
        return ChemostatModel(self.omega, self.d, self.s0, tuple(species))

    def describe(self) -> list[str]:
        lines = [f"n = {self.n}", f"omega = {self.omega:.17g}", f"d = {self.d.describe()}", f"s0 = {self.s0.describe()}"]
        for i, sp in enumerate(self.species, 1):
            lines.append(f"species.{i} = {sp.response.describe()}, tau={sp.tau:g}")
        return lines


# operations ------------------------------------------------------------------

def integrate_d(model: ChemostatModel, t0: float, t1: float) -> float:
    """``int_{t0}^{t1} d(s) ds``; exact for constant and sinusoidal ``d``."""
    if t0 > t1:
        raise ValueError(f"integrate_d needs t0 <= t1, got t0={t0}, t1={t1}")
    return float(model.d.integral(t0, t1))


def periodic_min_max(f: PeriodicFn, samples: int = 4096) -> tuple[float, float]:
    if f.kind == "constant":
        c = f.params[0]
        return c, c
    if f.kind == "sinusoid":
        a, b, c = f.params
        amp = math.hypot(b, c)
        return a - amp, a + amp
    t = f.period * np.arange(samples) / samples
    v = f(t)
    h = f.period / samples

    def refine(k, sign):
        res = minimize_scalar(
            lambda s: sign * float(f(s)),
            bounds=(t[k] - h, t[k] + h),
            method="bounded",
            options={"xatol": 1e-12 * f.period},
        )
        return min(sign * v[k], res.fun) * sign

    lo = refine(int(np.argmin(v)), 1.0)
    hi = refine(int(np.argmax(v)), -1.0)
    return float(lo), float(hi)


def dissipative_bound(model: ChemostatModel) -> float:
    """Upper end of the interval on which uptake monotonicity is sampled."""
    _, s0_max = periodic_min_max(model.s0)
    _, d_max = periodic_min_max(model.d)
    return s0_max * math.exp(d_max * model.tau)


def validate_model(model: ChemostatModel, positivity_samples: int = 4096, monotone_samples: int = 1024) -> ConditionReport:
    """Check positivity of ``d`` and ``S0`` and the uptake hypotheses on sample grids."""
    report = ConditionReport()
    t = model.omega * np.arange(positivity_samples) / positivity_samples
    dv, sv = model.d(t), model.s0(t)
    both = np.minimum(dv, sv)
    k = int(np.argmin(both))
    margin = float(both[k])
    which = "d" if dv[k] <= sv[k] else "s0"
    wrap_gap = max(abs(float(model.d(model.omega) - model.d(0.0))), abs(float(model.s0(model.omega) - model.s0(0.0))))
    note = f"min of {which} at t={t[k]:.6g}"
    if wrap_gap > 1e-8 * max(1.0, abs(margin)):
        note += f"; not periodic (jump {wrap_gap:.3g} at t=omega)"
        margin = min(margin, -wrap_gap)
    report.add(Entry.from_margin("H1", margin, witness_t=float(t[k]), note=note))

    x_top = dissipative_bound(model) if model.n else 1.0
    xs = np.linspace(0.0, x_top, monotone_samples)
    for i, sp in enumerate(model.species):
        p = sp.response
        px = p(xs)
        p0 = float(p(0.0))
        diffs = np.diff(px)
        j = int(np.argmin(diffs))
        if p0 != 0.0:
            report.add(Entry("H2", "fails", -abs(p0), species=i, witness_x=0.0, note=f"p(0) = {p0:g} != 0"))
        elif diffs[j] < 0:
            report.add(Entry("H2", "fails", float(diffs[j]), species=i, witness_x=float(xs[j]),
                             note=f"decreasing between x={xs[j]:.6g} and x={xs[j + 1]:.6g}"))
        elif np.any(px[1:] <= 0):
            j = int(np.argmin(px[1:])) + 1
            report.add(Entry("H2", "fails", float(px[j]), species=i,
                             witness_x=float(xs[j]), note="p(x) not positive for x > 0"))
        else:
            report.add(Entry.from_margin("H2", float(px[1:].min()), species=i, witness_x=float(xs[1]),
                                         note="p(0)=0, non-decreasing, positive on samples"))
    if any(sp.tau < 0 for sp in model.species):
        report.add(Entry("H2", "fails", -1.0, note="negative delay"))
    return report


def strictly_increasing(p: ResponseFn, x_top: float, samples: int = 1024) -> tuple[bool, float]:
    xs = np.linspace(0.0, x_top, samples)
    diffs = np.diff(p(xs))
    return bool(np.all(diffs > 0)), float(diffs.min())
