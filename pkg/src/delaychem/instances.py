"""Ready-made model instances used by the CLI demos, the sweep and the tests."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .model import TWO_PI, ChemostatModel, PeriodicFn, ResponseFn, Species


def forced_chemostat(species: Iterable[tuple[float, float]], d: float = 1.0, a: float = 2.0,
                     k: float = 1.0) -> ChemostatModel:
    """Constant washout ``d``, input ``a + sin t`` and Michaelis-Menten uptakes.

    ``species`` is a sequence of ``(b_i, tau_i)``.  The washout level is
    ``a + d (d sin t - cos t) / (d^2 + 1)`` in closed form.
    """
    sp = tuple(Species(ResponseFn.michaelis_menten(b, k), tau) for b, tau in species)
    return ChemostatModel(TWO_PI, PeriodicFn.constant(d), PeriodicFn.sinusoid(a, 1.0), sp)


def constant_chemostat(species: Iterable[tuple[float, float]], d: float = 1.0, c: float = 3.0,
                       k: float = 1.0) -> ChemostatModel:
    """Everything constant; ``species`` is ``(b_i, tau_i)`` with Michaelis-Menten uptake."""
    sp = tuple(Species(ResponseFn.michaelis_menten(b, k), tau) for b, tau in species)
    return ChemostatModel(TWO_PI, PeriodicFn.constant(d), PeriodicFn.constant(c), sp)


def exclusion_instance() -> ChemostatModel:
    """Two species where the fast, short-delay one excludes the other."""
    return forced_chemostat([(10.0, 0.1), (1.0, 1.0)])


def closed_form_washout(d: float, a: float):
    """``y*(t)`` for constant ``d`` and input ``a + sin t``."""
    q = d / (d * d + 1.0)
    return lambda t: a + q * (d * np.sin(t) - np.cos(t))


def closed_form_extrema(d: float, a: float) -> tuple[float, float]:
    w = d / math.sqrt(d * d + 1.0)
    return a - w, a + w


def invasion_delay(b: float, d: float = 1.0, a: float = 2.0, k: float = 1.0) -> float:
    """Largest delay for which ``p(min y*) > d e^{d tau}`` (the pointwise existence test)."""
    lo, _ = closed_form_extrema(d, a)
    p_lo = b * lo / (1.0 + k * lo)
    return math.log(p_lo / d) / d
