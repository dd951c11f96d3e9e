import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaychem import ChemostatModel, PeriodicFn, QuadratureGrid, washout_initial, washout_solution
from delaychem.instances import closed_form_washout, forced_chemostat
from delaychem.model import TWO_PI
from delaychem.washout import ValidationError, forward_scalar, washout_residual


def bare(d, s0):
    return ChemostatModel(TWO_PI, d, s0, ())


# Simpson on e^{D(s)} over one period: O(h^4) error, about 5e-11 at M = 512
QUAD_TOL = 1e-9


def test_constant_equilibrium():
    assert washout_initial(bare(PeriodicFn.constant(0.7), PeriodicFn.constant(2.5))) == pytest.approx(2.5, abs=QUAD_TOL)
    ws = washout_solution(bare(PeriodicFn.constant(2.0), PeriodicFn.constant(3.0)))
    assert np.allclose(ws(np.linspace(0, 10, 17)), 3.0, atol=1e-12)


def test_variable_rate_constant_input():
    ws = washout_solution(bare(PeriodicFn.sinusoid(1.0, 0.5), PeriodicFn.constant(1.0)))
    assert np.allclose(ws(np.linspace(0, 10, 17)), 1.0, atol=1e-12)


@pytest.mark.parametrize("a", [1.5, 2.0, 3.7])
def test_initial_value_matches_oracle(frozen, a):
    got = washout_initial(forced_chemostat([], a=a))
    assert got == pytest.approx(frozen["washout"][f"const_d_a{a}"], abs=QUAD_TOL)
    assert got == pytest.approx(a - 0.5, abs=QUAD_TOL)


def test_initial_value_converges_with_grid():
    m = forced_chemostat([])
    errs = [abs(washout_initial(m, QuadratureGrid(M)) - 1.5) for M in (64, 128)]
    assert errs[1] < errs[0] / 12


def test_variable_rate_matches_oracle(frozen):
    case = frozen["washout"]["var_d"]
    ws = washout_solution(bare(PeriodicFn.sinusoid(1.0, 0.5), PeriodicFn.sinusoid(2.0, 1.0)))
    assert np.abs(ws(np.array(case["t"])) - np.array(case["y"])).max() < 1e-9


def test_closed_form_example():
    ws = washout_solution(forced_chemostat([]))
    t = ws.nodes
    assert np.abs(ws.values - closed_form_washout(1.0, 2.0)(t)).max() < 1e-8
    assert ws.max == pytest.approx(2 + 1 / math.sqrt(2), abs=1e-8)
    assert ws.min == pytest.approx(2 - 1 / math.sqrt(2), abs=1e-8)
    assert ws.y0 == pytest.approx(float(ws(0.0)), abs=1e-14)
    assert float(ws(TWO_PI)) == pytest.approx(ws.y0, abs=1e-10)


def test_bounds_by_forcing_extrema():
    ws = washout_solution(bare(PeriodicFn.sinusoid(1.0, 0.5), PeriodicFn.sinusoid(2.0, 1.0, 0.5)))
    lo, hi = 2 - math.hypot(1, 0.5), 2 + math.hypot(1, 0.5)
    assert lo <= ws.min <= ws.max <= hi


@pytest.mark.parametrize("d", [PeriodicFn.constant(1.0), PeriodicFn.sinusoid(1.0, 0.5), PeriodicFn.sinusoid(2.0, -0.8, 0.6)])
def test_ode_residual_small(d):
    m = bare(d, PeriodicFn.sinusoid(2.0, 1.0, -0.3))
    ws = washout_solution(m, QuadratureGrid(512))
    assert washout_residual(m, ws).max() < 1e-6


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100))
def test_periodic(t):
    ws = washout_solution(bare(PeriodicFn.sinusoid(1.0, 0.5), PeriodicFn.sinusoid(2.0, 1.0)))
    assert abs(float(ws(t + TWO_PI)) - float(ws(t))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 6.0))
def test_exponential_attraction(y_init):
    m = bare(PeriodicFn.sinusoid(1.0, 0.5), PeriodicFn.sinusoid(2.0, 1.0))
    ws = washout_solution(m)
    t = np.linspace(0, 15, 61)
    y = forward_scalar(m, y_init, t)
    bound = abs(y_init - ws.y0) * np.exp(-0.5 * t) + 1e-8
    assert np.all(np.abs(y - ws(t)) <= bound)


def test_nonpositive_rate_refused():
    with pytest.raises(ValidationError):
        washout_initial(bare(PeriodicFn.sinusoid(0.2, 1.0), PeriodicFn.constant(1.0)))
