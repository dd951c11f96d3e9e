import math

import numpy as np
import pytest

from delaychem import History, QuadratureGrid, washout_solution
from delaychem.instances import constant_chemostat, forced_chemostat
from delaychem.model import TWO_PI
from delaychem.periodic import (
    CONVERGED,
    WASHOUT,
    PeriodicCandidate,
    PhiOperator,
    SolveOptions,
    cone_params,
    fde_residual,
    find_fixed_point,
    phi_apply,
    poincare_shoot,
    reconstruct_S,
    single_species_solve,
)

M = 512
NODES = TWO_PI / M * np.arange(M)


def candidate(values):
    return PeriodicCandidate(np.atleast_2d(values), TWO_PI)


@pytest.mark.parametrize("key, tol", [("b3_tau0.6", 1e-9), ("b10_tau0.1", 2e-5)])
def test_phi_matches_direct_quadrature(frozen, key, tol):
    # b10: the response argument crosses zero, so the integrand has a kink
    c = frozen["phi"][key]
    m = forced_chemostat([(c["b"], c["tau"])], k=c["k"])
    x = candidate(c["c"] * (1 + c["amp"] * np.sin(NODES)))
    y = phi_apply(m, washout_solution(m), x)
    assert np.abs(y(np.array(c["t"]))[0] - np.array(c["phi"])).max() < tol


def test_phi_kinked_case_converges_with_grid(frozen):
    c = frozen["phi"]["b10_tau0.1"]
    m = forced_chemostat([(c["b"], c["tau"])], k=c["k"])
    errs = []
    for MM in (512, 4096):
        g = QuadratureGrid(MM)
        t = TWO_PI / MM * np.arange(MM)
        x = candidate(c["c"] * (1 + c["amp"] * np.sin(t)))
        y = PhiOperator(m, washout_solution(m, g).y_star, g)(x)
        errs.append(np.abs(y(np.array(c["t"]))[0] - np.array(c["phi"])).max())
    assert errs[1] < errs[0] / 10


def test_phi_of_zero_is_zero(persist_model, persist_washout):
    z = PeriodicCandidate.zeros(1, M, TWO_PI)
    out = phi_apply(persist_model, persist_washout, z)
    assert np.array_equal(out.values, np.zeros((1, M)))
    assert fde_residual(persist_model, persist_washout, z) == 0.0


def test_constant_fixed_point():
    m = constant_chemostat([(2.0, 0.0)], d=1.0, c=3.0)
    ws = washout_solution(m)
    two = PeriodicCandidate.constant(1, M, TWO_PI, 2.0)
    assert np.abs(phi_apply(m, ws, two).values - 2.0).max() < 1e-9
    res = find_fixed_point(m, ws)
    assert res.status == CONVERGED
    assert np.abs(res.orbit.x_star.values - 2.0).max() < 1e-8
    assert np.abs(res.orbit.s_star.values - 1.0).max() < 1e-8
    stage = single_species_solve(m, ws.y_star, 0)
    assert np.abs(stage.orbit.x_star.values - 2.0).max() < 1e-8


def test_extinction_regime_goes_to_washout(extinct_model, extinct_washout):
    res = find_fixed_point(extinct_model, extinct_washout, SolveOptions(init=0.05))
    assert res.status == WASHOUT
    assert not res.ok


def test_existence_orbit(persist_model, persist_washout, persist_orbit):
    o = persist_orbit.orbit
    assert o.nontrivial
    assert o.phi_residual < 1e-8
    assert o.fde_residual < 1e-5
    assert min(o.positivity) > 0
    assert o.cone_slack >= -1e-10
    assert o.s_nonpositive == 0 and o.s_above_ceiling == 0
    s = o.s_star.values
    assert np.all(s > 0) and np.all(s < persist_washout.values)
    # solution equivalence: FDE defect bounded by the operator residual plus an O(M^-2) allowance
    assert o.fde_residual < 10 * o.phi_residual + (TWO_PI / M) ** 2


def test_cone_retention_random_candidates(persist_model, persist_washout):
    rng = np.random.default_rng(3)
    sigma = math.exp(-persist_model.D_omega)
    op = PhiOperator(persist_model, persist_washout.y_star)
    for _ in range(20):
        amp = rng.uniform(0, 0.95)
        k = int(rng.integers(1, 4))
        x = candidate(rng.uniform(0.01, 3.0) * (1 + amp * np.sin(k * NODES + rng.uniform(0, TWO_PI))))
        assert x.in_cone(sigma)
        assert op(x).in_cone(sigma, slack=1e-12)


def test_saturation_radius_annihilates(persist_model, persist_washout):
    cp = cone_params(persist_model, persist_washout)
    for shape in (np.ones(M), 1 + 0.5 * np.sin(NODES)):
        x = candidate(cp.R * shape / shape.max())
        assert np.array_equal(phi_apply(persist_model, persist_washout, x).values, np.zeros((1, M)))


def test_cone_params_values(frozen, persist_model, persist_washout):
    cp = cone_params(persist_model, persist_washout)
    assert cp.sigma == pytest.approx(frozen["conditions"]["sigma_d1_2pi"], rel=1e-14)
    assert cp.R == pytest.approx(3.0 * math.exp(-0.1) / cp.sigma, rel=1e-10)
    assert 0 < cp.r < cp.R and not cp.degenerate


def test_cone_params_zero_delay():
    m = constant_chemostat([(2.0, 0.0)], c=3.0)
    cp = cone_params(m)
    assert cp.R == pytest.approx(3.0 * math.exp(TWO_PI), rel=1e-12)


def test_cone_params_without_existence_margin(extinct_model, extinct_washout):
    cp = cone_params(extinct_model, extinct_washout)
    assert math.isnan(cp.r) or cp.degenerate
    assert cp.note


def test_reconstruct_washout(persist_model, persist_washout):
    s = reconstruct_S(persist_model, persist_washout, PeriodicCandidate.zeros(1, M, TWO_PI))
    assert np.abs(s.values - persist_washout.values).max() < 1e-12


def test_residual_discriminates(persist_model, persist_washout):
    x = candidate(1.0 + 0.5 * np.cos(3 * NODES))
    assert fde_residual(persist_model, persist_washout, x) > 1e-2


def test_single_species_stage_equals_restricted_solve(excl_model, persist_orbit):
    ws = washout_solution(excl_model)
    stage = single_species_solve(excl_model, ws.y_star, 0)
    assert stage.ok
    assert np.abs(stage.orbit.x_star.values - persist_orbit.orbit.x_star.values).max() < 1e-7
    failing = single_species_solve(excl_model, ws.y_star, 1)
    assert failing.status == WASHOUT


def test_shooting_agrees_with_operator(persist_model, persist_washout, persist_orbit):
    shot = poincare_shoot(persist_model, History.constant_state([1.0, 0.3]), 300, 1e-8, washout=persist_washout)
    assert shot.status == CONVERGED
    assert shot.distances[-1] < 1e-8
    gap = np.abs(shot.orbit.x_star.values - persist_orbit.orbit.x_star.values).max()
    assert gap < 1e-4


def test_shooting_extinction(extinct_model, extinct_washout):
    shot = poincare_shoot(extinct_model, History.constant_state([1.0, 0.3]), 300, 1e-8, washout=extinct_washout)
    assert shot.status == WASHOUT
    assert shot.orbit.x_star.norm == 0.0
    assert np.abs(shot.orbit.s_star.values - extinct_washout.values).max() < 1e-6


def test_shooting_exclusion(excl_model):
    shot = poincare_shoot(excl_model, History.constant_state([1.0, 0.3, 0.3]), 300, 1e-8)
    assert shot.ok
    x = shot.orbit.x_star.values
    assert x[1].max() < 1e-6
    assert x[0].min() > 0


def test_solve_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(residual_tol=0)
    with pytest.raises(ValueError):
        SolveOptions(theta=1.5)
