import json
from pathlib import Path

import numpy as np
import pytest

from delaychem import History, QuadratureGrid, washout_solution
from delaychem.instances import exclusion_instance, forced_chemostat
from delaychem.periodic import SolveOptions, find_fixed_point

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def grid():
    return QuadratureGrid()


@pytest.fixture(scope="session")
def extinct_model():
    return forced_chemostat([(1.0, 1.0)])


@pytest.fixture(scope="session")
def persist_model():
    return forced_chemostat([(10.0, 0.1)])


@pytest.fixture(scope="session")
def excl_model():
    return exclusion_instance()


@pytest.fixture(scope="session")
def persist_washout(persist_model, grid):
    return washout_solution(persist_model, grid)


@pytest.fixture(scope="session")
def extinct_washout(extinct_model, grid):
    return washout_solution(extinct_model, grid)


@pytest.fixture(scope="session")
def persist_orbit(persist_model, persist_washout, grid):
    res = find_fixed_point(persist_model, persist_washout, SolveOptions(), grid)
    assert res.ok, res.message
    return res


def random_history(rng, n, tau, scale=1.0, positive=True):
    """Smooth nonnegative history on [-tau, 0]: a bias plus two random harmonics per component."""
    amp = rng.uniform(0.0, 1.0, size=(n + 1, 2))
    phase = rng.uniform(0.0, 2 * np.pi, size=(n + 1, 2))
    base = rng.uniform(0.2, 1.0, size=n + 1)
    freq = rng.uniform(0.5, 3.0, size=(n + 1, 2))
    span = max(tau, 1e-3)
    times = np.linspace(-span, 0.0, 65)

    comps = []
    for c in range(n + 1):
        wave = sum(amp[c, j] * (1 + np.sin(freq[c, j] * times + phase[c, j])) for j in range(2))
        comps.append(base[c] + wave)
    vals = scale * np.stack(comps, axis=1) / 3.0
    if not positive:
        # species vanish at t = 0 with zero slope (C+ but not C0+)
        vals[:, 1:] *= (times[:, None] / span) ** 2
    return History.from_samples(times, vals)


# acceptance reporting: one line per criterion in the terminal summary

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}  [{detail}]")
