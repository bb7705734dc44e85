import numpy as np
import pytest
from hypothesis import settings

from avsfe import assembly

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

ORTHOGONALITY_RTOL = 1e-9


class OrthogonalityLog:
    """Records ``max |B(phi; e_h)|`` against its tolerance for every solve."""

    def __init__(self):
        self.records = []

    def __call__(self, system, solution):
        scale = 1.0 + np.abs(system.reduced_load()).max(initial=0.0)
        self.records.append((solution.orthogonality, ORTHOGONALITY_RTOL * scale))

    def violations(self, start=0):
        return [(o, tol) for o, tol in self.records[start:] if not o <= tol]


_LOG = OrthogonalityLog()


@pytest.fixture(scope="session", autouse=True)
def _register_orthogonality_hook():
    assembly.SOLVE_HOOKS.append(_LOG)
    yield
    assembly.SOLVE_HOOKS.remove(_LOG)


@pytest.fixture(autouse=True)
def _check_orthogonality():
    """Every saddle solve in every test must leave the residual orthogonal to the trial space."""
    start = len(_LOG.records)
    yield
    bad = _LOG.violations(start)
    assert not bad, f"{len(bad)} solve(s) violated residual orthogonality, worst {max(bad)}"


@pytest.fixture
def orthogonality_log():
    return _LOG


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
