from __future__ import annotations

import numpy as np
import pytest

from levy_homog.measures import JumpMap, builtin_example, symmetric_stable
from levy_homog.nonlocal_op import TorusGrid, assemble_periodic
from levy_homog.quadrature import build_rule

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def periodic_op(q0, beta, n=64, rho=None, R=50.0, cpd=32, form=None, sectors=64, **kw):
    grid = TorusGrid(beta.target_dim, n)
    rule = build_rule(q0, beta, rho or min(1.0 / n, 0.5), R, cpd, sectors, gamma=form)
    return assemble_periodic(grid, rule, form=form, **kw)


@pytest.fixture(scope="session")
def stable_op():
    """Symmetric 1.5-stable cell operator on a 128-point torus."""
    _, q0 = symmetric_stable(1, 1.5)
    return periodic_op(q0, JumpMap.identity(1), n=128, rho=1e-3, R=100.0)


@pytest.fixture(scope="session")
def ex1_op():
    """One-sided 1.5-stable cell operator (Example 1) on a 64-point torus."""
    _, beta, q0 = builtin_example(1, alpha=1.5)
    return periodic_op(q0, beta, n=64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
