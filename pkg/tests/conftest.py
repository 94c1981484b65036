import math

import numpy as np
import pytest

from impulse_lab.spectral_core import SubdomainMask, spectral_problem

N_GRID = 200


@pytest.fixture(scope="session")
def d0():
    """V = 0 on (0, π), 200 interior nodes."""
    return spectral_problem(N_GRID, math.pi, 0.0)


@pytest.fixture(scope="session")
def dneg():
    """V = -2 on (0, π): one growing mode."""
    return spectral_problem(N_GRID, math.pi, -2.0)


@pytest.fixture(scope="session")
def w1(d0):
    return SubdomainMask(0.9, 1.5, d0.grid, "w1")


@pytest.fixture(scope="session")
def w2(d0):
    return SubdomainMask(1.8, 2.4, d0.grid, "w2")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def span_state(decomp, rng, d):
    c = np.zeros(decomp.n)
    c[:d] = rng.standard_normal(d)
    return decomp.synthesize(c)


def hnorm(decomp, u):
    return math.sqrt(decomp.h) * np.linalg.norm(u)


def active_state(decomp, rng, d):
    """Random state in the leading d modes with a dominant first mode (never decays into small balls)."""
    c = np.zeros(decomp.n)
    c[:d] = rng.standard_normal(d)
    c[0] = math.copysign(1.0 + abs(c[0]), c[0])
    return decomp.synthesize(c)


# -- acceptance reporting: one line per criterion in the terminal summary ----

_ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    def record(number, title, ok, elapsed, budget, detail=""):
        timing = f"{elapsed:.2f}s (target < {budget:g}s)" if budget else f"{elapsed:.2f}s"
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  [{timing}]" + (f"  {detail}" if detail else "")
        _ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[k])
