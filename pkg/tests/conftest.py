import numpy as np
import pytest
import scipy.linalg

from geomint import systems
from geomint.mechanics import CotangentState, TangentState, legendre


@pytest.fixture
def particle():
    return systems.nonholonomic_particle()


@pytest.fixture
def free1():
    return systems.free_particle(1)


@pytest.fixture
def osc():
    return systems.oscillator(1)


@pytest.fixture
def bead():
    return systems.bead()


@pytest.fixture
def lqr():
    return systems.lqr()


@pytest.fixture
def pendulum():
    return systems.pendulum_control()


@pytest.fixture
def rng():
    return np.random.default_rng(20021)


def feasible_tangent(sys, rng, scale=1.0):
    """Random (q, v) with v in the kernel of dphi_dv (built-ins have phi linear in v)."""
    q = rng.uniform(-scale, scale, sys.n)
    v = rng.uniform(-scale, scale, sys.n)
    if sys.m:
        A = np.asarray(sys.dphi_dv(q, v)).reshape(sys.m, sys.n)
        K = scipy.linalg.null_space(A)
        v = K @ (K.T @ v)
    return TangentState(q, v)


def feasible_cotangent(sys, rng, scale=1.0):
    return legendre(sys, feasible_tangent(sys, rng, scale))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
