import math

import numpy as np
import pytest

from cqedsource.model import (
    InitialSuperposition,
    PolarizationBranch,
    default_grid,
    spectral_envelope,
    square_pulse,
)

# Caption parameters of the reference curves (angular MHz, us).
G, INTENSITY, DELTA, KC, T = 60.0, 3600.0, 1500.0, 25.0, 30.0
MU = G**2 * INTENSITY * T / (4 * DELTA**2 * KC)


def closed_p(n, mu=MU):
    return (1 - math.exp(-2 * mu)) ** n


@pytest.fixture(scope="session")
def branch():
    return PolarizationBranch(G, DELTA, KC)


@pytest.fixture(scope="session")
def pulse():
    return square_pulse(INTENSITY, T)


@pytest.fixture(scope="session")
def balanced():
    return InitialSuperposition.balanced()


@pytest.fixture(scope="session")
def grid():
    return default_grid(T, KC)


@pytest.fixture(scope="session")
def envelope(pulse, branch, grid):
    return spectral_envelope(pulse, branch, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
