import numpy as np
import pytest

from mflab.activation import softplus_dot, tanh_dot
from mflab.dynamics import DiscreteDataDistribution, InitialLaw

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def four_atoms():
    return DiscreteDataDistribution.from_atoms([
        ([-1.0], -0.6, 0.25), ([-0.5], 0.2, 0.25), ([0.5], 0.7, 0.25), ([1.0], 0.9, 0.25)])


@pytest.fixture
def tanh1():
    return tanh_dot(1, 1.0, 1.0)


@pytest.fixture
def softplus1():
    return softplus_dot(1, 1.0, 1.0)


@pytest.fixture
def unit_init():
    return InitialLaw("uniform_ball", 1.0, D=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
