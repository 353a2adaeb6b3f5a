import numpy as np
import pytest

from simsr.mdp import FiniteMDP, Policy


def self_loop_mdp(gamma=0.5):
    """Two states that stay put forever; rewards 1 and 0."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    return FiniteMDP(P, np.array([[1.0], [0.0]]), gamma)


def uniform_mixing_mdp(gamma=0.5):
    """Two states that jump to either state with probability 1/2; rewards 1 and 0."""
    P = np.full((2, 1, 2), 0.5)
    return FiniteMDP(P, np.array([[1.0], [0.0]]), gamma)


@pytest.fixture
def self_loop():
    return self_loop_mdp()


@pytest.fixture
def uniform_mixing():
    return uniform_mixing_mdp()


@pytest.fixture
def single_action_policy():
    return Policy(np.ones((2, 1)))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
