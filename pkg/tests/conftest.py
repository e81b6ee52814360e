import numpy as np
import pytest
from hypothesis import settings

from cspda.envs import build_queue_cmdp, random_cmdp
from cspda.model import CmdpModel

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def one_state_two_actions(gamma=0.5) -> CmdpModel:
    """r = [1, 0], g = [-1, 1]: the LP optimum splits mass evenly."""
    return CmdpModel(
        transition=np.ones((2, 1, 1)),
        reward=[[1.0, 0.0]],
        constraint_costs=[[[-1.0, 1.0]]],
        discount=gamma,
        initial_dist=[1.0],
    )


def random_policy(rng, S, A, floor=0.0):
    pi = rng.dirichlet(np.ones(A), size=S) + floor
    return pi / pi.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def queue():
    return build_queue_cmdp()


@pytest.fixture(scope="session")
def hand_model():
    return one_state_two_actions()


@pytest.fixture(scope="session")
def small_random():
    return random_cmdp(3, 2, 2, seed=7)
