import numpy as np
import pytest

from opebench.core import Dataset, State, Step, Trajectory
from opebench.envs import model_fail, model_win
from opebench.envs.policies import TablePolicy


@pytest.fixture(scope="session")
def fail_env():
    return model_fail()


@pytest.fixture(scope="session")
def win_env():
    return model_win()


def random_policy_table(rng, num_states, num_actions, floor=0.05):
    raw = rng.random((num_states, num_actions)) + floor
    return raw / raw.sum(axis=1, keepdims=True)


def random_trajectory(rng, horizon=4, num_states=3, num_actions=2):
    """A synthetic logged trajectory with strictly positive behavior probs."""
    steps = []
    for _ in range(horizon):
        pb = float(rng.uniform(0.1, 0.9))
        steps.append(
            Step(
                state=State(discrete_id=int(rng.integers(num_states))),
                action=int(rng.integers(num_actions)),
                reward=float(rng.normal()),
                behavior_prob=pb,
            )
        )
    return Trajectory(steps=tuple(steps))


def random_dataset(rng, n=8, horizon=4, num_states=3, num_actions=2, gamma=0.9):
    trajs = tuple(random_trajectory(rng, horizon, num_states, num_actions) for _ in range(n))
    return Dataset(trajectories=trajs, gamma=gamma, horizon=horizon)


def table_policy(rng, num_states=3, num_actions=2):
    return TablePolicy(random_policy_table(rng, num_states, num_actions))
