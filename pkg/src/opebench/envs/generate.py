"""Trajectory generation and ground-truth value oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import ABSORBING, NOOP_ACTION, Dataset, Policy, Step, Trajectory
from .base import Environment
from .tabular import TabularEnv, enumerate_value, exact_dp_value

PAD_STEP = Step(state=ABSORBING, action=NOOP_ACTION, reward=0.0, behavior_prob=1.0)


def rollout(env: Environment, policy: Policy, rng: np.random.Generator) -> Trajectory:
    """One fixed-horizon trajectory; early termination pads absorbing steps."""
    steps = []
    state = env.reset(rng)
    done = False
    for _ in range(env.horizon):
        if done:
            steps.append(PAD_STEP)
            continue
        obs = env.observe(state)
        action = policy.sample(obs, rng)
        pb = policy.prob(obs, action)
        state, reward, done = env.step(state, action, rng)
        steps.append(Step(state=obs, action=action, reward=reward, behavior_prob=pb))
    terminal = ABSORBING if done else env.observe(state)
    return Trajectory(steps=tuple(steps), terminal_state=terminal)


def generate_trajectories(
    env: Environment,
    policy: Policy,
    n: int,
    seed: int,
    gamma: float = 1.0,
    behavior_id: str = "",
) -> Dataset:
    """Generate n trajectories; bit-reproducible under (env, policy, n, seed).

    Each trajectory draws from its own rng stream derived from (seed, index),
    so results do not depend on evaluation order.
    """
    trajectories = tuple(
        rollout(env, policy, np.random.default_rng([seed, i])) for i in range(n)
    )
    return Dataset(
        trajectories=trajectories,
        gamma=gamma,
        horizon=env.horizon,
        env_id=env.env_id,
        behavior_id=behavior_id,
        seed=seed,
    )


@dataclass(frozen=True)
class TruthResult:
    value: float
    se: float
    method: str


def true_value(
    env: Environment,
    policy: Policy,
    gamma: float,
    method: str = "exact-dp",
    episodes: int = 100_000,
    seed: int = 0,
) -> TruthResult:
    """Ground-truth policy value.

    ``exact-dp`` and ``enumerate`` require a tabular environment and return
    the exact value (SE 0); ``monte-carlo`` simulates ``episodes`` on-policy
    rollouts and reports the standard error of the mean.
    """
    if method in ("exact-dp", "enumerate"):
        if not isinstance(env, TabularEnv):
            raise ValueError(f"method {method!r} requires a tabular environment")
        if method == "exact-dp":
            return TruthResult(exact_dp_value(env, policy, gamma), 0.0, method)
        return TruthResult(enumerate_value(env, policy, gamma), 0.0, method)
    if method == "monte-carlo":
        discounts = gamma ** np.arange(env.horizon)
        returns = np.empty(episodes)
        for i in range(episodes):
            traj = rollout(env, policy, np.random.default_rng([seed, i]))
            returns[i] = discounts @ [s.reward for s in traj.steps]
        se = float(returns.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else float("inf")
        return TruthResult(float(returns.mean()), se, method)
    raise ValueError(f"unknown truth method {method!r}")
