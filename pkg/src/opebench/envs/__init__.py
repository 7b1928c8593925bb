"""Benchmark environments, policies, trajectory generation, and oracles."""

from .base import Environment
from .bandit import (
    classification_to_bandit,
    classification_truth,
    context_states,
    load_classification_csv,
)
from .continuous import CartPoleEnv, MountainCarEnv, cart_pole, mountain_car
from .generate import TruthResult, generate_trajectories, rollout, true_value
from .policies import (
    ActionTablePolicy,
    DeterministicPolicy,
    GreedyLinearPolicy,
    InvalidSofteningError,
    SoftenedPolicy,
    SofteningSpec,
    TablePolicy,
    UniformPolicy,
    greedy_action,
    is_deterministic,
    soften,
)
from .tabular import (
    TabularEnv,
    enumerate_value,
    exact_dp_value,
    maze_4x4,
    model_fail,
    model_win,
    occupancy_table,
    occupancy_weighted_q,
    q_by_remaining_horizon,
    state_occupancy_by_time,
)
from .training import (
    ControlTrainConfig,
    LogisticConfig,
    train_control_policy,
    train_logistic,
)

ENVIRONMENT_IDS = ("model-fail", "model-win", "maze-4x4", "mountain-car", "cart-pole")


def make_env(env_id: str) -> Environment:
    try:
        factory = {
            "model-fail": model_fail,
            "model-win": model_win,
            "maze-4x4": maze_4x4,
            "mountain-car": mountain_car,
            "cart-pole": cart_pole,
        }[env_id]
    except KeyError:
        raise ValueError(
            f"unknown environment {env_id!r}; valid ids: {', '.join(ENVIRONMENT_IDS)}"
        ) from None
    return factory()
