"""Base-policy training: multinomial logistic regression for classification
bandits, and SARSA / Q-learning with linear function approximation for the
control domains.  Only the pipelines are reproducible here; learned weights
depend on the training seed and budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import State
from ..linmodel import (
    ContextActionFeatures,
    FeatureMap,
    GdConfig,
    LinearQModel,
    gd_minimize,
)
from .base import Environment
from .policies import GreedyLinearPolicy


@dataclass
class LogisticConfig:
    l2: float = 1e-4
    gd: GdConfig = field(default_factory=lambda: GdConfig(max_iters=500, grad_tol=1e-5))


def train_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    config: LogisticConfig | None = None,
) -> GreedyLinearPolicy:
    """Fit a softmax classifier by full-batch gradient descent and return
    the argmax policy over context states."""
    cfg = config or LogisticConfig()
    x = np.column_stack([np.asarray(features, dtype=float), np.ones(len(features))])
    y = np.asarray(labels, dtype=int)
    m, block = x.shape
    onehot = np.zeros((m, num_classes))
    onehot[np.arange(m), y] = 1.0

    def objective(beta: np.ndarray):
        w = beta.reshape(num_classes, block)
        scores = x @ w.T
        scores -= scores.max(axis=1, keepdims=True)
        exps = np.exp(scores)
        probs = exps / exps.sum(axis=1, keepdims=True)
        value = -np.sum(onehot * np.log(probs + 1e-300)) / m + cfg.l2 * beta @ beta
        grad = ((probs - onehot).T @ x) / m + 2.0 * cfg.l2 * w
        return float(value), grad.ravel()

    result = gd_minimize(objective, np.zeros(num_classes * block), cfg.gd)
    feature_map = ContextActionFeatures(block - 1, num_classes, bias=True)
    model = LinearQModel(beta=result.beta, features=feature_map)
    return GreedyLinearPolicy(model, num_classes)


@dataclass
class ControlTrainConfig:
    episodes: int = 400
    epsilon: float = 0.1
    learning_rate: float = 0.3
    gamma: float = 1.0
    seed: int = 0


def train_control_policy(
    env: Environment,
    algo: str,
    features: FeatureMap,
    config: ControlTrainConfig | None = None,
) -> GreedyLinearPolicy:
    """Train a linear Q function with epsilon-greedy SARSA or Q-learning and
    return the greedy policy."""
    if algo not in ("sarsa", "q-learning"):
        raise ValueError(f"unknown algorithm {algo!r}")
    cfg = config or ControlTrainConfig()
    rng = np.random.default_rng(cfg.seed)
    weights = np.zeros(features.dim)

    def q_values(state: State) -> np.ndarray:
        return np.array(
            [weights[features.one_hot_index(state, a)] for a in range(env.action_count)]
        )

    def pick(state: State) -> int:
        if rng.random() < cfg.epsilon:
            return int(rng.integers(env.action_count))
        return int(np.argmax(q_values(state)))

    for _ in range(cfg.episodes):
        state = env.reset(rng)
        obs = env.observe(state)
        action = pick(obs)
        for _ in range(env.horizon):
            state, reward, done = env.step(state, action, rng)
            idx = features.one_hot_index(obs, action)
            if done:
                target = reward
            else:
                obs_next = env.observe(state)
                action_next = pick(obs_next)
                if algo == "sarsa":
                    target = reward + cfg.gamma * weights[
                        features.one_hot_index(obs_next, action_next)
                    ]
                else:
                    target = reward + cfg.gamma * np.max(q_values(obs_next))
            weights[idx] += cfg.learning_rate * (target - weights[idx])
            if done:
                break
            obs, action = obs_next, action_next
    model = LinearQModel(beta=weights, features=features)
    return GreedyLinearPolicy(model, env.action_count)
