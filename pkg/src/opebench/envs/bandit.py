"""Classification-to-bandit transform and CSV loading for bandit benchmarks."""

from __future__ import annotations

import csv

import numpy as np

from ..core import Policy, State, Step


def load_classification_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Numeric feature columns with a final integer label column."""
    rows = []
    with open(path) as fh:
        for record in csv.reader(fh):
            if not record:
                continue
            rows.append([float(v) for v in record])
    data = np.asarray(rows)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError("expected at least one feature column plus a label column")
    features = data[:, :-1]
    labels = data[:, -1].astype(int)
    if np.any(labels < 0):
        raise ValueError("labels must be nonnegative integers")
    return features, labels


def context_states(features: np.ndarray) -> list[State]:
    return [State(features=tuple(float(v) for v in row)) for row in features]


def classification_to_bandit(
    examples: list[tuple[State, int]],
    policy: Policy,
    rng: np.random.Generator,
) -> list[Step]:
    """One bandit sample per example: action drawn from the policy, unit
    reward iff the action matches the label."""
    samples = []
    for state, label in examples:
        if not 0 <= label < policy.action_count:
            raise ValueError(f"label {label} outside [0, {policy.action_count})")
        action = policy.sample(state, rng)
        samples.append(
            Step(
                state=state,
                action=action,
                reward=1.0 if action == label else 0.0,
                behavior_prob=policy.prob(state, action),
            )
        )
    return samples


def classification_truth(examples: list[tuple[State, int]], policy: Policy) -> float:
    """Exact value of a stochastic policy on a labeled set: mean pi(y|x)."""
    return float(np.mean([policy.prob(state, label) for state, label in examples]))
