"""Value estimators over logged datasets: the importance-sampling family,
the direct-method readout, and doubly robust estimators for both the
fixed-horizon and the bandit (horizon-1) settings.

Importance ratios are never clipped or truncated; heavy-tailed ratio
behavior is a measured phenomenon the harness reports, not an error.  All
reductions run in fixed trajectory order (numpy pairwise / math.fsum) so
repeated runs are bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Dataset, Policy, State, Step, step_ratio
from .linmodel import LinearQModel

ESTIMATOR_IDS = (
    "dm0",
    "dm",
    "is",
    "step-is",
    "wis",
    "step-wis",
    "dr0",
    "dr",
    "mrdr0",
    "mrdr",
)

MODEL_FREE_ESTIMATORS = ("is", "step-is", "wis", "step-wis")


class DegenerateWeightsError(ValueError):
    """A self-normalizing denominator is zero."""


@dataclass(frozen=True)
class EstimatorReport:
    estimator_id: str
    value: float
    n: int
    seed: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("estimate must be finite")

    def to_json(self) -> str:
        return json.dumps(
            {"estimator": self.estimator_id, "value": self.value, "n": self.n, "seed": self.seed}
        )

    @staticmethod
    def from_json(line: str) -> "EstimatorReport":
        obj = json.loads(line)
        return EstimatorReport(obj["estimator"], obj["value"], obj["n"], obj["seed"])


@dataclass
class TrajectoryArrays:
    """Per-(trajectory, step) arrays shared by the estimator kernels.

    ``cum[i, t]`` is the cumulative ratio through step t and ``cum_prev`` the
    same product through step t-1 (1 at t=0).
    """

    rewards: np.ndarray
    ratios: np.ndarray
    cum: np.ndarray
    cum_prev: np.ndarray
    discounts: np.ndarray

    @property
    def returns(self) -> np.ndarray:
        return self.rewards @ self.discounts


def trajectory_arrays(data: Dataset, pi_e: Policy, pi_b: Policy | None = None) -> TrajectoryArrays:
    n, horizon = data.n, data.horizon
    rewards = np.empty((n, horizon))
    ratios = np.empty((n, horizon))
    for i, traj in enumerate(data.trajectories):
        for t, step in enumerate(traj.steps):
            rewards[i, t] = step.reward
            ratios[i, t] = step_ratio(step, pi_e, pi_b)
    cum = np.cumprod(ratios, axis=1)
    cum_prev = np.concatenate([np.ones((n, 1)), cum[:, :-1]], axis=1)
    discounts = data.gamma ** np.arange(horizon)
    return TrajectoryArrays(rewards, ratios, cum, cum_prev, discounts)


def is_estimate(data: Dataset, pi_e: Policy, pi_b: Policy | None = None) -> float:
    """Full-trajectory importance sampling: mean of w_{0:T-1} R_{0:T-1}."""
    arr = trajectory_arrays(data, pi_e, pi_b)
    return float(np.mean(arr.cum[:, -1] * arr.returns))


def step_is_estimate(data: Dataset, pi_e: Policy, pi_b: Policy | None = None) -> float:
    """Step-wise importance sampling with per-step cumulative ratios."""
    arr = trajectory_arrays(data, pi_e, pi_b)
    return float(np.mean((arr.cum * arr.rewards) @ arr.discounts))


def wis_estimate(data: Dataset, pi_e: Policy, pi_b: Policy | None = None) -> float:
    """Self-normalized IS: sum of w_i R_i over sum of w_i."""
    arr = trajectory_arrays(data, pi_e, pi_b)
    weights = arr.cum[:, -1]
    total = float(np.sum(weights))
    if total <= 0.0:
        raise DegenerateWeightsError("sum of trajectory ratios is zero")
    return float(np.sum(weights * arr.returns) / total)


def step_wis_estimate(data: Dataset, pi_e: Policy, pi_b: Policy | None = None) -> float:
    """Step-wise WIS: each step's ratio normalized by its column sum."""
    arr = trajectory_arrays(data, pi_e, pi_b)
    norms = arr.cum.sum(axis=0)
    if np.any(norms <= 0.0):
        raise DegenerateWeightsError("a per-step ratio normalizer is zero")
    return float(np.sum(arr.discounts * (arr.cum * arr.rewards).sum(axis=0) / norms))


def dm_estimate(initial_states: Sequence[State], model: LinearQModel, pi_e: Policy) -> float:
    """Direct-method readout: average model state value over start states."""
    return float(np.mean([model.v(state, pi_e) for state in initial_states]))


def model_arrays(
    data: Dataset, model: LinearQModel, pi_e: Policy
) -> tuple[np.ndarray, np.ndarray]:
    """qhat[i, t] at the logged action and vhat[i, t] under pi_e."""
    n, horizon = data.n, data.horizon
    qhat = np.empty((n, horizon))
    vhat = np.empty((n, horizon))
    for i, traj in enumerate(data.trajectories):
        for t, step in enumerate(traj.steps):
            qhat[i, t] = model.q(step.state, step.action)
            vhat[i, t] = model.v(step.state, pi_e)
    return qhat, vhat


def dr_per_trajectory(
    data: Dataset, model: LinearQModel, pi_e: Policy, pi_b: Policy | None = None
) -> np.ndarray:
    """Per-trajectory doubly robust terms:
    sum_t gamma^t [w_{0:t} r_t - (w_{0:t} Qhat_t - w_{0:t-1} Vhat_t)]."""
    arr = trajectory_arrays(data, pi_e, pi_b)
    qhat, vhat = model_arrays(data, model, pi_e)
    inner = arr.cum * arr.rewards - (arr.cum * qhat - arr.cum_prev * vhat)
    return inner @ arr.discounts


def dr_estimate(
    data: Dataset, model: LinearQModel, pi_e: Policy, pi_b: Policy | None = None
) -> float:
    """Doubly robust estimate: step-IS plus the model control variate."""
    return float(np.mean(dr_per_trajectory(data, model, pi_e, pi_b)))


def bandit_dr_estimate(
    samples: Sequence[Step], model: LinearQModel, pi_e: Policy
) -> float:
    """Bandit DR: mean of w (r - Qhat(x, a)) + Vhat(x)."""
    terms = []
    for s in samples:
        w = step_ratio(s, pi_e)
        terms.append(w * (s.reward - model.q(s.state, s.action)) + model.v(s.state, pi_e))
    return math.fsum(terms) / len(terms)


def estimate(
    estimator_id: str,
    data: Dataset,
    pi_e: Policy,
    pi_b: Policy | None = None,
    model: LinearQModel | None = None,
) -> float:
    """Dispatch by estimator id; dm*/dr*/mrdr* need the matching model."""
    if estimator_id in ("is",):
        return is_estimate(data, pi_e, pi_b)
    if estimator_id == "step-is":
        return step_is_estimate(data, pi_e, pi_b)
    if estimator_id == "wis":
        return wis_estimate(data, pi_e, pi_b)
    if estimator_id == "step-wis":
        return step_wis_estimate(data, pi_e, pi_b)
    if model is None:
        raise ValueError(f"estimator {estimator_id!r} requires a fitted model")
    if estimator_id in ("dm0", "dm"):
        starts = [traj.steps[0].state for traj in data.trajectories]
        return dm_estimate(starts, model, pi_e)
    if estimator_id in ("dr0", "dr", "mrdr0", "mrdr"):
        return dr_estimate(data, model, pi_e, pi_b)
    raise ValueError(f"unknown estimator {estimator_id!r}")
