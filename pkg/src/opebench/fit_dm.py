"""Model fitting for the direct-method component.

The main fit solves the importance-weighted regression whose rows are every
(trajectory, step) pair: features phi(x_t, a_t), target the corrected suffix
return, weight gamma^t w_{0:t} / n.  The naive variant ("dm0") keeps the
corrected targets but weights all rows uniformly.  An exact occupancy-
weighted objective, computed by dynamic programming on tabular domains,
serves as the convergence oracle for the sample-average fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, Policy, State, Step
from .estimators import trajectory_arrays
from .linmodel import (
    DEFAULT_RIDGE,
    FeatureMap,
    GdConfig,
    LinearQModel,
    WlsProblem,
    gd_minimize,
    wls_solve_with_fallback,
)
from .envs.policies import greedy_action, is_deterministic
from .envs.tabular import (
    TabularEnv,
    q_by_remaining_horizon,
    state_occupancy_by_time,
)


class AllWeightsZeroError(ValueError):
    """No sample matches the (deterministic) evaluation policy."""


@dataclass
class DmFitConfig:
    mode: str = "dm"  # "dm" | "dm0"
    solver: str = "wls"  # "wls" | "gd"
    ridge: float = 0.0
    gd: GdConfig = field(default_factory=GdConfig)

    def __post_init__(self):
        if self.mode not in ("dm", "dm0"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.solver not in ("wls", "gd"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


def corrected_returns(data: Dataset, pi_e: Policy, pi_b: Policy | None = None) -> np.ndarray:
    """rbar[i, t]: importance-corrected suffix return of each step."""
    arr = trajectory_arrays(data, pi_e, pi_b)
    n, horizon = arr.rewards.shape
    rbar = np.empty((n, horizon))
    rbar[:, horizon - 1] = arr.rewards[:, horizon - 1]
    for t in range(horizon - 2, -1, -1):
        rbar[:, t] = arr.rewards[:, t] + data.gamma * arr.ratios[:, t + 1] * rbar[:, t + 1]
    return rbar


def _state_key(state: State, width: int) -> list[float]:
    key = [float(state.discrete_id)] if state.features is None else [float(v) for v in state.features]
    return key + [0.0] * (width - len(key))


def _canonical_order(
    steps: list[Step], y: np.ndarray, w: np.ndarray, extra: np.ndarray | None = None
) -> np.ndarray:
    """Total order on rows so the fit is invariant to trajectory order.

    Rows with equal keys have identical content, so any stable order of the
    multiset yields a bit-identical reduction.
    """
    width = max(
        1 if s.state.features is None else len(s.state.features) for s in steps
    )
    keys = [np.array([_state_key(s.state, width) for s in steps]).T]
    keys.append(np.array([float(s.action) for s in steps]))
    keys.append(y)
    keys.append(w)
    if extra is not None:
        keys.append(extra)
    stacked = np.vstack([np.atleast_2d(k) for k in keys])
    return np.lexsort(stacked[::-1])


def _feature_matrix(steps: list[Step], features: FeatureMap) -> np.ndarray:
    phi = np.zeros((len(steps), features.dim))
    for row, step in enumerate(steps):
        idx = features.one_hot_index(step.state, step.action)
        if idx is not None:
            phi[row, idx] = 1.0
        else:
            phi[row] = features.phi(step.state, step.action)
    return phi


def solve_weighted_rows(
    steps: list[Step],
    y: np.ndarray,
    w: np.ndarray,
    features: FeatureMap,
    ridge: float,
    solver: str = "wls",
    gd_config: GdConfig | None = None,
) -> np.ndarray:
    """Canonically ordered weighted least squares over (step, target, weight)
    rows.

    Absorbing padding steps map to the zero feature vector and are dropped
    (they cannot move the normal equations).  One-hot feature maps solve in
    closed form per cell; the dense path is the general reference.
    """
    keep = [i for i, s in enumerate(steps) if not s.state.is_absorbing]
    steps = [steps[i] for i in keep]
    y = np.asarray(y, dtype=float)[keep]
    w = np.asarray(w, dtype=float)[keep]
    order = _canonical_order(steps, y, w)
    steps = [steps[i] for i in order]
    y = y[order]
    w = w[order]
    if solver == "gd":
        problem = WlsProblem(_feature_matrix(steps, features), y, w, ridge=ridge)
        return gd_minimize(problem.objective, np.zeros(features.dim), gd_config).beta
    indices = [features.one_hot_index(s.state, s.action) for s in steps]
    if all(i is not None for i in indices):
        gram = np.bincount(indices, weights=w, minlength=features.dim)
        rhs = np.bincount(indices, weights=w * y, minlength=features.dim)
        if ridge == 0.0 and np.any(gram <= 0.0):
            ridge = DEFAULT_RIDGE  # same fallback as the dense solver
        return rhs / (gram + ridge)
    problem = WlsProblem(_feature_matrix(steps, features), y, w, ridge=ridge)
    return wls_solve_with_fallback(problem)


def _rl_rows(
    data: Dataset, pi_e: Policy, pi_b: Policy | None, mode: str
) -> tuple[list[Step], np.ndarray, np.ndarray]:
    arr = trajectory_arrays(data, pi_e, pi_b)
    rbar = corrected_returns(data, pi_e, pi_b)
    n = data.n
    if mode == "dm":
        weights = (arr.discounts[None, :] * arr.cum) / n
    else:
        weights = np.full_like(rbar, 1.0 / n)
    steps = [s for traj in data.trajectories for s in traj.steps]
    return steps, rbar.ravel(), weights.ravel()


def dm_fit_rl(
    data: Dataset,
    pi_e: Policy,
    pi_b: Policy | None,
    features: FeatureMap,
    config: DmFitConfig | None = None,
) -> LinearQModel:
    cfg = config or DmFitConfig()
    steps, y, w = _rl_rows(data, pi_e, pi_b, cfg.mode)
    beta = solve_weighted_rows(steps, y, w, features, cfg.ridge, cfg.solver, cfg.gd)
    return LinearQModel(beta=beta, features=features)


def dm_objective_rl(
    data: Dataset,
    pi_e: Policy,
    pi_b: Policy | None,
    features: FeatureMap,
    beta: np.ndarray,
    mode: str = "dm",
) -> tuple[float, np.ndarray]:
    """(value, gradient) of the sample-average regression objective."""
    steps, y, w = _rl_rows(data, pi_e, pi_b, mode)
    problem = WlsProblem(_feature_matrix(steps, features), y, w)
    return problem.objective(np.asarray(beta, dtype=float))


def dm_fit_bandit(
    samples: Sequence[Step],
    pi_e: Policy,
    features: FeatureMap,
    config: DmFitConfig | None = None,
) -> LinearQModel:
    """Bandit fit: rows weighted 1/pi_b on samples matching the
    deterministic evaluation policy ("dm"), or uniformly over all samples
    ("dm0")."""
    cfg = config or DmFitConfig()
    steps = list(samples)
    n = len(steps)
    y = np.array([s.reward for s in steps])
    if cfg.mode == "dm":
        if not is_deterministic(pi_e, [s.state for s in steps]):
            raise ValueError("bandit dm fit requires a deterministic evaluation policy")
        w = np.array(
            [
                (1.0 / s.behavior_prob) if greedy_action(pi_e, s.state) == s.action else 0.0
                for s in steps
            ]
        ) / n
        if not np.any(w > 0):
            raise AllWeightsZeroError("no sample matches the evaluation policy")
    else:
        w = np.full(n, 1.0 / n)
    beta = solve_weighted_rows(steps, y, w, features, cfg.ridge, cfg.solver, cfg.gd)
    return LinearQModel(beta=beta, features=features)


def occupancy_objective_check(
    env: TabularEnv,
    pi_e: Policy,
    model: LinearQModel,
    gamma: float,
    horizon: int | None = None,
) -> float:
    """Exact occupancy-weighted squared model error, by dynamic programming.

    The truth at step t is the remaining-horizon action value, so even the
    best stationary model generally scores above zero on domains whose
    values are time-dependent.  The gamma = 1 normalizer is 1/T (the limit
    of the (1 - gamma) / (1 - gamma^T) factor).
    """
    if not isinstance(env, TabularEnv):
        raise ValueError("occupancy objective requires a finite tabular environment")
    horizon = env.horizon if horizon is None else horizon
    q_true = q_by_remaining_horizon(env, pi_e, gamma)
    occupancy = state_occupancy_by_time(env, pi_e)
    pi = env.policy_table(pi_e)
    qhat = np.array(
        [model.q_row(env.observe(s), env.action_count) for s in env.states()]
    )
    total = 0.0
    for t in range(horizon):
        gap = q_true[horizon - 1 - t] - qhat
        total += gamma**t * float(np.einsum("s,sa,sa->", occupancy[t], pi, gap**2))
    if gamma == 1.0:
        return total / horizon
    return total * (1.0 - gamma) / (1.0 - gamma**horizon)
