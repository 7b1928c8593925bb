"""Linear action-value models, feature maps, and the two generic solvers
(closed-form weighted least squares and full-batch gradient descent) shared
by every fitting objective.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import State, Policy

DEFAULT_RIDGE = 1e-8


class SingularSystemError(ValueError):
    """Weighted Gram matrix is rank-deficient and no ridge was requested."""


class DivergenceError(RuntimeError):
    """Objective exceeded the divergence limit or became non-finite."""


class FeatureMap:
    """Maps (state, action) to a fixed-length feature vector.

    The absorbing padding state maps to the zero vector, so padded steps
    contribute nothing to any model value.
    """

    dim: int

    def phi(self, state: State, action: int) -> np.ndarray:
        if state.is_absorbing:
            return np.zeros(self.dim)
        return self._phi(state, action)

    def _phi(self, state: State, action: int) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self._index(state, action)] = 1.0
        return out

    def one_hot_index(self, state: State, action: int) -> int | None:
        """Index of the single nonzero entry, or None for dense/absorbing."""
        if state.is_absorbing:
            return None
        return self._index(state, action)

    def _index(self, state: State, action: int) -> int:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class TabularFeatures(FeatureMap):
    """Exact one-hot representation over (discrete state, action)."""

    def __init__(self, num_states: int, num_actions: int):
        self.num_states = num_states
        self.num_actions = num_actions
        self.dim = num_states * num_actions

    def _index(self, state: State, action: int) -> int:
        sid = state.discrete_id
        if sid is None or not 0 <= sid < self.num_states:
            raise ValueError(f"state {state} outside tabular range {self.num_states}")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} outside range {self.num_actions}")
        return sid * self.num_actions + action

    def descriptor(self) -> dict:
        return {
            "kind": "tabular",
            "num_states": self.num_states,
            "num_actions": self.num_actions,
        }


def _bin_index(value: float, lo: float, hi: float, bins: int) -> int:
    # Half-open bins [lo_k, hi_k): boundaries land in the higher bin (the
    # 1e-9 bin-unit nudge keeps that true under float rounding), and
    # out-of-range values clamp to the boundary bin.
    idx = int(math.floor((value - lo) / (hi - lo) * bins + 1e-9))
    return min(max(idx, 0), bins - 1)


class TileFeatures(FeatureMap):
    """One-hot tile over binned state dimensions, replicated per horizon bin.

    States are feature vectors whose last component is the step index t.
    """

    def __init__(
        self,
        ranges: Sequence[tuple[float, float]],
        bins: Sequence[int],
        horizon_bins: int,
        num_actions: int,
        horizon: int,
        kind: str = "tiles",
    ):
        if len(ranges) != len(bins):
            raise ValueError("ranges and bins must align")
        if horizon_bins < 1 or any(b < 1 for b in bins):
            raise ValueError("bin counts must be >= 1")
        self.ranges = [tuple(r) for r in ranges]
        self.bins = list(bins)
        self.horizon_bins = horizon_bins
        self.num_actions = num_actions
        self.horizon = horizon
        self.kind = kind
        self.dim = int(np.prod(bins)) * horizon_bins * num_actions

    def _index(self, state: State, action: int) -> int:
        if state.features is None or len(state.features) != len(self.bins) + 1:
            raise ValueError(f"expected {len(self.bins) + 1}-component state, got {state}")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} outside range {self.num_actions}")
        idx = _bin_index(state.features[-1], 0.0, float(self.horizon), self.horizon_bins)
        for value, (lo, hi), nbins in zip(state.features[:-1], self.ranges, self.bins):
            idx = idx * nbins + _bin_index(value, lo, hi, nbins)
        return idx * self.num_actions + action

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "ranges": [list(r) for r in self.ranges],
            "bins": self.bins,
            "horizon_bins": self.horizon_bins,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
        }


def mountaincar_features(
    position_bins: int = 8,
    velocity_bins: int = 8,
    horizon_bins: int = 10,
    num_actions: int = 3,
    position_range: tuple[float, float] = (-1.2, 0.6),
    velocity_range: tuple[float, float] = (-0.07, 0.07),
    horizon: int = 250,
) -> TileFeatures:
    """Tile one-hot over (position, velocity, action) per horizon bin."""
    return TileFeatures(
        ranges=[position_range, velocity_range],
        bins=[position_bins, velocity_bins],
        horizon_bins=horizon_bins,
        num_actions=num_actions,
        horizon=horizon,
        kind="mountain-car-tiles",
    )


def cartpole_features(
    bins: Sequence[int] = (4, 4, 4, 4),
    horizon_bins: int = 10,
    num_actions: int = 2,
    horizon: int = 250,
) -> TileFeatures:
    """Tile one-hot over (position, velocity, angle, angular velocity)."""
    ranges = [(-2.4, 2.4), (-3.0, 3.0), (-0.21, 0.21), (-3.0, 3.0)]
    return TileFeatures(
        ranges=ranges,
        bins=list(bins),
        horizon_bins=horizon_bins,
        num_actions=num_actions,
        horizon=horizon,
        kind="cart-pole-tiles",
    )


class ContextActionFeatures(FeatureMap):
    """Dense block features for bandit contexts: e_a (x) [x, 1]."""

    def __init__(self, context_dim: int, num_actions: int, bias: bool = True):
        self.context_dim = context_dim
        self.num_actions = num_actions
        self.bias = bias
        self.block = context_dim + (1 if bias else 0)
        self.dim = self.block * num_actions

    def _phi(self, state: State, action: int) -> np.ndarray:
        if state.features is None or len(state.features) != self.context_dim:
            raise ValueError(f"expected {self.context_dim}-dim context, got {state}")
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} outside range {self.num_actions}")
        out = np.zeros(self.dim)
        start = action * self.block
        out[start : start + self.context_dim] = state.features
        if self.bias:
            out[start + self.context_dim] = 1.0
        return out

    def one_hot_index(self, state: State, action: int) -> int | None:
        return None

    def descriptor(self) -> dict:
        return {
            "kind": "context-action",
            "context_dim": self.context_dim,
            "num_actions": self.num_actions,
            "bias": self.bias,
        }


def feature_map_from_descriptor(desc: dict) -> FeatureMap:
    kind = desc["kind"]
    if kind == "tabular":
        return TabularFeatures(desc["num_states"], desc["num_actions"])
    if kind in ("tiles", "mountain-car-tiles", "cart-pole-tiles"):
        return TileFeatures(
            ranges=[tuple(r) for r in desc["ranges"]],
            bins=desc["bins"],
            horizon_bins=desc["horizon_bins"],
            num_actions=desc["num_actions"],
            horizon=desc["horizon"],
            kind=kind,
        )
    if kind == "context-action":
        return ContextActionFeatures(desc["context_dim"], desc["num_actions"], desc["bias"])
    raise ValueError(f"unknown feature map kind {kind!r}")


@dataclass
class LinearQModel:
    """Q(x, a) = beta . phi(x, a) with the induced V(x) = E_{a~pi}[Q(x, a)]."""

    beta: np.ndarray
    features: FeatureMap

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (self.features.dim,):
            raise ValueError(
                f"beta has shape {self.beta.shape}, feature map dim {self.features.dim}"
            )
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("beta must be finite")

    def q(self, state: State, action: int) -> float:
        idx = self.features.one_hot_index(state, action)
        if idx is not None:
            return float(self.beta[idx])
        return float(self.beta @ self.features.phi(state, action))

    def q_row(self, state: State, action_count: int) -> np.ndarray:
        return np.array([self.q(state, a) for a in range(action_count)])

    def v(self, state: State, policy: Policy) -> float:
        probs = policy.action_probs(state)
        return float(probs @ self.q_row(state, policy.action_count))


def save_model(model: LinearQModel, path) -> None:
    payload = {
        "kappa": int(model.features.dim),
        "beta": [float(b) for b in model.beta],
        "feature_map": model.features.descriptor(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> LinearQModel:
    with open(path) as fh:
        payload = json.load(fh)
    features = feature_map_from_descriptor(payload["feature_map"])
    if payload["kappa"] != features.dim:
        raise ValueError("model kappa disagrees with feature map dimension")
    return LinearQModel(beta=np.array(payload["beta"]), features=features)


@dataclass
class WlsProblem:
    """Rows (phi_i, y_i, w_i) of a ridge-regularized weighted least squares."""

    phi: np.ndarray
    y: np.ndarray
    w: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.phi.shape[0] != self.y.shape[0] or self.y.shape != self.w.shape:
            raise ValueError("phi, y, w must have matching row counts")
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative")
        if not np.any(self.w > 0):
            raise ValueError("need at least one row with positive weight")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    def objective(self, beta: np.ndarray) -> tuple[float, np.ndarray]:
        resid = self.y - self.phi @ beta
        value = float(self.w @ resid**2 + self.ridge * beta @ beta)
        grad = -2.0 * (self.phi.T @ (self.w * resid)) + 2.0 * self.ridge * beta
        return value, grad


def wls_solve(problem: WlsProblem) -> np.ndarray:
    """Solve (Phi' W Phi + ridge I) beta = Phi' W y via Cholesky.

    Raises :class:`SingularSystemError` when ridge is zero and the weighted
    Gram matrix is rank-deficient; callers retry with ``DEFAULT_RIDGE``.
    """
    weighted = problem.phi * problem.w[:, None]
    gram = problem.phi.T @ weighted
    if problem.ridge > 0:
        gram = gram + problem.ridge * np.eye(gram.shape[0])
    rhs = weighted.T @ problem.y
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as err:
        raise SingularSystemError(
            "weighted Gram matrix is singular; retry with a positive ridge"
        ) from err
    z = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, z)


def wls_solve_with_fallback(problem: WlsProblem) -> np.ndarray:
    """wls_solve, retrying once with the documented default ridge."""
    try:
        return wls_solve(problem)
    except SingularSystemError:
        return wls_solve(
            WlsProblem(problem.phi, problem.y, problem.w, ridge=max(problem.ridge, DEFAULT_RIDGE))
        )


@dataclass
class GdConfig:
    """Full-batch gradient descent with backtracking line search."""

    max_iters: int = 5000
    grad_tol: float = 1e-6
    init_step: float = 1.0
    shrink: float = 0.5
    grow: float = 2.0
    armijo: float = 1e-4
    divergence_limit: float = 1e12


@dataclass
class GdResult:
    beta: np.ndarray
    value: float
    iterations: int
    converged: bool


def gd_minimize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    beta0: np.ndarray,
    config: GdConfig | None = None,
) -> GdResult:
    """Minimize a smooth objective, stopping at ||grad||_inf <= grad_tol.

    Returns the best-seen iterate after ``max_iters`` if the tolerance is
    never met.  Raises :class:`DivergenceError` on non-finite or exploding
    objective values.
    """
    cfg = config or GdConfig()
    beta = np.array(beta0, dtype=float)
    value, grad = objective(beta)
    _check_finite(value, cfg)
    best_beta, best_value = beta.copy(), value
    step = cfg.init_step
    for iteration in range(cfg.max_iters):
        if np.max(np.abs(grad)) <= cfg.grad_tol:
            return GdResult(beta, value, iteration, converged=True)
        sq = float(grad @ grad)
        while True:
            cand = beta - step * grad
            cand_value, cand_grad = objective(cand)
            # Non-finite or exploding probe values just mean the trial step
            # overshot: backtrack rather than abort.
            if math.isfinite(cand_value) and cand_value <= value - cfg.armijo * step * sq:
                break
            step *= cfg.shrink
            if step < 1e-300:
                # Gradient no longer yields descent at representable steps.
                return GdResult(best_beta, best_value, iteration, converged=False)
        beta, value, grad = cand, cand_value, cand_grad
        _check_finite(value, cfg)
        if value < best_value:
            best_beta, best_value = beta.copy(), value
        step *= cfg.grow
    if np.max(np.abs(grad)) <= cfg.grad_tol:
        return GdResult(beta, value, cfg.max_iters, converged=True)
    return GdResult(best_beta, best_value, cfg.max_iters, converged=False)


def _check_finite(value: float, cfg: GdConfig) -> None:
    if not math.isfinite(value) or abs(value) > cfg.divergence_limit:
        raise DivergenceError(f"objective value {value} diverged")


def check_gradient(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    beta: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error of the analytic gradient vs central differences."""
    beta = np.asarray(beta, dtype=float)
    _, grad = objective(beta)
    fd = np.zeros_like(grad)
    for k in range(beta.size):
        bumped = beta.copy()
        bumped[k] += h
        up, _ = objective(bumped)
        bumped[k] -= 2 * h
        down, _ = objective(bumped)
        fd[k] = (up - down) / (2 * h)
    scale = max(float(np.max(np.abs(fd))), 1e-12)
    return float(np.max(np.abs(grad - fd)) / scale)
