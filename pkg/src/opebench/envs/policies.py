"""Policy implementations: probability tables, uniform, greedy-linear, and
the friendly / adversarial / neutral softening constructions.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from ..core import Policy, State
from ..linmodel import LinearQModel

SOFTENING_KINDS = ("friendly", "adversarial", "neutral")


class InvalidSofteningError(ValueError):
    pass


@dataclass(frozen=True)
class SofteningSpec:
    """Softening parameters; ``beta_soft`` is the noise amplitude (named to
    avoid clashing with the model parameter beta)."""

    kind: str
    alpha: float = 0.0
    beta_soft: float = 0.0

    def __post_init__(self):
        if self.kind not in SOFTENING_KINDS:
            raise InvalidSofteningError(f"unknown softening kind {self.kind!r}")
        if self.kind == "neutral":
            return
        lo = self.alpha - 0.5 * self.beta_soft
        hi = self.alpha + 0.5 * self.beta_soft
        if not (0.0 <= lo and hi <= 1.0):
            raise InvalidSofteningError(
                f"alpha +/- beta/2 must stay in [0, 1], got [{lo}, {hi}]"
            )


class TablePolicy(Policy):
    """Probability table over (discrete state, action)."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=float)
        if self.table.ndim != 2:
            raise ValueError("table must be 2-d (states x actions)")
        if np.any(self.table < 0) or np.any(np.abs(self.table.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("rows must be probability distributions")
        self.action_count = self.table.shape[1]
        self._cum_rows = [tuple(np.cumsum(row)) for row in self.table]

    def _probs(self, state: State) -> np.ndarray:
        return self.table[state.discrete_id]

    def prob(self, state: State, action: int) -> float:
        if state.is_absorbing:
            return super().prob(state, action)
        return float(self.table[state.discrete_id, action])

    def _sample(self, state: State, rng: np.random.Generator) -> int:
        return bisect_right(self._cum_rows[state.discrete_id], rng.random())


class UniformPolicy(Policy):
    def __init__(self, action_count: int):
        self.action_count = action_count
        self._uniform = np.full(action_count, 1.0 / action_count)

    def _probs(self, state: State) -> np.ndarray:
        return self._uniform


class DeterministicPolicy(Policy):
    """Base for policies that put probability one on a single action."""

    def action(self, state: State) -> int:
        raise NotImplementedError

    def _probs(self, state: State) -> np.ndarray:
        probs = np.zeros(self.action_count)
        probs[self.action(state)] = 1.0
        return probs

    def _sample(self, state: State, rng: np.random.Generator) -> int:
        return self.action(state)


class ActionTablePolicy(DeterministicPolicy):
    """Deterministic policy given by an action per discrete state."""

    def __init__(self, actions: np.ndarray, action_count: int):
        self.actions = np.asarray(actions, dtype=int)
        self.action_count = action_count

    def action(self, state: State) -> int:
        return int(self.actions[state.discrete_id])


class GreedyLinearPolicy(DeterministicPolicy):
    """argmax_a of a linear Q model; ties break toward the lowest index."""

    def __init__(self, model: LinearQModel, action_count: int):
        self.model = model
        self.action_count = action_count

    def action(self, state: State) -> int:
        return int(np.argmax(self.model.q_row(state, self.action_count)))


def is_deterministic(policy: Policy, states) -> bool:
    """True when the policy is an argmax policy on every given state."""
    if isinstance(policy, DeterministicPolicy):
        return True
    return all(np.max(policy.action_probs(s)) > 1.0 - 1e-12 for s in states)


def greedy_action(policy: Policy, state: State) -> int:
    if isinstance(policy, DeterministicPolicy):
        return policy.action(state)
    return int(np.argmax(policy.action_probs(state)))


class SoftenedPolicy(Policy):
    """Stochastic policy built by mixing a deterministic base with noise.

    The noise u ~ U[-0.5, 0.5] is drawn fresh per decision inside
    :meth:`sample`; probability queries return the expected mixture (the
    u-average), which is the softening with amplitude 0.  This keeps
    importance ratios well-defined constants per (state, action).
    """

    def __init__(self, base: DeterministicPolicy, spec: SofteningSpec):
        self.base = base
        self.spec = spec
        self.action_count = base.action_count
        if self.action_count < 2:
            raise InvalidSofteningError("softening needs at least 2 actions")

    def _mixture(self, base_action: int, mass: float) -> np.ndarray:
        l = self.action_count
        probs = np.empty(l)
        if self.spec.kind == "friendly":
            probs[:] = (1.0 - mass) / (l - 1)
            probs[base_action] = mass
        else:  # adversarial: mass spread over non-base, residual uniform on all
            probs[:] = mass / (l - 1) + (1.0 - mass) / l
            probs[base_action] = (1.0 - mass) / l
        return probs

    def _probs(self, state: State) -> np.ndarray:
        if self.spec.kind == "neutral":
            return np.full(self.action_count, 1.0 / self.action_count)
        return self._mixture(self.base.action(state), self.spec.alpha)

    def _sample(self, state: State, rng: np.random.Generator) -> int:
        if self.spec.kind == "neutral":
            return int(rng.integers(self.action_count))
        u = rng.random() - 0.5
        probs = self._mixture(self.base.action(state), self.spec.alpha + self.spec.beta_soft * u)
        cum = np.cumsum(probs)
        return int(np.searchsorted(cum, rng.random(), side="right"))


def soften(base: DeterministicPolicy, spec: SofteningSpec) -> Policy:
    """Build a softened policy; per-decision noise uses the sampling rng."""
    return SoftenedPolicy(base, spec)
