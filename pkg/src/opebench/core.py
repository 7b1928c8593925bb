"""Data model for off-policy evaluation: trajectories, policies, datasets,
returns, and importance ratios.

Actions are plain integer indices in ``[0, action_count)``.  All container
types are immutable after construction and safe to share across threads.

Episodes that terminate before the configured horizon are padded with the
``ABSORBING`` state, the no-op action ``NOOP_ACTION`` (index 0), reward 0,
and behavior probability 1, so every ratio/return formula applies unchanged
to fixed-length trajectories.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

NOOP_ACTION = 0

_ABSORBING_ID = -1


class AbsoluteContinuityError(ValueError):
    """A logged action has zero probability under the behavior policy."""


@dataclass(frozen=True, slots=True)
class State:
    """Either a discrete state (``discrete_id``) or a feature vector.

    ``discrete_id == -1`` is reserved for the absorbing padding state.
    """

    discrete_id: int | None = None
    features: tuple[float, ...] | None = None

    def __post_init__(self):
        if (self.discrete_id is None) == (self.features is None):
            raise ValueError("state needs exactly one of discrete_id / features")
        if self.features is not None and not all(math.isfinite(f) for f in self.features):
            raise ValueError("state features must be finite")

    @property
    def is_absorbing(self) -> bool:
        return self.discrete_id == _ABSORBING_ID


ABSORBING = State(discrete_id=_ABSORBING_ID)


@dataclass(frozen=True, slots=True)
class Step:
    """One logged transition: (state, action, reward, behavior probability)."""

    state: State
    action: int
    reward: float
    behavior_prob: float

    def __post_init__(self):
        if not 0.0 < self.behavior_prob <= 1.0:
            raise ValueError(f"behavior_prob must be in (0, 1], got {self.behavior_prob}")
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")


@dataclass(frozen=True, slots=True)
class Trajectory:
    steps: tuple[Step, ...]
    terminal_state: State | None = None

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Dataset:
    """Fixed-horizon trajectories logged under one behavior policy."""

    trajectories: tuple[Trajectory, ...]
    gamma: float
    horizon: int
    env_id: str = ""
    behavior_id: str = ""
    seed: int = 0

    def __post_init__(self):
        if len(self.trajectories) < 1:
            raise ValueError("dataset needs at least one trajectory")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        for traj in self.trajectories:
            if len(traj) != self.horizon:
                raise ValueError(
                    f"trajectory length {len(traj)} != horizon {self.horizon}"
                )

    @property
    def n(self) -> int:
        return len(self.trajectories)


class Policy(ABC):
    """Stochastic mapping from states to a finite action set.

    Subclasses implement :meth:`_probs` (and optionally :meth:`_sample`) for
    ordinary states; the base class owns the absorbing-state convention
    (probability 1 on ``NOOP_ACTION``).
    """

    action_count: int

    @abstractmethod
    def _probs(self, state: State) -> np.ndarray:
        """Action probability vector at a non-absorbing state."""

    def action_probs(self, state: State) -> np.ndarray:
        if state.is_absorbing:
            probs = np.zeros(self.action_count)
            probs[NOOP_ACTION] = 1.0
            return probs
        return self._probs(state)

    def prob(self, state: State, action: int) -> float:
        if state.is_absorbing:
            return 1.0 if action == NOOP_ACTION else 0.0
        return float(self._probs(state)[action])

    def sample(self, state: State, rng: np.random.Generator) -> int:
        if state.is_absorbing:
            return NOOP_ACTION
        return self._sample(state, rng)

    def _sample(self, state: State, rng: np.random.Generator) -> int:
        cum = np.cumsum(self._probs(state))
        return int(np.searchsorted(cum, rng.random(), side="right"))


def step_ratio(step: Step, pi_e: Policy, pi_b: Policy | None = None) -> float:
    """Single-step ratio pi_e(a|x) / pi_b(a|x) for a logged step.

    With ``pi_b=None`` the denominator is the logged behavior probability;
    otherwise the policy is re-queried and must agree with the log to 1e-12.
    """
    pb = step.behavior_prob
    if pi_b is not None:
        queried = pi_b.prob(step.state, step.action)
        if queried <= 0.0:
            raise AbsoluteContinuityError(
                f"behavior policy gives zero probability to logged action {step.action}"
            )
        if abs(queried - pb) > 1e-12:
            raise ValueError(
                f"logged behavior_prob {pb} disagrees with policy query {queried}"
            )
        pb = queried
    return pi_e.prob(step.state, step.action) / pb


def step_ratios(traj: Trajectory, pi_e: Policy, pi_b: Policy | None = None) -> np.ndarray:
    return np.array([step_ratio(s, pi_e, pi_b) for s in traj.steps])


def cumulative_ratio(
    traj: Trajectory,
    pi_e: Policy,
    pi_b: Policy | None,
    t1: int,
    t2: int,
) -> float:
    """Cumulative importance ratio of steps t1..t2 inclusive; 1 if t1 > t2."""
    if t1 > t2:
        return 1.0
    if t1 < 0 or t2 >= len(traj):
        raise IndexError(f"ratio range [{t1}, {t2}] outside trajectory of length {len(traj)}")
    out = 1.0
    for t in range(t1, t2 + 1):
        out *= step_ratio(traj.steps[t], pi_e, pi_b)
    return out


def discounted_return(traj: Trajectory, gamma: float) -> float:
    return math.fsum(gamma**t * s.reward for t, s in enumerate(traj.steps))


def corrected_return(
    traj: Trajectory,
    pi_e: Policy,
    pi_b: Policy | None,
    gamma: float,
    t: int,
) -> float:
    """Importance-corrected Monte Carlo suffix return from step t.

    Sum over tau >= t of gamma^(tau-t) times the ratio product over steps
    t+1..tau and the reward at tau; the tau = t term carries ratio 1.
    """
    if not 0 <= t < len(traj):
        raise IndexError(f"step index {t} outside trajectory of length {len(traj)}")
    out = traj.steps[-1].reward
    for tau in range(len(traj) - 2, t - 1, -1):
        out = traj.steps[tau].reward + gamma * step_ratio(traj.steps[tau + 1], pi_e, pi_b) * out
    return out


@dataclass(frozen=True)
class ContinuityReport:
    """Absolute-continuity violations: (state, action) with pi_b = 0 < pi_e."""

    violations: tuple[tuple[State, int], ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_absolute_continuity(
    pi_e: Policy, pi_b: Policy, states: Sequence[State]
) -> ContinuityReport:
    violations = []
    for state in states:
        probs_b = pi_b.action_probs(state)
        probs_e = pi_e.action_probs(state)
        for action in range(pi_b.action_count):
            if probs_b[action] == 0.0 and probs_e[action] > 0.0:
                violations.append((state, action))
    return ContinuityReport(tuple(violations))


# ---------------------------------------------------------------------------
# JSONL trajectory files.  Header line {"T", "gamma", "env", "seed", ...},
# then one {"steps": [{"x", "a", "r", "pb"}, ...], "terminal": ...} per line.
# Round-trips are bit-exact (floats serialize via repr).
# ---------------------------------------------------------------------------


def _encode_state(state: State | None):
    if state is None:
        return None
    if state.discrete_id is not None:
        return {"id": state.discrete_id}
    return {"f": list(state.features)}


def _decode_state(obj, cache: dict) -> State | None:
    if obj is None:
        return None
    if "id" in obj:
        sid = obj["id"]
        if sid not in cache:
            cache[sid] = ABSORBING if sid == _ABSORBING_ID else State(discrete_id=sid)
        return cache[sid]
    return State(features=tuple(obj["f"]))


def dumps_dataset(data: Dataset) -> str:
    header = {"T": data.horizon, "gamma": data.gamma, "env": data.env_id, "seed": data.seed}
    if data.behavior_id:
        header["behavior"] = data.behavior_id
    lines = [json.dumps(header)]
    for traj in data.trajectories:
        lines.append(
            json.dumps(
                {
                    "steps": [
                        {
                            "x": _encode_state(s.state),
                            "a": s.action,
                            "r": s.reward,
                            "pb": s.behavior_prob,
                        }
                        for s in traj.steps
                    ],
                    "terminal": _encode_state(traj.terminal_state),
                }
            )
        )
    return "\n".join(lines) + "\n"


def save_dataset(data: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_dataset(data))


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        cache: dict = {}
        trajectories = []
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            steps = tuple(
                Step(
                    state=_decode_state(s["x"], cache),
                    action=s["a"],
                    reward=s["r"],
                    behavior_prob=s["pb"],
                )
                for s in obj["steps"]
            )
            trajectories.append(
                Trajectory(steps=steps, terminal_state=_decode_state(obj["terminal"], cache))
            )
    return Dataset(
        trajectories=tuple(trajectories),
        gamma=header["gamma"],
        horizon=header["T"],
        env_id=header["env"],
        behavior_id=header.get("behavior", ""),
        seed=header["seed"],
    )


def samples_to_dataset(samples: Sequence[Step], gamma: float = 1.0, **meta) -> Dataset:
    """Wrap bandit samples as a horizon-1 dataset (bandits are T=1 MDPs)."""
    return Dataset(
        trajectories=tuple(Trajectory(steps=(s,)) for s in samples),
        gamma=gamma,
        horizon=1,
        **meta,
    )
