"""Environment capability shared by the tabular and continuous domains."""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from ..core import State


class Environment(ABC):
    """Fixed-horizon episodic environment.

    ``step`` acts on underlying states and is a pure function of
    (state, action, rng draw); ``observe`` maps underlying states to what
    policies and models see (identity unless partially observed).
    """

    env_id: str
    action_count: int
    horizon: int
    is_tabular: bool = False

    @abstractmethod
    def reset(self, rng: np.random.Generator) -> State:
        ...

    @abstractmethod
    def step(self, state: State, action: int, rng: np.random.Generator) -> tuple[State, float, bool]:
        ...

    def observe(self, state: State) -> State:
        return state
