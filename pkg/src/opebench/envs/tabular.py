"""Tabular benchmark environments and their exact dynamic-programming
oracles.

* the 4-node chain with a shared observation (partially observed, T=2)
* the 3-state win/lose chain (fully observed, T=20)
* a 4x4 gridworld with deterministic moves (T=100)

Rewards are deterministic functions of (state, action, next state) in all
three domains.
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

from ..core import Policy, State
from .base import Environment
from .policies import TablePolicy


class TabularEnv(Environment):
    """Finite MDP with explicit transition / reward tables.

    ``reward[s, a, s']`` is the deterministic reward of the transition and
    ``obs_of_state`` maps underlying states to the observation ids seen by
    policies and models (identity except for partially observed domains).
    """

    is_tabular = True

    def __init__(
        self,
        env_id: str,
        transitions: np.ndarray,
        rewards: np.ndarray,
        p0: np.ndarray,
        horizon: int,
        obs_of_state: np.ndarray | None = None,
        eval_policy: Policy | None = None,
        behavior_policy: Policy | None = None,
    ):
        self.env_id = env_id
        self.transitions = np.asarray(transitions, dtype=float)
        self.rewards = np.asarray(rewards, dtype=float)
        self.p0 = np.asarray(p0, dtype=float)
        self.horizon = horizon
        self.num_states, self.action_count = self.transitions.shape[:2]
        if obs_of_state is None:
            obs_of_state = np.arange(self.num_states)
        self.obs_of_state = np.asarray(obs_of_state, dtype=int)
        self.num_observations = int(self.obs_of_state.max()) + 1
        self.eval_policy = eval_policy
        self.behavior_policy = behavior_policy
        rows = self.transitions.reshape(-1, self.num_states).sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to 1")
        self._states = [State(discrete_id=i) for i in range(self.num_states)]
        self._observations = [State(discrete_id=i) for i in range(self.num_observations)]
        self._obs_states = [self._observations[o] for o in self.obs_of_state]
        self._cum_p0 = tuple(np.cumsum(self.p0))
        self._cum_p = [
            [tuple(np.cumsum(self.transitions[s, a])) for a in range(self.action_count)]
            for s in range(self.num_states)
        ]

    def states(self) -> list[State]:
        return list(self._states)

    def observations(self) -> list[State]:
        return list(self._observations)

    def observe(self, state: State) -> State:
        return self._obs_states[state.discrete_id]

    def reset(self, rng: np.random.Generator) -> State:
        return self._states[bisect_right(self._cum_p0, rng.random())]

    def step(self, state: State, action: int, rng: np.random.Generator):
        sid = state.discrete_id
        nxt = bisect_right(self._cum_p[sid][action], rng.random())
        reward = self.rewards[sid, action, nxt]
        return self._states[nxt], float(reward), False

    def mean_rewards(self) -> np.ndarray:
        """r_bar[s, a] = sum_s' P(s'|s,a) reward(s, a, s')."""
        return np.einsum("sat,sat->sa", self.transitions, self.rewards)

    def policy_table(self, policy: Policy) -> np.ndarray:
        """pi[s, a] over underlying states (queried via observations)."""
        return np.stack([policy.action_probs(self.observe(s)) for s in self._states])


def _policy_markov(env: TabularEnv, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    pi = env.policy_table(policy)
    p_pi = np.einsum("sa,sat->st", pi, env.transitions)
    r_pi = np.einsum("sa,sa->s", pi, env.mean_rewards())
    return p_pi, r_pi


def q_by_remaining_horizon(env: TabularEnv, policy: Policy, gamma: float) -> np.ndarray:
    """q[k, s, a]: exact value of (s, a) with k+1 steps left, k = 0..T-1."""
    r_bar = env.mean_rewards()
    p_pi, _ = _policy_markov(env, policy)
    pi = env.policy_table(policy)
    q = np.zeros((env.horizon, env.num_states, env.action_count))
    v_next = np.zeros(env.num_states)
    for k in range(env.horizon):
        q[k] = r_bar + gamma * np.einsum("sat,t->sa", env.transitions, v_next)
        v_next = np.einsum("sa,sa->s", pi, q[k])
    return q


def state_occupancy_by_time(env: TabularEnv, policy: Policy) -> np.ndarray:
    """d[t, s] = P(x_t = s) under the policy, t = 0..T-1."""
    p_pi, _ = _policy_markov(env, policy)
    d = np.zeros((env.horizon, env.num_states))
    d[0] = env.p0
    for t in range(1, env.horizon):
        d[t] = d[t - 1] @ p_pi
    return d


def exact_dp_value(env: TabularEnv, policy: Policy, gamma: float) -> float:
    """Exact T-step value rho of the policy by backward induction."""
    q = q_by_remaining_horizon(env, policy, gamma)
    pi = env.policy_table(policy)
    v_start = np.einsum("sa,sa->s", pi, q[env.horizon - 1])
    return float(env.p0 @ v_start)


def enumerate_value(env: TabularEnv, policy: Policy, gamma: float, limit: int = 2_000_000) -> float:
    """Exact value by explicit enumeration of all trajectories.

    Independent of the DP recursion; only feasible for tiny horizons.
    """
    pi = env.policy_table(policy)
    total = 0.0
    stack = [(0, s, env.p0[s], 0.0) for s in range(env.num_states) if env.p0[s] > 0]
    expanded = 0
    while stack:
        t, s, prob, ret = stack.pop()
        if t == env.horizon:
            total += prob * ret
            continue
        expanded += 1
        if expanded > limit:
            raise ValueError("enumeration limit exceeded; use the DP oracle")
        for a in range(env.action_count):
            pa = pi[s, a]
            if pa == 0.0:
                continue
            for nxt in range(env.num_states):
                pt = env.transitions[s, a, nxt]
                if pt == 0.0:
                    continue
                stack.append(
                    (t + 1, nxt, prob * pa * pt, ret + gamma**t * env.rewards[s, a, nxt])
                )
    return total


def occupancy_weighted_q(env: TabularEnv, policy: Policy, gamma: float) -> np.ndarray:
    """Best stationary tabular fit of the remaining-horizon values.

    Returns q_bar[o, a]: the discounted-occupancy-weighted time average of
    q[k, s, a] pooled over states sharing observation o (zero where the
    occupancy is zero).  This is the population minimizer that the
    occupancy-weighted regression converges to.
    """
    q = q_by_remaining_horizon(env, policy, gamma)
    d = state_occupancy_by_time(env, policy)
    pi = env.policy_table(policy)
    num = np.zeros((env.num_observations, env.action_count))
    den = np.zeros((env.num_observations, env.action_count))
    for t in range(env.horizon):
        k = env.horizon - 1 - t
        weight = gamma**t * d[t][:, None] * pi  # [s, a]
        for s in range(env.num_states):
            o = env.obs_of_state[s]
            num[o] += weight[s] * q[k, s]
            den[o] += weight[s]
    out = np.zeros_like(num)
    mask = den > 0
    out[mask] = num[mask] / den[mask]
    return out


def occupancy_table(env: TabularEnv, policy: Policy, gamma: float) -> np.ndarray:
    """Normalized discounted state-action occupancy mu[s, a]; sums to 1."""
    d = state_occupancy_by_time(env, policy)
    pi = env.policy_table(policy)
    discounts = gamma ** np.arange(env.horizon)
    mu = np.einsum("t,ts,sa->sa", discounts, d, pi)
    return mu / discounts.sum()


def model_fail() -> TabularEnv:
    """Partially observed 4-node chain, T=2.

    From the start node, action 0 moves to the upper node and action 1 to
    the lower node; any action then moves to the terminal node with reward
    +1 from the upper path and -1 from the lower.  Every non-terminal state
    shares observation 0, so a stationary model over observations cannot
    represent the true values.  The evaluation policy picks action 0 with
    probability 0.88; the behavior policy is the opposite.
    """
    num_states, num_actions = 4, 2
    transitions = np.zeros((num_states, num_actions, num_states))
    rewards = np.zeros((num_states, num_actions, num_states))
    transitions[0, 0, 1] = 1.0
    transitions[0, 1, 2] = 1.0
    transitions[1, :, 3] = 1.0
    transitions[2, :, 3] = 1.0
    transitions[3, :, 3] = 1.0
    rewards[1, :, 3] = 1.0
    rewards[2, :, 3] = -1.0
    env = TabularEnv(
        env_id="model-fail",
        transitions=transitions,
        rewards=rewards,
        p0=np.array([1.0, 0.0, 0.0, 0.0]),
        horizon=2,
        obs_of_state=np.zeros(num_states, dtype=int),
        eval_policy=TablePolicy(np.array([[0.88, 0.12]])),
        behavior_policy=TablePolicy(np.array([[0.12, 0.88]])),
    )
    return env


def model_win() -> TabularEnv:
    """Fully observed 3-state chain, T=20.

    From state 0, action 0 reaches state 1 (reward +1) with probability 0.4
    and state 2 (reward -1) with probability 0.6; action 1 is the opposite.
    Both actions return to state 0 from states 1 and 2 with no reward.  The
    evaluation policy picks action 0 at state 0 with probability 0.73 and is
    uniform elsewhere; the behavior policy is the opposite at state 0.
    """
    num_states, num_actions = 3, 2
    transitions = np.zeros((num_states, num_actions, num_states))
    rewards = np.zeros((num_states, num_actions, num_states))
    transitions[0, 0] = [0.0, 0.4, 0.6]
    transitions[0, 1] = [0.0, 0.6, 0.4]
    transitions[1, :, 0] = 1.0
    transitions[2, :, 0] = 1.0
    rewards[0, :, 1] = 1.0
    rewards[0, :, 2] = -1.0
    env = TabularEnv(
        env_id="model-win",
        transitions=transitions,
        rewards=rewards,
        p0=np.array([1.0, 0.0, 0.0]),
        horizon=20,
        eval_policy=TablePolicy(np.array([[0.73, 0.27], [0.5, 0.5], [0.5, 0.5]])),
        behavior_policy=TablePolicy(np.array([[0.27, 0.73], [0.5, 0.5], [0.5, 0.5]])),
    )
    return env


MAZE_ACTIONS = ("up", "right", "down", "left")
_MAZE_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
MAZE_GREEN = (3, 3)
MAZE_RED = (3, 2)


def maze_4x4(
    eval_alpha: float = 0.95,
    behavior_alpha: float = 0.75,
    horizon: int = 100,
) -> TabularEnv:
    """4x4 gridworld, deterministic moves, T=100.

    Reward is 0 everywhere except +1 on entering the green cell (3, 3) and
    -1 on entering the red cell (3, 2); the green cell is absorbing.  Both
    policies are friendly softenings of the hand-coded base policy "move
    right along the top row, then down the last column"; the evaluation
    policy is the near-deterministic one.  Cell layout and base-policy
    probabilities are documented constants of this artifact.
    """
    side = 4
    num_states, num_actions = side * side, 4
    green = MAZE_GREEN[0] * side + MAZE_GREEN[1]
    red = MAZE_RED[0] * side + MAZE_RED[1]
    transitions = np.zeros((num_states, num_actions, num_states))
    rewards = np.zeros((num_states, num_actions, num_states))
    for row in range(side):
        for col in range(side):
            s = row * side + col
            for a, (dr, dc) in enumerate(_MAZE_MOVES):
                if s == green:
                    transitions[s, a, s] = 1.0
                    continue
                r2 = min(max(row + dr, 0), side - 1)
                c2 = min(max(col + dc, 0), side - 1)
                nxt = r2 * side + c2
                transitions[s, a, nxt] = 1.0
                if nxt == green:
                    rewards[s, a, nxt] = 1.0
                elif nxt == red and nxt != s:
                    rewards[s, a, nxt] = -1.0

    # Base route: right until the last column, then down; no-op at green.
    base_actions = np.empty(num_states, dtype=int)
    for row in range(side):
        for col in range(side):
            base_actions[row * side + col] = 1 if col < side - 1 else 2

    def soft_table(alpha: float) -> np.ndarray:
        table = np.full((num_states, num_actions), 0.0)
        for s in range(num_states):
            table[s] = (1.0 - alpha) / (num_actions - 1)
            table[s, base_actions[s]] = alpha
        return table

    env = TabularEnv(
        env_id="maze-4x4",
        transitions=transitions,
        rewards=rewards,
        p0=np.eye(num_states)[0],
        horizon=horizon,
        eval_policy=TablePolicy(soft_table(eval_alpha)),
        behavior_policy=TablePolicy(soft_table(behavior_alpha)),
    )
    return env
