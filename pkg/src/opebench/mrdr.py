"""Variance-minimizing model fitting for doubly robust estimators.

The fitting objective is the sampled DR variance expressed as a quadratic
form: each logged sample contributes weight * q' Omega q, where Omega is
the PSD matrix diag(1 / pi_b) - ee' at the sample's state and q collects
the model row against the observed reward.  For linear models the whole
objective is an explicit convex quadratic in beta, assembled once and
handed to gradient descent (or reduced to a weighted least squares when
the evaluation policy is deterministic).

A closed-form variance of the single-sample bandit DR estimator over an
enumerable bandit is included as a diagnostic: it is exact, so objective
differences across beta values must match variance differences up to the
beta-independent constant, which is also provided for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    AbsoluteContinuityError,
    Dataset,
    Policy,
    State,
    Step,
    samples_to_dataset,
)
from .estimators import trajectory_arrays
from .fit_dm import (
    AllWeightsZeroError,
    DmFitConfig,
    corrected_returns,
    dm_fit_rl,
    solve_weighted_rows,
)
from .linmodel import (
    FeatureMap,
    GdConfig,
    LinearQModel,
    WlsProblem,
    gd_minimize,
    wls_solve_with_fallback,
)
from .envs.policies import greedy_action, is_deterministic


class ZeroProbabilityError(ValueError):
    """Omega needs 1 / pi_b; the behavior policy has a zero-probability action."""


def omega_matrix(pi_b: Policy, x: State, check_psd: bool = False) -> np.ndarray:
    """diag(1 / pi_b(a|x)) - ee'; positive semi-definite for any pi_b."""
    probs = pi_b.action_probs(x)
    if np.any(probs <= 0.0):
        raise ZeroProbabilityError(
            "behavior policy has zero-probability actions; restrict to the support"
        )
    omega = np.diag(1.0 / probs) - 1.0
    if check_psd:
        min_eig = float(np.linalg.eigvalsh(omega)[0])
        if min_eig < -1e-10:
            raise AssertionError(f"omega matrix not PSD: min eigenvalue {min_eig}")
    return omega


def q_vector(x: State, a: int, r: float, model: LinearQModel, pi_e: Policy) -> np.ndarray:
    """Entry a' is pi_e(a'|x) Qhat(x, a') - 1{a' = a} r."""
    probs = pi_e.action_probs(x)
    out = probs * model.q_row(x, pi_e.action_count)
    out[a] -= r
    return out


@dataclass
class MrdrQuadratic:
    """The fitting objective J(beta) = beta' A beta - 2 b' beta + c."""

    a_mat: np.ndarray
    b_vec: np.ndarray
    c: float

    def objective(self, beta: np.ndarray) -> tuple[float, np.ndarray]:
        beta = np.asarray(beta, dtype=float)
        grad_half = self.a_mat @ beta - self.b_vec
        value = float(beta @ grad_half - self.b_vec @ beta + self.c)
        return value, 2.0 * grad_half


def _accumulate_sample(
    quad: MrdrQuadratic,
    features: FeatureMap,
    pi_e: Policy,
    pi_b: Policy,
    x: State,
    a: int,
    target: float,
    weight: float,
) -> None:
    probs_b = pi_b.action_probs(x)
    probs_e = pi_e.action_probs(x)
    support = probs_b > 0.0
    if float(probs_e[~support].sum()) > 0.0:
        raise AbsoluteContinuityError(
            "evaluation policy puts mass outside the behavior policy's support"
        )
    if not support[a]:
        raise ZeroProbabilityError("logged action outside the behavior support")
    idx_b = np.flatnonzero(support)
    pb = probs_b[idx_b]
    pe = probs_e[idx_b]
    omega = np.diag(1.0 / pb) - 1.0
    a_pos = int(np.searchsorted(idx_b, a))
    indices = [features.one_hot_index(x, int(act)) for act in idx_b]
    if all(i is not None for i in indices):
        block = weight * (np.outer(pe, pe) * omega)
        quad.a_mat[np.ix_(indices, indices)] += block
        quad.b_vec[indices] += weight * target * (omega[a_pos] * pe)
    else:
        phi = np.stack([features.phi(x, int(act)) for act in idx_b])
        m = pe[:, None] * phi
        quad.a_mat += weight * (m.T @ omega @ m)
        quad.b_vec += weight * target * (omega[a_pos] @ m)
    quad.c += weight * target * target * omega[a_pos, a_pos]


def _bandit_quadratic(
    samples: Sequence[Step], features: FeatureMap, pi_e: Policy, pi_b: Policy
) -> MrdrQuadratic:
    quad = MrdrQuadratic(
        np.zeros((features.dim, features.dim)), np.zeros(features.dim), 0.0
    )
    n = len(samples)
    for s in samples:
        weight = pi_e.prob(s.state, s.action) / s.behavior_prob / n
        if weight == 0.0:
            continue
        _accumulate_sample(quad, features, pi_e, pi_b, s.state, s.action, s.reward, weight)
    return quad


def _rl_quadratic(
    data: Dataset, features: FeatureMap, pi_e: Policy, pi_b: Policy
) -> MrdrQuadratic:
    quad = MrdrQuadratic(
        np.zeros((features.dim, features.dim)), np.zeros(features.dim), 0.0
    )
    arr = trajectory_arrays(data, pi_e, pi_b)
    rbar = corrected_returns(data, pi_e, pi_b)
    gamma_sq = (data.gamma ** np.arange(data.horizon)) ** 2
    n = data.n
    for i, traj in enumerate(data.trajectories):
        for t, step in enumerate(traj.steps):
            if step.state.is_absorbing:
                continue  # padded steps contribute an exactly-zero form
            weight = gamma_sq[t] * arr.cum_prev[i, t] ** 2 * arr.ratios[i, t] / n
            if weight == 0.0:
                continue
            _accumulate_sample(
                quad, features, pi_e, pi_b, step.state, step.action, rbar[i, t], weight
            )
    return quad


def mrdr_objective_bandit(
    samples: Sequence[Step], model: LinearQModel, pi_e: Policy, pi_b: Policy
) -> tuple[float, np.ndarray]:
    """Sampled variance objective and its analytic gradient at the model."""
    return _bandit_quadratic(samples, model.features, pi_e, pi_b).objective(model.beta)


def mrdr_objective_rl(
    data: Dataset, model: LinearQModel, pi_e: Policy, pi_b: Policy
) -> tuple[float, np.ndarray]:
    """Fixed-horizon objective: per-(i, t) weights gamma^(2t) w_{0:t-1}^2 w_t.

    A horizon-1 dataset reproduces the bandit objective bitwise.
    """
    return _rl_quadratic(data, model.features, pi_e, pi_b).objective(model.beta)


@dataclass
class MrdrFitConfig:
    # solver "gd" minimizes the variance quadratic by gradient descent from
    # the warm start; "wls" is the deterministic-pi_e shortcut for mode
    # "mrdr" and the direct least-squares solve for mode "mrdr0" (whose
    # objective is a plain least squares either way).
    mode: str = "mrdr"  # "mrdr" | "mrdr0"
    solver: str | None = None  # default: "gd" for mrdr, "wls" for mrdr0
    ridge: float = 0.0
    gd: GdConfig = field(default_factory=GdConfig)
    warm_start: bool = True

    def __post_init__(self):
        if self.mode not in ("mrdr", "mrdr0"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.solver is None:
            self.solver = "gd" if self.mode == "mrdr" else "wls"
        if self.solver not in ("gd", "wls"):
            raise ValueError(f"unknown solver {self.solver!r}")


def _dr_contribution_rows(
    data: Dataset, pi_e: Policy, pi_b: Policy | None, features: FeatureMap
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory DR terms as affine functions u_i - v_i' beta."""
    arr = trajectory_arrays(data, pi_e, pi_b)
    n = data.n
    u = (arr.cum * arr.rewards) @ arr.discounts
    v = np.zeros((n, features.dim))
    for i, traj in enumerate(data.trajectories):
        for t, step in enumerate(traj.steps):
            if step.state.is_absorbing:
                continue  # zero features on both control-variate terms
            scale = arr.discounts[t]
            idx = features.one_hot_index(step.state, step.action)
            if idx is not None:
                v[i, idx] += scale * arr.cum[i, t]
            else:
                v[i] += scale * arr.cum[i, t] * features.phi(step.state, step.action)
            probs = pi_e.action_probs(step.state)
            for act, p in enumerate(probs):
                if p == 0.0:
                    continue
                idx_a = features.one_hot_index(step.state, act)
                if idx_a is not None:
                    v[i, idx_a] -= scale * arr.cum_prev[i, t] * p
                else:
                    v[i] -= scale * arr.cum_prev[i, t] * p * features.phi(step.state, act)
    return v, u


def mrdr_fit(
    data_or_samples: Dataset | Sequence[Step],
    pi_e: Policy,
    pi_b: Policy,
    features: FeatureMap,
    config: MrdrFitConfig | None = None,
) -> LinearQModel:
    """Fit the model by minimizing the sampled DR variance objective.

    mode "mrdr0" instead minimizes the empirical second moment of the
    per-trajectory DR terms, which is a plain least squares.  The gradient
    path warm-starts at the direct-method solution; the objective is convex,
    so the warm start only affects iteration count (and pins the flat
    directions the objective does not determine).
    """
    cfg = config or MrdrFitConfig()
    if isinstance(data_or_samples, Dataset):
        data = data_or_samples
    else:
        data = samples_to_dataset(list(data_or_samples))
    if cfg.mode == "mrdr0":
        v, u = _dr_contribution_rows(data, pi_e, pi_b, features)
        problem = WlsProblem(v, u, np.full(data.n, 1.0 / data.n), ridge=cfg.ridge)
        if cfg.solver == "gd":
            beta = gd_minimize(problem.objective, np.zeros(features.dim), cfg.gd).beta
        else:
            beta = wls_solve_with_fallback(problem)
        return LinearQModel(beta=beta, features=features)
    if cfg.solver == "wls":
        setting = "bandit" if data.horizon == 1 else "rl"
        return mrdr_wls_deterministic(data, pi_e, pi_b, features, data.gamma, setting)
    quad = _rl_quadratic(data, features, pi_e, pi_b)
    if cfg.warm_start:
        beta0 = dm_fit_rl(data, pi_e, pi_b, features, DmFitConfig(ridge=cfg.ridge)).beta
    else:
        beta0 = np.zeros(features.dim)
    result = gd_minimize(quad.objective, beta0, cfg.gd)
    return LinearQModel(beta=result.beta, features=features)


def mrdr_wls_deterministic(
    data_or_samples: Dataset | Sequence[Step],
    pi_e: Policy,
    pi_b: Policy | None,
    features: FeatureMap,
    gamma: float,
    setting: str = "rl",
) -> LinearQModel:
    """Exact specialization of the variance objective for deterministic
    evaluation policies: a weighted least squares on matching samples.

    Bandit weights are (1 - pi_b) / pi_b^2; fixed-horizon weights carry the
    extra gamma^(2t) w_{0:t-1}^2 factor and target the corrected suffix
    return.
    """
    if setting not in ("bandit", "rl"):
        raise ValueError(f"unknown setting {setting!r}")
    if isinstance(data_or_samples, Dataset):
        data = data_or_samples
    else:
        data = samples_to_dataset(list(data_or_samples), gamma=gamma)
    states = [s.state for traj in data.trajectories for s in traj.steps]
    if not is_deterministic(pi_e, states):
        raise ValueError("the deterministic WLS shortcut needs a deterministic pi_e")
    if setting == "bandit" and data.horizon != 1:
        raise ValueError("bandit setting expects horizon-1 data")
    arr = trajectory_arrays(data, pi_e, pi_b)
    rbar = corrected_returns(data, pi_e, pi_b)
    gamma_sq = (gamma ** np.arange(data.horizon)) ** 2
    steps, ys, ws = [], [], []
    for i, traj in enumerate(data.trajectories):
        for t, step in enumerate(traj.steps):
            if greedy_action(pi_e, step.state) != step.action:
                continue
            pb = step.behavior_prob
            weight = (1.0 - pb) / pb**2
            if setting == "rl":
                weight *= gamma_sq[t] * arr.cum_prev[i, t] ** 2
            if weight == 0.0:
                continue
            steps.append(step)
            ys.append(rbar[i, t])
            ws.append(weight / data.n)
    if not steps:
        raise AllWeightsZeroError("no matching sample carries positive weight")
    beta = solve_weighted_rows(steps, np.array(ys), np.array(ws), features, ridge=0.0)
    return LinearQModel(beta=beta, features=features)


# ---------------------------------------------------------------------------
# Enumerable bandit diagnostics: exact DR variance, its quadratic-form
# expression, and the beta-independent constant connecting them.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BanditSpec:
    """Finite contextual bandit with known reward means and variances.

    Rows of ``pi_b`` and ``pi_e`` are action distributions per context;
    rewards are drawn as Gaussians in :func:`simulate_bandit_dr` but only
    the first two moments enter any variance formula.
    """

    p0: np.ndarray
    pi_b: np.ndarray
    pi_e: np.ndarray
    mean_reward: np.ndarray
    var_reward: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        for name in ("pi_b", "pi_e", "mean_reward", "var_reward"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not math.isclose(float(self.p0.sum()), 1.0, abs_tol=1e-12):
            raise ValueError("context distribution must sum to 1")
        if np.any(self.var_reward < 0):
            raise ValueError("reward variances must be nonnegative")
        if np.any(self.pi_b <= 0.0):
            raise ZeroProbabilityError(
                "the enumerable diagnostics need full-support pi_b (1 / pi_b appears throughout)"
            )

    @property
    def num_contexts(self) -> int:
        return self.p0.size

    @property
    def num_actions(self) -> int:
        return self.pi_b.shape[1]

    def context_states(self) -> list[State]:
        return [State(discrete_id=i) for i in range(self.num_contexts)]

    def true_value(self) -> float:
        return float(self.p0 @ np.sum(self.pi_e * self.mean_reward, axis=1))


def _model_tables(spec: BanditSpec, model: LinearQModel) -> tuple[np.ndarray, np.ndarray]:
    qhat = np.stack(
        [model.q_row(x, spec.num_actions) for x in spec.context_states()]
    )
    vhat = np.sum(spec.pi_e * qhat, axis=1)
    return qhat, vhat


def bandit_dr_variance_closed_form(spec: BanditSpec, model: LinearQModel) -> float:
    """Exact n * Var of the single-sample bandit DR estimate at this model.

    Direct evaluation of the quadratic-form variance expression; the
    state-value terms use mean rewards (the grouping of those terms cancels
    in the total, which :func:`bandit_dr_variance_delta_form` verifies).
    """
    qhat, vhat = _model_tables(spec, model)
    ratio = spec.pi_e / spec.pi_b
    v_true = np.sum(spec.pi_e * spec.mean_reward, axis=1)
    second_moment = spec.var_reward + spec.mean_reward**2
    total = 0.0
    for x in range(spec.num_contexts):
        pb, pe, w = spec.pi_b[x], spec.pi_e[x], ratio[x]
        e_wq2 = float(np.sum(pe * w * qhat[x] ** 2))
        inner = np.sum(
            pb
            * (
                w * (e_wq2 - vhat[x] ** 2 - 2.0 * spec.mean_reward[x] * (w * qhat[x] - vhat[x]))
                + w**2 * second_moment[x]
            )
        )
        total += spec.p0[x] * (float(inner) - v_true[x] ** 2)
    var_p0 = float(spec.p0 @ v_true**2 - (spec.p0 @ v_true) ** 2)
    return total + var_p0


def bandit_dr_variance_delta_form(spec: BanditSpec, model: LinearQModel) -> float:
    """Independent closed form via the model-error decomposition:
    E[w^2 (r - Q)^2] + Var_{P0}(V) + E[w Delta^2 - (E Delta)^2]."""
    qhat, _ = _model_tables(spec, model)
    w = spec.pi_e / spec.pi_b
    delta = qhat - spec.mean_reward
    v_true = np.sum(spec.pi_e * spec.mean_reward, axis=1)
    noise = float(spec.p0 @ np.sum(spec.pi_e * w * spec.var_reward, axis=1))
    var_p0 = float(spec.p0 @ v_true**2 - (spec.p0 @ v_true) ** 2)
    penalty = float(
        spec.p0
        @ (np.sum(spec.pi_e * w * delta**2, axis=1) - np.sum(spec.pi_e * delta, axis=1) ** 2)
    )
    return noise + var_p0 + penalty


def bandit_j_exact(spec: BanditSpec, model: LinearQModel) -> float:
    """Exact expectation of the sampled objective over the bandit."""
    qhat, vhat = _model_tables(spec, model)
    second_moment = spec.var_reward + spec.mean_reward**2
    total = 0.0
    for x in range(spec.num_contexts):
        pb, pe = spec.pi_b[x], spec.pi_e[x]
        omega = np.diag(1.0 / pb) - 1.0
        dq = pe * qhat[x]
        base = float(dq @ omega @ dq)
        for a in range(spec.num_actions):
            w = pe[a] / pb[a]
            cross = -2.0 * spec.mean_reward[x, a] * float(omega[a] @ dq)
            square = second_moment[x, a] * omega[a, a]
            total += spec.p0[x] * pb[a] * w * (base + cross + square)
    return total


def bandit_variance_constant(spec: BanditSpec) -> float:
    """The beta-independent constant C with n Var = J(beta) + C.

    The r^2 coefficient is (1 + w - 1/pi_b), validated numerically by the
    identity against the direct variance forms.
    """
    w = spec.pi_e / spec.pi_b
    second_moment = spec.var_reward + spec.mean_reward**2
    v_true = np.sum(spec.pi_e * spec.mean_reward, axis=1)
    var_p0 = float(spec.p0 @ v_true**2 - (spec.p0 @ v_true) ** 2)
    mean_v_sq = float(spec.p0 @ v_true**2)
    reward_term = float(
        spec.p0 @ np.sum(spec.pi_b * (1.0 + w - 1.0 / spec.pi_b) * w * second_moment, axis=1)
    )
    return var_p0 - mean_v_sq + reward_term


def simulate_bandit_dr(
    spec: BanditSpec, model: LinearQModel, n: int, seed: int = 0
) -> np.ndarray:
    """n independent single-sample DR estimates (vectorized)."""
    rng = np.random.default_rng(seed)
    qhat, vhat = _model_tables(spec, model)
    xs = rng.choice(spec.num_contexts, size=n, p=spec.p0)
    uniforms = rng.random(n)
    cum = np.cumsum(spec.pi_b, axis=1)
    acts = np.array(
        [int(np.searchsorted(cum[x], u, side="right")) for x, u in zip(xs, uniforms)]
    )
    means = spec.mean_reward[xs, acts]
    stds = np.sqrt(spec.var_reward[xs, acts])
    rewards = means + stds * rng.standard_normal(n)
    weights = spec.pi_e[xs, acts] / spec.pi_b[xs, acts]
    return weights * (rewards - qhat[xs, acts]) + vhat[xs]


def bandit_spec_policies(spec: BanditSpec):
    from .envs.policies import TablePolicy

    return TablePolicy(spec.pi_e), TablePolicy(spec.pi_b)
