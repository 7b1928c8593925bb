"""Experiment orchestration: replicated fit/estimate runs over a grid of
evaluation sample sizes, RMSE against an oracle truth, and a paired
significance test between the variance-minimizing and standard DR columns.

Everything is a pure function of the config (including its master seed):
replicate data seeds derive from (master seed, replicate, role), so adding
or removing estimators never changes another column's values, and rerunning
a config reproduces its output files byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from . import estimators as est
from .core import Dataset, Policy, samples_to_dataset
from .envs import (
    ControlTrainConfig,
    Environment,
    SofteningSpec,
    TabularEnv,
    classification_to_bandit,
    classification_truth,
    context_states,
    generate_trajectories,
    load_classification_csv,
    make_env,
    soften,
    train_control_policy,
    train_logistic,
    true_value,
)
from .fit_dm import DmFitConfig, dm_fit_rl
from .linmodel import (
    FeatureMap,
    LinearQModel,
    TabularFeatures,
    cartpole_features,
    mountaincar_features,
)
from .mrdr import MrdrFitConfig, mrdr_fit

ORACLE_SEED = 20180601

# Which fitted model each estimator reads, if any.
MODEL_FOR_ESTIMATOR = {
    "dm0": "dm0",
    "dm": "dm",
    "dr0": "dm0",
    "dr": "dm",
    "mrdr0": "mrdr0",
    "mrdr": "mrdr",
}


@dataclass(frozen=True)
class PolicySpec:
    """How to build a policy: an environment's built-in policy (by role, or
    explicitly the eval/behavior one) or a softening of the trained base."""

    kind: str  # env-default | env-default-eval | env-default-behavior |
    #            friendly | adversarial | neutral
    alpha: float = 0.0
    beta_soft: float = 0.0

    def softening(self) -> SofteningSpec:
        return SofteningSpec(self.kind, self.alpha, self.beta_soft)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "rl"  # "rl" | "bandit"
    env: str = "model-fail"
    eval_policy: PolicySpec = PolicySpec("env-default")
    behavior_policy: PolicySpec = PolicySpec("env-default")
    base_algo: str = "sarsa"  # base policy trainer for continuous domains
    base_episodes: int = 400
    train_size: int = 64
    sizes: tuple[int, ...] = (32, 64, 128, 256, 512)
    estimators: tuple[str, ...] = est.ESTIMATOR_IDS
    replicates: int = 100
    gamma: float = 1.0
    seed: int = 0
    truth_method: str = "exact-dp"
    truth_episodes: int = 100_000
    ridge: float = 0.0
    data_csv: str = ""  # bandit kind: classification CSV path
    test_fraction: float = 0.3

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")
        if any(size < 1 for size in self.sizes) and self.kind == "rl":
            raise ValueError("sample sizes must be >= 1")
        unknown = set(self.estimators) - set(est.ESTIMATOR_IDS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(master: int, *parts) -> int:
    """Stable child seed from the master seed and a role path."""
    entropy = [master & 0xFFFFFFFF]
    for part in parts:
        if isinstance(part, str):
            entropy.append(zlib.crc32(part.encode()))
        else:
            entropy.append(int(part) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rmse(estimates: Sequence[float], truth: float) -> float:
    err = np.asarray(estimates, dtype=float) - truth
    return float(np.sqrt(np.mean(err**2)))


def significance_test(
    errors_a: Sequence[float], errors_b: Sequence[float], level: float = 0.95
) -> bool:
    """Paired two-sided t-test on squared errors.

    True iff a's mean squared error is smaller with p below 1 - level.  A
    constant nonzero paired difference counts as significant; identical
    sequences do not.
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need paired sequences of equal length >= 2")
    diff = a**2 - b**2
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        return mean < 0.0
    t_stat = mean / (sd / math.sqrt(diff.size))
    p_value = 2.0 * float(stats.t.sf(abs(t_stat), diff.size - 1))
    return mean < 0.0 and p_value < 1.0 - level


@dataclass
class ExperimentResult:
    config: dict
    truth_value: float
    truth_se: float
    truth_method: str
    sizes: tuple[int, ...]
    estimator_ids: tuple[str, ...]
    estimates: dict  # estimator -> {size -> [per-replicate values]}
    rmse_table: dict  # estimator -> {size -> rmse}
    significance: dict  # size -> bool | None (variance-minimized vs plain DR)
    failures: list
    provenance: dict

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "truth": {
                "value": self.truth_value,
                "se": self.truth_se,
                "method": self.truth_method,
            },
            "sizes": list(self.sizes),
            "estimators": list(self.estimator_ids),
            "estimates": {
                k: {str(size): v for size, v in sizes.items()}
                for k, sizes in self.estimates.items()
            },
            "rmse": {
                k: {str(size): v for size, v in sizes.items()}
                for k, sizes in self.rmse_table.items()
            },
            "significance": {str(size): v for size, v in self.significance.items()},
            "failures": self.failures,
            "provenance": self.provenance,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @staticmethod
    def from_json(text: str) -> "ExperimentResult":
        obj = json.loads(text)
        return ExperimentResult(
            config=obj["config"],
            truth_value=obj["truth"]["value"],
            truth_se=obj["truth"]["se"],
            truth_method=obj["truth"]["method"],
            sizes=tuple(obj["sizes"]),
            estimator_ids=tuple(obj["estimators"]),
            estimates={
                k: {int(size): v for size, v in sizes.items()}
                for k, sizes in obj["estimates"].items()
            },
            rmse_table={
                k: {int(size): v for size, v in sizes.items()}
                for k, sizes in obj["rmse"].items()
            },
            significance={int(size): v for size, v in obj["significance"].items()},
            failures=obj["failures"],
            provenance=obj["provenance"],
        )


def default_features(env: Environment) -> FeatureMap:
    if isinstance(env, TabularEnv):
        return TabularFeatures(env.num_observations, env.action_count)
    if env.env_id == "mountain-car":
        return mountaincar_features(num_actions=env.action_count, horizon=env.horizon)
    if env.env_id == "cart-pole":
        return cartpole_features(num_actions=env.action_count, horizon=env.horizon)
    raise ValueError(f"no default feature map for environment {env.env_id!r}")


def control_features(env: Environment) -> FeatureMap:
    """Feature map for training the base control policies: finer state tiles
    with no horizon replication (value propagation is much faster without
    per-slice duplication)."""
    if isinstance(env, TabularEnv):
        return TabularFeatures(env.num_observations, env.action_count)
    if env.env_id == "mountain-car":
        return mountaincar_features(position_bins=12, velocity_bins=12, horizon_bins=1)
    if env.env_id == "cart-pole":
        return cartpole_features(bins=(3, 3, 8, 8), horizon_bins=1)
    raise ValueError(f"no control feature map for environment {env.env_id!r}")


def resolve_rl(config: ExperimentConfig):
    """Build (env, pi_e, pi_b, features) deterministically from the config."""
    env = make_env(config.env)
    features = default_features(env)
    builtin_kinds = ("env-default", "env-default-eval", "env-default-behavior")
    base = None
    for spec in (config.eval_policy, config.behavior_policy):
        if spec.kind not in builtin_kinds and not isinstance(env, TabularEnv) and base is None:
            base = train_control_policy(
                env,
                config.base_algo,
                control_features(env),
                ControlTrainConfig(
                    episodes=config.base_episodes,
                    gamma=config.gamma,
                    seed=derive_seed(config.seed, "base-train"),
                ),
            )

    def build(spec: PolicySpec, role: str) -> Policy:
        if spec.kind in builtin_kinds:
            if spec.kind != "env-default":
                role = spec.kind.removeprefix("env-default-")
            policy = env.eval_policy if role == "eval" else env.behavior_policy
            if policy is None:
                raise ValueError(
                    f"environment {config.env!r} has no built-in {role} policy; "
                    "specify a softening instead"
                )
            return policy
        if isinstance(env, TabularEnv):
            raise ValueError(
                "softened policies over tabular environments are not configured "
                "through the harness; use env-default"
            )
        return soften(base, spec.softening())

    return env, build(config.eval_policy, "eval"), build(config.behavior_policy, "behavior"), features


def _fit_models(
    needed: set[str],
    train: Dataset,
    pi_e: Policy,
    pi_b: Policy,
    features: FeatureMap,
    ridge: float,
) -> dict[str, LinearQModel]:
    models = {}
    for kind in sorted(needed):
        if kind in ("dm0", "dm"):
            models[kind] = dm_fit_rl(
                train, pi_e, pi_b, features, DmFitConfig(mode=kind, ridge=ridge)
            )
        else:
            models[kind] = mrdr_fit(
                train, pi_e, pi_b, features, MrdrFitConfig(mode=kind, ridge=ridge)
            )
    return models


def _truth(config: ExperimentConfig, env, pi_e) -> tuple[float, float, str]:
    method = config.truth_method
    if method in ("exact-dp", "enumerate"):
        result = true_value(env, pi_e, config.gamma, method)
    else:
        result = true_value(
            env, pi_e, config.gamma, "monte-carlo", config.truth_episodes, seed=ORACLE_SEED
        )
    return result.value, result.se, result.method


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    if config.kind == "bandit":
        return _run_bandit(config)
    env, pi_e, pi_b, features = resolve_rl(config)
    truth_value_, truth_se, truth_method = _truth(config, env, pi_e)
    needed = {
        MODEL_FOR_ESTIMATOR[e] for e in config.estimators if e in MODEL_FOR_ESTIMATOR
    }
    estimates: dict = {e: {size: [] for size in config.sizes} for e in config.estimators}
    failures: list = []
    for j in range(config.replicates):
        try:
            replicate: dict = {}
            train = generate_trajectories(
                env,
                pi_b,
                config.train_size,
                seed=derive_seed(config.seed, "train", j),
                gamma=config.gamma,
            )
            models = _fit_models(needed, train, pi_e, pi_b, features, config.ridge)
            for size in config.sizes:
                data = generate_trajectories(
                    env,
                    pi_b,
                    size,
                    seed=derive_seed(config.seed, "eval", j, size),
                    gamma=config.gamma,
                )
                for estimator in config.estimators:
                    replicate[(estimator, size)] = est.estimate(
                        estimator,
                        data,
                        pi_e,
                        pi_b,
                        models.get(MODEL_FOR_ESTIMATOR.get(estimator)),
                    )
        except Exception as err:  # noqa: BLE001 - replicate failures are data
            failures.append(f"replicate {j}: {err}")
            continue
        for (estimator, size), value in replicate.items():
            estimates[estimator][size].append(value)
    if len(failures) > 0.05 * config.replicates:
        raise RuntimeError(
            f"{len(failures)} of {config.replicates} replicates failed: {failures[:3]}"
        )
    return _assemble(config, truth_value_, truth_se, truth_method, estimates, failures)


def _assemble(config, truth_value_, truth_se, truth_method, estimates, failures):
    rmse_table = {
        estimator: {size: rmse(values, truth_value_) for size, values in sizes.items()}
        for estimator, sizes in estimates.items()
    }
    significance: dict = {}
    for size in config.sizes:
        if "mrdr" in config.estimators and "dr" in config.estimators:
            err_a = np.asarray(estimates["mrdr"][size]) - truth_value_
            err_b = np.asarray(estimates["dr"][size]) - truth_value_
            significance[size] = significance_test(err_a, err_b)
        else:
            significance[size] = None
    config_dict = config.to_dict()
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    provenance = {
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "master_seed": config.seed,
        "replicates_completed": config.replicates - len(failures),
    }
    return ExperimentResult(
        config=config_dict,
        truth_value=truth_value_,
        truth_se=truth_se,
        truth_method=truth_method,
        sizes=tuple(config.sizes),
        estimator_ids=tuple(config.estimators),
        estimates=estimates,
        rmse_table=rmse_table,
        significance=significance,
        failures=failures,
        provenance=provenance,
    )


def _run_bandit(config: ExperimentConfig) -> ExperimentResult:
    """Classification-to-bandit protocol: a fixed train/test split, one
    trained base classifier, and replicates that redraw actions and rewards
    under the behavior policy.  A size of 0 means the full test split."""
    features_x, labels = load_classification_csv(config.data_csv)
    num_classes = int(labels.max()) + 1
    states = context_states(features_x)
    examples = list(zip(states, labels))
    rng = np.random.default_rng(derive_seed(config.seed, "split"))
    order = rng.permutation(len(examples))
    n_test = max(1, int(round(config.test_fraction * len(examples))))
    test_idx, train_idx = order[:n_test], order[n_test:]
    train_examples = [examples[i] for i in train_idx]
    test_examples = [examples[i] for i in test_idx]

    base = train_logistic(features_x[train_idx], labels[train_idx], num_classes)
    pi_e = soften(base, config.eval_policy.softening())
    pi_b = soften(base, config.behavior_policy.softening())
    truth_value_ = classification_truth(examples, pi_e)

    from .linmodel import ContextActionFeatures

    features = ContextActionFeatures(features_x.shape[1], num_classes)
    needed = {
        MODEL_FOR_ESTIMATOR[e] for e in config.estimators if e in MODEL_FOR_ESTIMATOR
    }
    estimates: dict = {e: {size: [] for size in config.sizes} for e in config.estimators}
    failures: list = []
    for j in range(config.replicates):
        try:
            replicate: dict = {}
            train_rng = np.random.default_rng(derive_seed(config.seed, "bandit-train", j))
            train_samples = classification_to_bandit(train_examples, pi_b, train_rng)
            train = samples_to_dataset(train_samples, gamma=config.gamma)
            models = _fit_models(needed, train, pi_e, pi_b, features, config.ridge)
            for size in config.sizes:
                eval_rng = np.random.default_rng(
                    derive_seed(config.seed, "bandit-eval", j, size)
                )
                subset = test_examples if size == 0 else test_examples[: min(size, len(test_examples))]
                samples = classification_to_bandit(subset, pi_b, eval_rng)
                data = samples_to_dataset(samples, gamma=config.gamma)
                for estimator in config.estimators:
                    replicate[(estimator, size)] = est.estimate(
                        estimator,
                        data,
                        pi_e,
                        pi_b,
                        models.get(MODEL_FOR_ESTIMATOR.get(estimator)),
                    )
        except Exception as err:  # noqa: BLE001
            failures.append(f"replicate {j}: {err}")
            continue
        for (estimator, size), value in replicate.items():
            estimates[estimator][size].append(value)
    if len(failures) > 0.05 * config.replicates:
        raise RuntimeError(
            f"{len(failures)} of {config.replicates} replicates failed: {failures[:3]}"
        )
    return _assemble(config, truth_value_, 0.0, "enumerate", estimates, failures)
