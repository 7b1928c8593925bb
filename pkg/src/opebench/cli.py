"""Command-line surface: data generation, model fitting, estimation,
benchmarking, and ground-truth computation.

Exit codes: 0 success, 2 invalid flags or config, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import estimators as est
from .config import (
    ConfigError,
    load_config,
    load_experiment_config,
    parse_policy_spec,
)
from .core import load_dataset, save_dataset
from .envs import ENVIRONMENT_IDS, TabularEnv, generate_trajectories, true_value
from .fit_dm import DmFitConfig, dm_fit_rl
from .harness import ExperimentConfig, default_features, resolve_rl, run_experiment
from .linmodel import feature_map_from_descriptor, load_model, save_model
from .mrdr import MrdrFitConfig, mrdr_fit
from .report import render_markdown, write_report


class CliError(Exception):
    """Invalid flags or configuration (exit code 2)."""


def _policies_from_spec(args) -> tuple:
    """(env, pi_e, pi_b, features) from --env plus an optional policy spec file."""
    values = load_config(args.policy_spec) if args.policy_spec else {}
    env_id = getattr(args, "env", None) or values.get("env")
    if env_id is None:
        raise CliError("no environment: pass --env or put 'env = ...' in the policy spec")
    if env_id not in ENVIRONMENT_IDS:
        raise CliError(
            f"unknown environment {env_id!r}; valid ids: {', '.join(ENVIRONMENT_IDS)}"
        )
    if "env" in values and getattr(args, "env", None) and values["env"] != args.env:
        raise CliError(f"--env {args.env!r} conflicts with policy spec env {values['env']!r}")
    config = ExperimentConfig(
        env=env_id,
        eval_policy=parse_policy_spec(values.get("eval_policy", "env-default")),
        behavior_policy=parse_policy_spec(values.get("behavior_policy", "env-default")),
        base_algo=values.get("base_algo", "sarsa"),
        base_episodes=int(values.get("base_episodes", 400)),
        gamma=float(values.get("gamma", 1.0)),
        seed=int(values.get("seed", 0)),
    )
    return resolve_rl(config)


def cmd_generate(args) -> int:
    env, _, pi_b, _ = _policies_from_spec(args)
    values = load_config(args.policy_spec) if args.policy_spec else {}
    behavior_id = values.get("behavior_policy", "env-default")
    data = generate_trajectories(
        env, pi_b, args.n, args.seed, gamma=args.gamma, behavior_id=behavior_id
    )
    save_dataset(data, args.out)
    mean_return = float(
        np.mean([sum(s.reward * args.gamma**t for t, s in enumerate(traj.steps))
                 for traj in data.trajectories])
    )
    print(f"wrote {data.n} trajectories of length {data.horizon} to {args.out}")
    print(json.dumps({"n": data.n, "T": data.horizon, "mean_return": mean_return}))
    return 0


def _features_for(args, env):
    if args.features == "auto":
        return default_features(env)
    path = Path(args.features)
    if not path.exists():
        raise CliError(
            f"--features must be 'auto' or a JSON feature-map descriptor file, got {args.features!r}"
        )
    return feature_map_from_descriptor(json.loads(path.read_text()))


def cmd_fit(args) -> int:
    data = load_dataset(args.data)
    env, pi_e, pi_b, _ = _policies_from_spec_for_data(args, data)
    features = _features_for(args, env)
    if args.objective in ("dm0", "dm"):
        model = dm_fit_rl(data, pi_e, pi_b, features, DmFitConfig(mode=args.objective, ridge=args.ridge))
    elif args.objective in ("mrdr0", "mrdr"):
        model = mrdr_fit(data, pi_e, pi_b, features, MrdrFitConfig(mode=args.objective, ridge=args.ridge))
    else:
        raise CliError(f"unknown objective {args.objective!r}")
    save_model(model, args.out)
    print(f"fitted {args.objective} model with {features.dim} parameters -> {args.out}")
    return 0


def _policies_from_spec_for_data(args, data):
    if getattr(args, "env", None) is None:
        args.env = data.env_id or None
    return _policies_from_spec(args)


def cmd_estimate(args) -> int:
    data = load_dataset(args.data)
    _, pi_e, pi_b, _ = _policies_from_spec_for_data(args, data)
    if args.estimator not in est.ESTIMATOR_IDS:
        raise CliError(
            f"unknown estimator {args.estimator!r}; valid ids: {', '.join(est.ESTIMATOR_IDS)}"
        )
    model = None
    if args.estimator not in est.MODEL_FREE_ESTIMATORS:
        if not args.model:
            raise CliError(f"estimator {args.estimator!r} requires --model")
        model = load_model(args.model)
    value = est.estimate(args.estimator, data, pi_e, pi_b, model)
    report = est.EstimatorReport(args.estimator, value, data.n, data.seed)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_truth(args) -> int:
    env, pi_e, pi_b, _ = _policies_from_spec(args)
    policy = pi_b if args.which == "behavior" else pi_e
    if args.method in ("exact-dp", "enumerate") and not isinstance(env, TabularEnv):
        raise CliError(f"method {args.method!r} needs a tabular environment")
    result = true_value(env, policy, args.gamma, args.method, episodes=args.m)
    print(f"{result.value:.6f} +/- {result.se:.6f} ({result.method})")
    print(json.dumps({"value": result.value, "se": result.se, "method": result.method}))
    return 0


def cmd_benchmark(args) -> int:
    try:
        config = load_experiment_config(args.config)
    except FileNotFoundError as err:
        raise CliError(f"config not found: {err}") from err
    if config.kind == "bandit" and not Path(config.data_csv).exists():
        raise CliError(f"bandit dataset not found: {config.data_csv!r}")
    result = run_experiment(config)
    paths = write_report(result, args.out)
    print(render_markdown(result))
    if result.failures:
        print(f"warning: {len(result.failures)} replicate(s) failed", file=sys.stderr)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opebench",
        description="Off-policy evaluation benchmark harness (DM / IS / DR family).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a trajectory dataset (JSONL)")
    p.add_argument("--env", help=f"environment id ({', '.join(ENVIRONMENT_IDS)})")
    p.add_argument("--policy-spec", help="key-value policy spec file")
    p.add_argument("--n", type=int, required=True, help="number of trajectories")
    p.add_argument("--seed", type=int, default=0, help="generation seed (default 0)")
    p.add_argument("--gamma", type=float, default=1.0, help="discount factor (default 1.0)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a model on a dataset")
    p.add_argument("--data", required=True, help="trajectory JSONL file")
    p.add_argument("--objective", required=True, help="dm0 | dm | mrdr0 | mrdr")
    p.add_argument("--features", default="auto", help="'auto' or JSON descriptor file (default auto)")
    p.add_argument("--policy-spec", help="key-value policy spec file")
    p.add_argument("--env", help="environment id override")
    p.add_argument("--ridge", type=float, default=0.0, help="ridge penalty (default 0)")
    p.add_argument("--out", required=True, help="output model JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate", help="run one estimator over a dataset")
    p.add_argument("--data", required=True, help="trajectory JSONL file")
    p.add_argument("--estimator", required=True, help=" | ".join(est.ESTIMATOR_IDS))
    p.add_argument("--model", help="model JSON file (dm/dr families)")
    p.add_argument("--policy-spec", help="key-value policy spec file")
    p.add_argument("--env", help="environment id override")
    p.add_argument("--out", help="write the report JSON here too")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("truth", help="compute a policy's true value")
    p.add_argument("--env", help=f"environment id ({', '.join(ENVIRONMENT_IDS)})")
    p.add_argument("--policy-spec", help="key-value policy spec file")
    p.add_argument("--which", choices=("eval", "behavior"), default="eval")
    p.add_argument("--method", default="exact-dp", help="exact-dp | enumerate | monte-carlo")
    p.add_argument("--m", type=int, default=100_000, help="monte-carlo episodes")
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("benchmark", help="run a full replicated experiment")
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - uniform runtime exit code
        print(f"runtime failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
