"""Key-value config files shared by the benchmark and policy-spec commands.

Format: one ``key = value`` per line, ``#`` starts a comment, blank lines
ignored.  Environment variables never override anything; a run is fully
determined by the file plus explicit flags.

Recognized keys (policy specs use the subset marked P):

    kind             rl | bandit                              (default rl)
    env           P  model-fail | model-win | maze-4x4 | mountain-car | cart-pole
    gamma         P  discount factor in [0, 1]                (default 1.0)
    seed          P  master seed                              (default 0)
    eval_policy   P  env-default | friendly:a,b | adversarial:a,b | neutral
    behavior_policy  P  same forms as eval_policy
    base_algo     P  sarsa | q-learning   (continuous-domain base policy)
    base_episodes P  training episodes for the base policy    (default 400)
    train_size       model-fitting trajectories per replicate (default 64)
    sizes            comma list of evaluation sample sizes
    estimators       comma list from: dm0 dm is step-is wis step-wis dr0 dr mrdr0 mrdr
    replicates       number of replicate runs                 (default 100)
    truth_method     exact-dp | enumerate | monte-carlo
    truth_episodes   monte-carlo oracle episodes              (default 100000)
    ridge            ridge added to every fit                 (default 0)
    data_csv         bandit kind: classification CSV path
    test_fraction    bandit kind: held-out fraction           (default 0.3)
"""

from __future__ import annotations

from pathlib import Path

from .harness import ExperimentConfig, PolicySpec


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def parse_policy_spec(text: str) -> PolicySpec:
    text = text.strip()
    if text in ("env-default", "env-default-eval", "env-default-behavior"):
        return PolicySpec(text)
    if text == "neutral":
        return PolicySpec("neutral")
    if ":" not in text:
        raise ConfigError(
            f"bad policy spec {text!r}; expected env-default, neutral, or kind:alpha,beta"
        )
    kind, params = text.split(":", 1)
    parts = [p.strip() for p in params.split(",")]
    if kind not in ("friendly", "adversarial") or len(parts) not in (1, 2):
        raise ConfigError(f"bad policy spec {text!r}")
    alpha = float(parts[0])
    beta_soft = float(parts[1]) if len(parts) == 2 else 0.0
    return PolicySpec(kind, alpha, beta_soft)


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def experiment_config(values: dict[str, str]) -> ExperimentConfig:
    known = {
        "kind",
        "env",
        "gamma",
        "seed",
        "eval_policy",
        "behavior_policy",
        "base_algo",
        "base_episodes",
        "train_size",
        "sizes",
        "estimators",
        "replicates",
        "truth_method",
        "truth_episodes",
        "ridge",
        "data_csv",
        "test_fraction",
    }
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict = {}
    if "kind" in values:
        kwargs["kind"] = values["kind"]
    if "env" in values:
        kwargs["env"] = values["env"]
    for key, cast in (
        ("gamma", float),
        ("seed", int),
        ("base_episodes", int),
        ("train_size", int),
        ("replicates", int),
        ("truth_episodes", int),
        ("ridge", float),
        ("test_fraction", float),
    ):
        if key in values:
            kwargs[key] = cast(values[key])
    if "base_algo" in values:
        kwargs["base_algo"] = values["base_algo"]
    if "truth_method" in values:
        kwargs["truth_method"] = values["truth_method"]
    if "data_csv" in values:
        kwargs["data_csv"] = values["data_csv"]
    if "sizes" in values:
        kwargs["sizes"] = _int_list(values["sizes"])
    if "estimators" in values:
        kwargs["estimators"] = _str_list(values["estimators"])
    if "eval_policy" in values:
        kwargs["eval_policy"] = parse_policy_spec(values["eval_policy"])
    if "behavior_policy" in values:
        kwargs["behavior_policy"] = parse_policy_spec(values["behavior_policy"])
    try:
        config = ExperimentConfig(**kwargs)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    if config.kind == "bandit":
        if not config.data_csv:
            raise ConfigError("bandit experiments need data_csv")
        for spec in (config.eval_policy, config.behavior_policy):
            if spec.kind.startswith("env-default"):
                raise ConfigError("bandit experiments need softened policies (kind:alpha,beta)")
    elif config.kind != "rl":
        raise ConfigError(f"unknown experiment kind {config.kind!r}")
    return config


def load_experiment_config(path) -> ExperimentConfig:
    return experiment_config(load_config(path))
