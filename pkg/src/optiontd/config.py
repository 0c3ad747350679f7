"""Experiment configuration: YAML loading, environment-variable overrides,
and validation that reports every violation at once.

Two config shapes exist: learning experiments (``mode: experiment``, the
default) and the six-condition search suite (``mode: search-suite``). Every
constant the experiments depend on appears explicitly in the resolved config
so deviations from the defaults are diffable.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

ENV_PREFIX = "OPTIONTD_"

ALGORITHMS = ("smdp-tdc", "tdc", "smdp-lstd", "loem", "smdp-q", "q")
TDC_FAMILY = ("smdp-tdc", "tdc")
TABULAR_ALGOS = ("smdp-q", "q")
OPTION_ALGOS = ("smdp-tdc", "smdp-lstd", "loem", "smdp-q")

DEFAULT_GAMMA = {"gridworld": 0.95, "rooms": 0.99}
DEFAULT_SCHEDULE = {"alpha0": 0.1, "beta0": 0.5, "p": 1.0, "q": 2.0 / 3.0, "scale": 5000.0}
DEFAULT_BETAS = [0.2, 0.4, 0.6, 0.8, 1.0]


class ConfigError(Exception):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in violations))
        self.violations = violations


@dataclass
class EnvironmentConfig:
    kind: str = "gridworld"
    map: str = "builtin:fourrooms"  # gridworld text map
    geometry: str = "builtin:rooms"  # rooms geometry file
    noise: float = 0.15
    noise_mode: str = "any"
    rbf_scale: float = 10.0  # rooms feature magnitude at a center
    rbf_threshold: float = 0.1  # rooms sparsification cutoff


@dataclass
class OptionRecipe:
    n_policies: int = 40
    betas: list[float] = field(default_factory=lambda: list(DEFAULT_BETAS))
    seed: int = 12345


@dataclass
class ScheduleConfig:
    alpha0: float = DEFAULT_SCHEDULE["alpha0"]
    beta0: float = DEFAULT_SCHEDULE["beta0"]
    p: float = DEFAULT_SCHEDULE["p"]
    q: float = DEFAULT_SCHEDULE["q"]
    scale: float = DEFAULT_SCHEDULE["scale"]


@dataclass
class BehaviorConfig:
    kind: str = "egreedy"  # or "random"
    epsilon: float = 0.1


@dataclass
class PlanningConfig:
    """Knobs of the option-selection step used by SMDP TD control.

    ``reward_prior`` seeds unvisited entries of the per-option expectation
    models on discrete feature maps; ``candidates``/``sim_steps`` bound the
    generative lookahead used on continuous feature maps.
    """

    reward_prior: float = -4.0
    candidates: int = 12
    sim_steps: int = 60


@dataclass
class ExperimentConfig:
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    algorithm: str = "smdp-tdc"
    gamma: float | None = None  # default depends on the environment kind
    options: OptionRecipe = field(default_factory=OptionRecipe)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    planning: PlanningConfig = field(default_factory=PlanningConfig)
    tabular_alpha: float = 0.1
    episodes: int = 500
    max_steps: int = 1000
    step_budget: int | None = None  # total primitive steps per run, if set
    eval_every: int = 0
    seeds: list[int] = field(default_factory=lambda: list(range(30)))
    out: str = "runs/experiment"
    log_transitions: bool = False
    workers: int = 1

    def resolved_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return DEFAULT_GAMMA.get(self.environment.kind, 0.95)


@dataclass
class SearchSuiteConfig:
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    gamma: float | None = None
    options: OptionRecipe = field(default_factory=lambda: OptionRecipe(betas=[0.5, 1.0]))
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    value_learning_episodes: int = 50
    value_learning_seed: int = 7
    n_rollouts: int = 100
    depth: int = 3
    conditions: list[str] = field(default_factory=lambda: list("abcdef"))
    episodes: int = 1  # per seed per condition
    max_decisions: int = 200
    max_steps: int = 1000
    random_subset_size: int = 6
    start: str = "far"  # or "uniform": episode start distribution
    seeds: list[int] = field(default_factory=lambda: list(range(30)))
    out: str = "runs/search_suite"

    def resolved_gamma(self) -> float:
        return self.gamma if self.gamma is not None else DEFAULT_GAMMA["gridworld"]


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _expect(d: dict, key: str, kinds, violations: list[str], default, where: str = ""):
    """Pull d[key], recording a violation instead of raising on a bad type."""
    if key not in d or d[key] is None:
        return default
    v = d[key]
    if kinds is float and isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if kinds is int and isinstance(v, int) and not isinstance(v, bool):
        return int(v)
    if isinstance(kinds, type) and isinstance(v, kinds):
        return v
    violations.append(f"{where}{key}: expected {getattr(kinds, '__name__', kinds)}, got {v!r}")
    return default


def _seed_list(raw, violations: list[str]) -> list[int]:
    if raw is None:
        return list(range(30))
    if isinstance(raw, int) and not isinstance(raw, bool):
        if raw <= 0:
            violations.append("seeds: count must be positive")
            return [0]
        return list(range(raw))
    if isinstance(raw, (list, tuple)) and raw and all(isinstance(s, int) for s in raw):
        return [int(s) for s in raw]
    violations.append(f"seeds: expected a positive count or a list of ints, got {raw!r}")
    return [0]


def _check_unknown(d: dict, allowed, violations: list[str], where: str = "") -> None:
    for key in d:
        if key not in allowed:
            violations.append(f"{where}unknown key {key!r}")


def _parse_common_sections(data: dict, violations: list[str]):
    env_d = data.get("environment") or {}
    _check_unknown(env_d, {"kind", "map", "geometry", "noise", "noise_mode", "rbf_scale", "rbf_threshold"},
                   violations, "environment.")
    env = EnvironmentConfig(
        kind=_expect(env_d, "kind", str, violations, "gridworld", "environment."),
        map=_expect(env_d, "map", str, violations, "builtin:fourrooms", "environment."),
        geometry=_expect(env_d, "geometry", str, violations, "builtin:rooms", "environment."),
        noise=_expect(env_d, "noise", float, violations, 0.15, "environment."),
        noise_mode=_expect(env_d, "noise_mode", str, violations, "any", "environment."),
        rbf_scale=_expect(env_d, "rbf_scale", float, violations, 10.0, "environment."),
        rbf_threshold=_expect(env_d, "rbf_threshold", float, violations, 0.1, "environment."),
    )
    opt_d = data.get("options") or {}
    _check_unknown(opt_d, {"n_policies", "betas", "seed"}, violations, "options.")
    betas = opt_d.get("betas", list(DEFAULT_BETAS))
    if not isinstance(betas, (list, tuple)) or not betas:
        violations.append("options.betas: expected a nonempty list")
        betas = list(DEFAULT_BETAS)
    recipe = OptionRecipe(
        n_policies=_expect(opt_d, "n_policies", int, violations, 40, "options."),
        betas=[float(b) for b in betas if isinstance(b, (int, float))],
        seed=_expect(opt_d, "seed", int, violations, 12345, "options."),
    )
    sch_d = data.get("schedule") or {}
    _check_unknown(sch_d, {"alpha0", "beta0", "p", "q", "scale"}, violations, "schedule.")
    schedule = ScheduleConfig(
        alpha0=_expect(sch_d, "alpha0", float, violations, DEFAULT_SCHEDULE["alpha0"], "schedule."),
        beta0=_expect(sch_d, "beta0", float, violations, DEFAULT_SCHEDULE["beta0"], "schedule."),
        p=_expect(sch_d, "p", float, violations, DEFAULT_SCHEDULE["p"], "schedule."),
        q=_expect(sch_d, "q", float, violations, DEFAULT_SCHEDULE["q"], "schedule."),
        scale=_expect(sch_d, "scale", float, violations, DEFAULT_SCHEDULE["scale"], "schedule."),
    )
    gamma = data.get("gamma")
    if gamma is not None and (not isinstance(gamma, (int, float)) or isinstance(gamma, bool)):
        violations.append(f"gamma: expected a number, got {gamma!r}")
        gamma = None
    return env, recipe, schedule, None if gamma is None else float(gamma)


EXPERIMENT_KEYS = {
    "mode", "environment", "algorithm", "gamma", "options", "schedule", "behavior", "planning",
    "tabular_alpha", "episodes", "max_steps", "step_budget", "eval_every", "seeds", "out",
    "log_transitions", "workers",
}


def parse_experiment_config(data: dict) -> tuple[ExperimentConfig, list[str]]:
    violations: list[str] = []
    _check_unknown(data, EXPERIMENT_KEYS, violations)
    env, recipe, schedule, gamma = _parse_common_sections(data, violations)
    beh_d = data.get("behavior") or {}
    _check_unknown(beh_d, {"kind", "epsilon"}, violations, "behavior.")
    behavior = BehaviorConfig(
        kind=_expect(beh_d, "kind", str, violations, "egreedy", "behavior."),
        epsilon=_expect(beh_d, "epsilon", float, violations, 0.1, "behavior."),
    )
    plan_d = data.get("planning") or {}
    _check_unknown(plan_d, {"reward_prior", "candidates", "sim_steps"}, violations, "planning.")
    planning = PlanningConfig(
        reward_prior=_expect(plan_d, "reward_prior", float, violations, -4.0, "planning."),
        candidates=_expect(plan_d, "candidates", int, violations, 12, "planning."),
        sim_steps=_expect(plan_d, "sim_steps", int, violations, 60, "planning."),
    )
    cfg = ExperimentConfig(
        environment=env,
        algorithm=_expect(data, "algorithm", str, violations, "smdp-tdc"),
        gamma=gamma,
        options=recipe,
        schedule=schedule,
        behavior=behavior,
        planning=planning,
        tabular_alpha=_expect(data, "tabular_alpha", float, violations, 0.1),
        episodes=_expect(data, "episodes", int, violations, 500),
        max_steps=_expect(data, "max_steps", int, violations, 1000),
        step_budget=_expect(data, "step_budget", int, violations, None),
        eval_every=_expect(data, "eval_every", int, violations, 0),
        seeds=_seed_list(data.get("seeds"), violations),
        out=_expect(data, "out", str, violations, "runs/experiment"),
        log_transitions=_expect(data, "log_transitions", bool, violations, False),
        workers=_expect(data, "workers", int, violations, 1),
    )
    violations.extend(validate_experiment_config(cfg))
    return cfg, violations


SUITE_KEYS = {
    "mode", "environment", "gamma", "options", "schedule", "value_learning", "rollout", "conditions",
    "episodes", "max_decisions", "max_steps", "random_subset_size", "start", "seeds", "out",
}


def parse_search_config(data: dict) -> tuple[SearchSuiteConfig, list[str]]:
    violations: list[str] = []
    _check_unknown(data, SUITE_KEYS, violations)
    env, recipe, schedule, gamma = _parse_common_sections(data, violations)
    if "options" not in data:
        recipe = OptionRecipe(betas=[0.5, 1.0])
    vl = data.get("value_learning") or {}
    _check_unknown(vl, {"episodes", "seed"}, violations, "value_learning.")
    ro = data.get("rollout") or {}
    _check_unknown(ro, {"n_rollouts", "depth"}, violations, "rollout.")
    conditions = data.get("conditions", list("abcdef"))
    if not isinstance(conditions, (list, tuple)) or not conditions:
        violations.append("conditions: expected a nonempty list of tags")
        conditions = list("abcdef")
    cfg = SearchSuiteConfig(
        environment=env,
        gamma=gamma,
        options=recipe,
        schedule=schedule,
        value_learning_episodes=_expect(vl, "episodes", int, violations, 50, "value_learning."),
        value_learning_seed=_expect(vl, "seed", int, violations, 7, "value_learning."),
        n_rollouts=_expect(ro, "n_rollouts", int, violations, 100, "rollout."),
        depth=_expect(ro, "depth", int, violations, 3, "rollout."),
        conditions=[str(c) for c in conditions],
        episodes=_expect(data, "episodes", int, violations, 1),
        max_decisions=_expect(data, "max_decisions", int, violations, 200),
        max_steps=_expect(data, "max_steps", int, violations, 1000),
        random_subset_size=_expect(data, "random_subset_size", int, violations, 6),
        start=_expect(data, "start", str, violations, "far"),
        seeds=_seed_list(data.get("seeds"), violations),
        out=_expect(data, "out", str, violations, "runs/search_suite"),
    )
    violations.extend(validate_search_config(cfg))
    return cfg, violations


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _validate_shared(env: EnvironmentConfig, recipe: OptionRecipe, gamma: float) -> list[str]:
    v = []
    if env.kind not in ("gridworld", "rooms"):
        v.append(f"environment.kind: unknown kind {env.kind!r}")
    if not 0.0 <= env.noise <= 1.0:
        v.append(f"environment.noise: must lie in [0, 1], got {env.noise}")
    if env.noise_mode not in ("any", "other"):
        v.append(f"environment.noise_mode: unknown mode {env.noise_mode!r}")
    if env.kind == "gridworld" and not env.map.startswith("builtin:") and not Path(env.map).exists():
        v.append(f"environment.map: file not found: {env.map}")
    if env.kind == "rooms" and not env.geometry.startswith("builtin:") and not Path(env.geometry).exists():
        v.append(f"environment.geometry: file not found: {env.geometry}")
    if env.rbf_scale <= 0.0:
        v.append(f"environment.rbf_scale: must be positive, got {env.rbf_scale}")
    if env.rbf_threshold < 0.0:
        v.append(f"environment.rbf_threshold: must be nonnegative, got {env.rbf_threshold}")
    if not 0.0 <= gamma < 1.0:
        v.append(f"gamma: must lie in [0, 1), got {gamma}")
    if recipe.n_policies < 1:
        v.append(f"options.n_policies: must be positive, got {recipe.n_policies}")
    if not recipe.betas:
        v.append("options.betas: must be nonempty")
    for b in recipe.betas:
        if not 0.0 < b <= 1.0:
            v.append(f"options.betas: beta must lie in (0, 1], got {b}")
    return v


def validate_experiment_config(cfg: ExperimentConfig) -> list[str]:
    from .learn import PowerSchedule, validate_schedule

    v = _validate_shared(cfg.environment, cfg.options, cfg.resolved_gamma())
    if cfg.algorithm not in ALGORITHMS:
        v.append(f"algorithm: unknown algorithm {cfg.algorithm!r} (choose from {', '.join(ALGORITHMS)})")
    if cfg.algorithm in TABULAR_ALGOS and cfg.environment.kind == "rooms":
        v.append(f"algorithm: {cfg.algorithm} is tabular and cannot run on the continuous rooms domain")
    if cfg.algorithm in TDC_FAMILY:
        s = cfg.schedule
        report = validate_schedule(PowerSchedule(s.alpha0, s.beta0, s.p, s.q, s.scale))
        v.extend(f"schedule.{viol}" for viol in report.violations)
    if cfg.behavior.kind not in ("random", "egreedy"):
        v.append(f"behavior.kind: unknown kind {cfg.behavior.kind!r}")
    if not 0.0 <= cfg.behavior.epsilon <= 1.0:
        v.append(f"behavior.epsilon: must lie in [0, 1], got {cfg.behavior.epsilon}")
    if cfg.episodes <= 0:
        v.append(f"episodes: must be positive, got {cfg.episodes}")
    if cfg.max_steps <= 0:
        v.append(f"max_steps: must be positive, got {cfg.max_steps}")
    if cfg.step_budget is not None and cfg.step_budget <= 0:
        v.append(f"step_budget: must be positive when set, got {cfg.step_budget}")
    if cfg.eval_every < 0:
        v.append(f"eval_every: must be nonnegative, got {cfg.eval_every}")
    if cfg.tabular_alpha <= 0:
        v.append(f"tabular_alpha: must be positive, got {cfg.tabular_alpha}")
    if cfg.workers < 1:
        v.append(f"workers: must be at least 1, got {cfg.workers}")
    if cfg.planning.candidates < 1:
        v.append(f"planning.candidates: must be at least 1, got {cfg.planning.candidates}")
    if cfg.planning.sim_steps < 1:
        v.append(f"planning.sim_steps: must be at least 1, got {cfg.planning.sim_steps}")
    return v


def validate_search_config(cfg: SearchSuiteConfig) -> list[str]:
    v = _validate_shared(cfg.environment, cfg.options, cfg.resolved_gamma())
    if cfg.environment.kind != "gridworld":
        v.append("environment.kind: the search suite runs on the gridworld")
    for tag in cfg.conditions:
        if tag not in "abcdef":
            v.append(f"conditions: unknown tag {tag!r}")
    for name in ("value_learning_episodes", "n_rollouts", "depth", "episodes", "max_decisions", "max_steps"):
        if getattr(cfg, name) <= 0:
            v.append(f"{name}: must be positive")
    if cfg.random_subset_size < 1:
        v.append("random_subset_size: must be at least 1")
    if cfg.start not in ("far", "uniform"):
        v.append(f"start: unknown start distribution {cfg.start!r}")
    return v


# ---------------------------------------------------------------------------
# Loading, overrides, hashing
# ---------------------------------------------------------------------------


def apply_env_overrides(data: dict, environ=None) -> dict:
    """Apply OPTIONTD_* environment overrides; ``__`` separates nesting levels.

    Values are parsed as YAML scalars, so numbers, booleans, and lists work:
    OPTIONTD_BEHAVIOR__EPSILON=0.2, OPTIONTD_OPTIONS__BETAS='[0.5, 1.0]'.
    """
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(data))  # deep copy of plain structures
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        node = out
        for part in path[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[path[-1]] = yaml.safe_load(raw)
    return out


def load_config_file(path, environ=None) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"config root must be a mapping, got {type(data).__name__}"])
    return apply_env_overrides(data, environ)


def config_mode(data: dict) -> str:
    return str(data.get("mode", "experiment"))


def resolved_dict(cfg) -> dict:
    """Fully resolved plain-dict form of a config (dataclasses expanded)."""

    def convert(obj):
        if hasattr(obj, "__dataclass_fields__"):
            return {k: convert(getattr(obj, k)) for k in obj.__dataclass_fields__}
        if isinstance(obj, (list, tuple)):
            return [convert(x) for x in obj]
        return obj

    out = convert(cfg)
    out["resolved_gamma"] = cfg.resolved_gamma()
    return out


def config_hash(cfg) -> str:
    blob = json.dumps(resolved_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
