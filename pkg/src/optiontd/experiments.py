"""The experiment harness: seeded runs, CSV artifacts, aggregation, curve
comparison, and the six-condition search suite.

Every run is a pure function of (config, seed): replaying a manifest's config
and seeds reproduces the result CSVs bit for bit (wall-clock columns aside,
which is why ``wall_ms`` sits last). Seeds fan out across worker processes
when configured; each worker owns its environment and learner, and the parent
is the single writer of artifact files.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agents import (
    LoemBehaviorAgent,
    LstdBehaviorAgent,
    ModelPlanningTdcAgent,
    OptionValueAgent,
    SimPlanningTdcAgent,
    TabularQAgent,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    SearchSuiteConfig,
    config_hash,
    parse_experiment_config,
    resolved_dict,
    validate_experiment_config,
    validate_search_config,
)
from .core import PrimitiveTransition, SmdpTransition, run_episode, write_transitions_csv
from .features import RbfGrid
from .envs import (
    Gridworld,
    Rooms,
    bfs_distances,
    canonical_gridworld_spec,
    canonical_rooms_spec,
    load_gridworld_map_file,
    load_rooms_geometry_file,
)
from .learn import LstdAccumulator, PowerSchedule, SingularSystemError, save_weights
from .options import hallway_options, primitive_options, random_option_set
from .search import SearchArtifacts, ValueHeads, run_condition

RUN_CSV_COLUMNS = [
    "episode", "return", "discounted_return", "goal_reached", "decision_epochs", "primitive_steps", "wall_ms",
]
AGGREGATE_CSV_COLUMNS = [
    "episode", "n", "mean_return", "stderr_return", "mean_discounted_return", "stderr_discounted_return", "goal_rate",
]
SEARCH_CSV_COLUMNS = ["condition", "episode", "return", "goal_reached", "decisions", "primitive_steps"]


def build_environment(cfg: ExperimentConfig | SearchSuiteConfig):
    env = cfg.environment
    if env.kind == "gridworld":
        if env.map.startswith("builtin:"):
            spec = canonical_gridworld_spec(noise=env.noise, noise_mode=env.noise_mode)
        else:
            spec = load_gridworld_map_file(env.map, noise=env.noise, noise_mode=env.noise_mode)
        return Gridworld(spec)
    spec = canonical_rooms_spec() if env.geometry.startswith("builtin:") else load_rooms_geometry_file(env.geometry)
    grid = RbfGrid.canonical()
    if env.rbf_scale != grid.scale or env.rbf_threshold != grid.sparsify_threshold:
        grid = RbfGrid(centers=grid.centers, scale=env.rbf_scale, sparsify_threshold=env.rbf_threshold)
    return Rooms(spec, grid=grid)


def _build_options(cfg, action_count: int):
    return random_option_set(cfg.options.n_policies, cfg.options.betas, action_count, cfg.options.seed)


def build_agent(cfg: ExperimentConfig, env):
    gamma = cfg.resolved_gamma()
    s = cfg.schedule
    schedule = PowerSchedule(s.alpha0, s.beta0, s.p, s.q, s.scale)
    dim = env.feature_dim
    algo = cfg.algorithm
    if algo in ("smdp-tdc", "smdp-lstd", "loem", "smdp-q"):
        options, _ = _build_options(cfg, env.action_count)
    else:
        options = primitive_options(env.action_count)
    if algo == "smdp-tdc":
        # Random behavior learns per-option value heads off-policy; greedy
        # control plans over option models (learned tables on one-hot feature
        # maps, generative lookahead on continuous ones).
        if cfg.behavior.kind == "random":
            return OptionValueAgent(options, dim, gamma, schedule, "random", cfg.behavior.epsilon)
        if cfg.environment.kind == "gridworld":
            return ModelPlanningTdcAgent(options, dim, gamma, schedule, cfg.behavior.epsilon,
                                         cfg.planning.reward_prior)
        return SimPlanningTdcAgent(options, env, dim, gamma, schedule, cfg.behavior.epsilon,
                                   cfg.planning.candidates, cfg.planning.sim_steps)
    if algo == "tdc":
        return OptionValueAgent(options, dim, gamma, schedule, cfg.behavior.kind, cfg.behavior.epsilon,
                                primitive_mode=True)
    if algo == "smdp-lstd":
        return LstdBehaviorAgent(options, dim, gamma)
    if algo == "loem":
        return LoemBehaviorAgent(options, dim, gamma, schedule)
    if algo == "smdp-q":
        return TabularQAgent(options, gamma, cfg.tabular_alpha, cfg.behavior.kind, cfg.behavior.epsilon)
    if algo == "q":
        return TabularQAgent(options, gamma, cfg.tabular_alpha, cfg.behavior.kind, cfg.behavior.epsilon,
                             primitive_mode=True)
    raise ConfigError([f"algorithm: unknown algorithm {algo!r}"])


def _agent_artifact(agent) -> dict:
    if isinstance(agent, OptionValueAgent):
        return {"theta": agent.theta.copy(), "w": agent.w.copy(), "ids": [o.id for o in agent.options]}
    if isinstance(agent, (ModelPlanningTdcAgent, SimPlanningTdcAgent)):
        return {"theta": agent.theta.copy(), "w": agent.w.copy(), "ids": None}
    if isinstance(agent, TabularQAgent):
        dim = max((s for (s, _), _ in agent.q.table.items()), default=0) + 1
        theta = np.zeros((len(agent.ids), dim))
        for (s, o), v in agent.q.table.items():
            theta[o, s] = v
        return {"theta": theta, "w": None, "ids": agent.ids}
    if isinstance(agent, LstdBehaviorAgent):
        try:
            theta = agent.solve()
        except (SingularSystemError, ValueError):
            theta = np.zeros(agent.acc.dim)
        return {"theta": theta, "w": None, "ids": None}
    if isinstance(agent, LoemBehaviorAgent):
        return {"theta": agent.theta.copy(), "w": None, "ids": None}
    raise TypeError(f"unknown agent type {type(agent).__name__}")


EVAL_CSV_COLUMNS = ["episode", "return", "discounted_return", "goal_reached"]


def _greedy_evaluation(env, agent, gamma, max_steps, rng):
    """One frozen, greedy evaluation episode; restores the agent afterward."""
    epsilon = getattr(agent, "epsilon", None)
    agent.learning = False
    if epsilon is not None:
        agent.epsilon = 0.0
    try:
        return run_episode(env, agent, gamma, max_steps, rng)
    finally:
        agent.learning = True
        if epsilon is not None:
            agent.epsilon = epsilon


@dataclass
class RunResult:
    seed: int
    rows: list[list]  # RUN_CSV_COLUMNS order
    artifact: dict
    transitions: list | None  # (episode, transitions) pairs when logging
    eval_rows: list[list] | None = None  # EVAL_CSV_COLUMNS order


def run_single(cfg: ExperimentConfig, seed: int) -> RunResult:
    """One seeded run: fresh environment, fresh agent, one rng stream."""
    env = build_environment(cfg)
    agent = build_agent(cfg, env)
    gamma = cfg.resolved_gamma()
    rng = np.random.default_rng([seed, 0])
    rows = []
    logged = [] if cfg.log_transitions else None
    eval_rows: list[list] = []
    used_steps = 0
    for episode in range(cfg.episodes):
        if cfg.step_budget is not None and used_steps >= cfg.step_budget:
            break
        cap = cfg.max_steps
        if cfg.step_budget is not None:
            cap = min(cap, cfg.step_budget - used_steps)
        t0 = time.perf_counter()
        result = run_episode(env, agent, gamma, cap, rng)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        used_steps += result.primitive_steps
        rows.append([
            episode,
            result.episode_return,
            result.discounted_return,
            int(result.goal_reached),
            result.decision_epochs,
            result.primitive_steps,
            wall_ms,
        ])
        if logged is not None:
            logged.append((episode, result.transitions))
        if cfg.eval_every and (episode + 1) % cfg.eval_every == 0 and hasattr(agent, "learning"):
            ev = _greedy_evaluation(env, agent, gamma, cfg.max_steps, rng)
            eval_rows.append([episode, ev.episode_return, ev.discounted_return, int(ev.goal_reached)])
    return RunResult(seed=seed, rows=rows, artifact=_agent_artifact(agent), transitions=logged,
                     eval_rows=eval_rows if cfg.eval_every else None)


def _run_single_from_dict(raw: dict, seed: int) -> RunResult:
    cfg, violations = parse_experiment_config(raw)
    if violations:
        raise ConfigError(violations)
    return run_single(cfg, seed)


def _format_cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def aggregate_rows(per_run_rows: list[list[list]]) -> list[list]:
    """Aggregate per-run rows (RUN_CSV_COLUMNS order) across runs by episode.

    Runs may have ragged lengths (step budgets); each episode aggregates over
    the runs that reached it. Single-run cells report NaN standard errors.
    """
    max_len = max(len(rows) for rows in per_run_rows)
    out = []
    for ep in range(max_len):
        rets = np.array([rows[ep][1] for rows in per_run_rows if len(rows) > ep])
        discs = np.array([rows[ep][2] for rows in per_run_rows if len(rows) > ep])
        goals = np.array([rows[ep][3] for rows in per_run_rows if len(rows) > ep])
        n = len(rets)
        stderr = float(np.std(rets, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        stderr_d = float(np.std(discs, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        out.append([ep, n, float(np.mean(rets)), stderr, float(np.mean(discs)), stderr_d, float(np.mean(goals))])
    return out


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> Path:
    """Run all seeds of an experiment and write the artifact directory:
    per-run CSVs, the aggregate CSV, weight snapshots, and a manifest."""
    violations = validate_experiment_config(cfg)
    if violations:
        raise ConfigError(violations)
    out_dir = Path(out if out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    gamma = cfg.resolved_gamma()

    if cfg.workers > 1:
        raw = resolved_dict(cfg)
        raw.pop("resolved_gamma", None)
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_single_from_dict, [raw] * len(cfg.seeds), cfg.seeds))
    else:
        results = [run_single(cfg, seed) for seed in cfg.seeds]

    for res in results:
        _write_csv(out_dir / f"run_{res.seed}.csv", RUN_CSV_COLUMNS, res.rows)
        art = res.artifact
        save_weights(out_dir / f"weights_{res.seed}.npz", art["theta"], art["w"],
                     gamma=gamma, algorithm=cfg.algorithm, seed=res.seed, ids=art["ids"])
        if res.transitions is not None:
            write_transitions_csv(out_dir / f"transitions_{res.seed}.csv", res.transitions)
        if res.eval_rows is not None:
            _write_csv(out_dir / f"eval_{res.seed}.csv", EVAL_CSV_COLUMNS, res.eval_rows)

    _write_csv(out_dir / "aggregate.csv", AGGREGATE_CSV_COLUMNS, aggregate_rows([r.rows for r in results]))
    manifest = {
        "kind": "experiment",
        "version": __version__,
        "config": resolved_dict(cfg),
        "config_hash": config_hash(cfg),
        "seeds": list(cfg.seeds),
        "algorithm": cfg.algorithm,
        "run_columns": RUN_CSV_COLUMNS,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir


# ---------------------------------------------------------------------------
# Run comparison
# ---------------------------------------------------------------------------

COMPARE_METRICS = ("return", "discounted_return", "goal_rate", "cumulative_goals")


def _load_runs(directory: Path) -> tuple[dict, dict[int, list[list[float]]]]:
    manifest = json.loads((directory / "manifest.json").read_text())
    runs = {}
    for seed in manifest["seeds"]:
        with open(directory / f"run_{seed}.csv") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
        runs[seed] = rows
    return manifest, runs


def _metric_series(rows: list[list[float]], metric: str) -> np.ndarray:
    col = {"return": 1, "discounted_return": 2, "goal_rate": 3}.get(metric)
    if col is not None:
        return np.array([r[col] for r in rows])
    if metric == "cumulative_goals":
        return np.cumsum([r[3] for r in rows])
    raise ValueError(f"unknown metric {metric!r} (choose from {', '.join(COMPARE_METRICS)})")


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    out = np.empty_like(values, dtype=float)
    for i in range(len(values)):
        out[i] = float(np.mean(values[max(0, i - window + 1): i + 1]))
    return out


def compare_runs(dirs, metric: str = "return", window: int = 25, out: str | Path | None = None):
    """Compare aligned learning curves across artifact directories.

    Produces a smoothed curve plot and a significance table pairing shared
    seeds on each run's final-window score. Returns (table rows, out dir).
    """
    from scipy import stats

    dirs = [Path(d) for d in dirs]
    if len(dirs) < 2:
        raise ValueError("need at least two artifact directories to compare")
    if metric not in COMPARE_METRICS:
        raise ValueError(f"unknown metric {metric!r} (choose from {', '.join(COMPARE_METRICS)})")
    loaded = [_load_runs(d) for d in dirs]
    grids = [tuple(int(r[0]) for r in next(iter(runs.values()))) for _, runs in loaded]
    for manifest, runs in loaded:
        lengths = {len(rows) for rows in runs.values()}
        if len(lengths) != 1:
            raise ValueError(f"ragged episode grids inside {manifest['config']['out']}; cannot align curves")
    if len(set(grids)) != 1:
        raise ValueError("episode grids differ across directories; cannot align curves")

    def final_score(rows) -> float:
        series = _metric_series(rows, metric)
        if metric == "cumulative_goals":
            return float(series[-1])
        return float(np.mean(series[-window:]))

    out_dir = Path(out) if out is not None else dirs[0].parent / "comparison"
    out_dir.mkdir(parents=True, exist_ok=True)

    base_manifest, base_runs = loaded[0]
    table = []
    curves = []
    for (manifest, runs), d in zip(loaded, dirs):
        per_seed = {seed: final_score(rows) for seed, rows in runs.items()}
        scores = np.array(list(per_seed.values()))
        mean = float(np.mean(scores))
        stderr = float(np.std(scores, ddof=1) / math.sqrt(len(scores))) if len(scores) > 1 else math.nan
        shared = sorted(set(per_seed) & set(base_runs))
        if d != dirs[0] and len(shared) > 1:
            a = [final_score(base_runs[s]) for s in shared]
            b = [per_seed[s] for s in shared]
            p_value = float(stats.ttest_rel(b, a).pvalue)
        else:
            p_value = math.nan
        table.append([str(d), manifest["algorithm"], len(runs), mean, stderr, p_value])
        stacked = np.mean([_metric_series(rows, metric) for rows in runs.values()], axis=0)
        curves.append((f"{manifest['algorithm']} ({d.name})", _smooth(stacked, window)))

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    for label, ys in curves:
        ax.plot(np.arange(len(ys)), ys, label=label)
    ax.set_xlabel("episode")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    plot_path = out_dir / f"comparison_{metric}.png"
    fig.savefig(plot_path, dpi=120)
    plt.close(fig)

    _write_csv(out_dir / f"comparison_{metric}.csv",
               ["directory", "algorithm", "n_runs", f"final_{metric}", "stderr", "p_vs_first"], table)
    return table, out_dir


# ---------------------------------------------------------------------------
# Search suite
# ---------------------------------------------------------------------------


class _ValuePhaseAgent(OptionValueAgent):
    """Random-behavior value learner that also accumulates the least-squares
    statistics of the behavior value; their solve is the rollout leaf."""

    def __init__(self, pool, dim, gamma, schedule):
        super().__init__(pool, dim, gamma, schedule, behavior="random")
        self.acc = LstdAccumulator(dim)

    def observe(self, t) -> None:
        super().observe(t)
        if isinstance(t, PrimitiveTransition):
            smdp = SmdpTransition(t.state_features, t.action.id, t.reward, 1, t.next_features, t.terminal)
        else:
            smdp = t
        self.acc.add(smdp, self.gamma)

    def leaf_theta(self) -> np.ndarray:
        # min-norm least squares: unvisited feature rows solve to zero instead
        # of making the system singular
        theta, *_ = np.linalg.lstsq(self.acc.A_hat, self.acc.b_hat, rcond=None)
        return theta


def learn_search_artifacts(cfg: SearchSuiteConfig, env) -> SearchArtifacts:
    """Value-learning phase: off-policy random behavior over each pool.

    Each pool yields per-option value heads (used by the greedy conditions);
    the random primitive walk additionally yields the least-squares estimate
    of its own value function, the shared leaf guess of the rollout search.
    """
    gamma = cfg.resolved_gamma()
    s = cfg.schedule
    schedule = PowerSchedule(s.alpha0, s.beta0, s.p, s.q, s.scale)
    dim = env.feature_dim
    prims = primitive_options(env.action_count)
    crafted = hallway_options(env.spec, start_id=env.action_count)
    randoms, _ = _build_options(cfg, env.action_count)

    def learn_values(pool, stream: int) -> tuple[ValueHeads, ValueHeads]:
        agent = _ValuePhaseAgent(pool, dim, gamma, schedule)
        rng = np.random.default_rng([cfg.value_learning_seed, stream])
        for _ in range(cfg.value_learning_episodes):
            run_episode(env, agent, gamma, cfg.max_steps, rng)
        leaf = ValueHeads(ids=(0,), theta=agent.leaf_theta().reshape(1, -1))
        return agent.value_heads(), leaf

    prim_values, leaf = learn_values(prims, 0)
    crafted_values, _ = learn_values(list(prims) + list(crafted), 1)
    random_values, _ = learn_values(randoms, 2)
    return SearchArtifacts(
        primitive_options=prims,
        crafted_options=crafted,
        random_options=randoms,
        primitive_values=prim_values,
        crafted_values=crafted_values,
        random_values=random_values,
        leaf_values=leaf,
    )


def run_search_suite(cfg: SearchSuiteConfig, out: str | Path | None = None) -> Path:
    """Run every configured condition over the shared seeded episode starts."""
    violations = validate_search_config(cfg)
    if violations:
        raise ConfigError(violations)
    out_dir = Path(out if out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = build_environment(cfg)
    gamma = cfg.resolved_gamma()
    artifacts = learn_search_artifacts(cfg, env)

    for name in ("primitive_values", "crafted_values", "random_values", "leaf_values"):
        heads = getattr(artifacts, name)
        save_weights(out_dir / f"{name}.npz", heads.theta, None, gamma=gamma,
                     algorithm=f"search:{name}", seed=cfg.value_learning_seed, ids=heads.ids)
    _, records = _build_options(cfg, env.action_count)
    (out_dir / "random_options.yaml").write_text(yaml.safe_dump(records, sort_keys=True))

    # "far" starts draw from the top third of goal distances, the regime
    # where the decision conditions actually separate
    far_cells = None
    if cfg.start == "far":
        dist = bfs_distances(env.spec, env.spec.goal_cell)
        cutoff = max(dist.values()) * 2.0 / 3.0
        far_cells = sorted(c for c, d in dist.items() if d >= cutoff and c != env.spec.goal_cell)

    def draw_starts(rng):
        from .core import DiscreteState

        if far_cells is None:
            return [env.reset(rng) for _ in range(cfg.episodes)]
        return [DiscreteState(far_cells[int(rng.integers(len(far_cells)))]) for _ in range(cfg.episodes)]

    rows = []
    all_results: dict[str, list] = {tag: [] for tag in cfg.conditions}
    for tag in cfg.conditions:
        for run_index, seed in enumerate(cfg.seeds):
            start_rng = np.random.default_rng([seed, 999])
            starts = draw_starts(start_rng)
            rng = np.random.default_rng([seed, 100 + ord(tag)])
            result = run_condition(
                tag, env, artifacts, cfg.episodes, rng, gamma=gamma,
                n_rollouts=cfg.n_rollouts, depth=cfg.depth, max_decisions=cfg.max_decisions,
                max_steps=cfg.max_steps, random_subset_size=cfg.random_subset_size, start_states=starts,
            )
            for e in result.episodes:
                episode_index = run_index * cfg.episodes + e.episode
                rows.append([tag, episode_index, e.episode_return, int(e.goal_reached), e.decisions,
                             e.primitive_steps])
                all_results[tag].append(e)

    _write_csv(out_dir / "conditions.csv", SEARCH_CSV_COLUMNS, rows)

    summary_rows = []
    for tag in cfg.conditions:
        rets = np.array([e.episode_return for e in all_results[tag]])
        goals = int(sum(e.goal_reached for e in all_results[tag]))
        mean = float(np.mean(rets))
        stderr = float(np.std(rets, ddof=1) / math.sqrt(len(rets))) if len(rets) > 1 else math.nan
        summary_rows.append([tag, len(rets), mean, stderr, goals])
    _write_csv(out_dir / "summary.csv", ["condition", "n", "mean_return", "stderr_return", "goal_completions"],
               summary_rows)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    tags = [r[0] for r in summary_rows]
    means = [r[2] for r in summary_rows]
    errs = [0.0 if math.isnan(r[3]) else r[3] for r in summary_rows]
    ax.bar(tags, means, yerr=errs, capsize=4)
    ax.set_xlabel("condition")
    ax.set_ylabel("mean return")
    fig.tight_layout()
    fig.savefig(out_dir / "conditions.png", dpi=120)
    plt.close(fig)

    manifest = {
        "kind": "search-suite",
        "version": __version__,
        "config": resolved_dict(cfg),
        "config_hash": config_hash(cfg),
        "seeds": list(cfg.seeds),
        "conditions": list(cfg.conditions),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out_dir
