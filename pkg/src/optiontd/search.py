"""Decision-time planning: depth-limited sampled rollouts over option models,
and the six gridworld decision-rule conditions compared in the experiments.

Rollouts sample models generatively against the environment's pure step
function, accumulate discounted reward for a fixed number of decision epochs,
and cap the trajectory with a learned leaf value estimate; per-first-move
averages pick the move to execute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Action
from .options import LinearOption, execute_option


class MissingArtifactError(RuntimeError):
    """A condition was asked to run without its learned value artifact."""

    def __init__(self, artifact: str, tag: str):
        super().__init__(f"condition ({tag}) requires the missing artifact {artifact!r}")
        self.artifact = artifact


@dataclass(eq=False)
class ValueHeads:
    """Per-option value heads: row r of theta weighs option ids[r]'s value."""

    ids: tuple
    theta: np.ndarray  # (H, n)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self._row = {o: r for r, o in enumerate(self.ids)}

    def values(self, phi) -> np.ndarray:
        if phi.nnz == 1:
            return self.theta[:, phi.idx[0]] * phi.val[0]
        return self.theta[:, phi.idx] @ phi.val

    def value(self, phi) -> float:
        """Greedy state value: the best head's estimate."""
        return float(np.max(self.values(phi)))

    def greedy(self, phi, subset=None) -> int:
        """Highest-valued id (ties to the lowest id), optionally over a subset."""
        ids = self.ids if subset is None else sorted(subset)
        vals = self.values(phi)
        best_id, best_v = None, -math.inf
        for o in ids:
            v = float(vals[self._row[o]])
            if v > best_v:
                best_id, best_v = o, v
        return best_id


@dataclass(eq=False)
class RolloutConfig:
    """Budget and model pool for one planning decision.

    ``env`` is used as the generative simulator (its step is pure). The pool
    is kept sorted by option id so tie-breaking is deterministic; ``leaf``
    supplies the value guess at the rollout horizon (None means zero).
    """

    env: object
    pool: Sequence[LinearOption]
    leaf: ValueHeads | None = None
    n_rollouts: int = 100
    depth: int = 3
    max_option_steps: int = 100

    def __post_init__(self):
        self.pool = tuple(sorted(self.pool, key=lambda o: o.id))
        if not self.pool:
            raise ValueError("rollout model pool must be nonempty")
        if self.n_rollouts < 1 or self.depth < 1:
            raise ValueError("rollout count and depth must be at least 1")


def rollout_values(state, config: RolloutConfig, gamma: float, rng) -> dict[int, tuple[float, int]]:
    """Sampled root value per first move: id -> (mean return, sample count).

    First moves cycle round-robin through the pool for as many full passes as
    the budget allows (guaranteeing coverage), then uniformly at random; moves
    below the root are always uniform. Each rollout return is the discounted
    sum over its decision epochs plus gamma^elapsed times the leaf estimate.
    """
    pool = config.pool
    n_pool = len(pool)
    covered = (config.n_rollouts // n_pool) * n_pool
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for j in range(config.n_rollouts):
        first = pool[j % n_pool] if j < covered else pool[int(rng.integers(n_pool))]
        s = state
        total = 0.0
        elapsed = 0
        terminal = False
        for d in range(config.depth):
            if d == 0:
                model = first
            elif n_pool == 1:
                model = first
            else:
                model = pool[int(rng.integers(n_pool))]
            ex = execute_option(config.env, s, model, gamma, config.max_option_steps, rng)
            total += gamma**elapsed * ex.transition.cumulative_reward
            elapsed += ex.transition.duration_l
            s = ex.end_state
            if ex.transition.terminal:
                terminal = True
                break
        if not terminal and config.leaf is not None:
            total += gamma**elapsed * config.leaf.value(config.env.feature_map(s))
        sums[first.id] = sums.get(first.id, 0.0) + total
        counts[first.id] = counts.get(first.id, 0) + 1
    return {o: (sums[o] / counts[o], counts[o]) for o in sums}


def rollout_plan(state, config: RolloutConfig, gamma: float, rng) -> LinearOption:
    """Choose the first move with the best sampled root value (ties: lowest id)."""
    stats = rollout_values(state, config, gamma, rng)
    best_id, best_v = None, -math.inf
    for o in sorted(stats):
        v = stats[o][0]
        if v > best_v:
            best_id, best_v = o, v
    for option in config.pool:
        if option.id == best_id:
            return option
    raise RuntimeError("unreachable: chosen move not in pool")


# ---------------------------------------------------------------------------
# The six decision conditions
# ---------------------------------------------------------------------------

CONDITION_TAGS = ("a", "b", "c", "d", "e", "f")


@dataclass(eq=False)
class SearchArtifacts:
    """Everything the six conditions draw on: the option pools, per-option
    value heads (greedy conditions), and single-vector behavior-value
    estimates used as rollout leaf guesses."""

    primitive_options: Sequence[LinearOption] | None = None
    crafted_options: Sequence[LinearOption] | None = None
    random_options: Sequence[LinearOption] | None = None
    primitive_values: ValueHeads | None = None
    crafted_values: ValueHeads | None = None  # heads over primitives + crafted
    random_values: ValueHeads | None = None
    leaf_values: ValueHeads | None = None  # shared value guess at the horizon


@dataclass
class ConditionEpisode:
    episode: int
    episode_return: float
    goal_reached: bool
    decisions: int
    primitive_steps: int


@dataclass
class ConditionResult:
    tag: str
    mean_return: float
    stderr_return: float  # NaN when only one episode ran
    episodes: list[ConditionEpisode]

    @property
    def returns(self) -> list[float]:
        return [e.episode_return for e in self.episodes]


def _require(artifacts: SearchArtifacts, tag: str, *names: str):
    values = []
    for name in names:
        v = getattr(artifacts, name)
        if v is None:
            raise MissingArtifactError(name, tag)
        values.append(v)
    return values


def run_condition(tag: str, env, artifacts: SearchArtifacts, episodes: int, rng, *,
                  gamma: float, n_rollouts: int = 100, depth: int = 3, max_decisions: int = 200,
                  max_steps: int = 1000, random_subset_size: int = 6,
                  start_states: Sequence | None = None) -> ConditionResult:
    """Run one decision condition for a number of episodes.

    (a) greedy over primitive values, (b) the primitive suggested by the
    greedy crafted option, (c) the primitive suggested by the greedy random
    option, (d) rollouts over primitives, (e) rollouts over primitives plus
    crafted options, (f) rollouts over a per-decision sample of the random
    set. Every condition decides what to do on the next time step: one
    primitive action per decision epoch (for the rollout conditions, the
    first action of the chosen move), re-deliberating each step.

    ``start_states`` pins the episode starts (shared across conditions for
    paired comparisons); otherwise starts come from ``env.reset``.
    """
    if tag not in CONDITION_TAGS:
        raise ValueError(f"unknown condition tag {tag!r}")
    if episodes <= 0:
        raise ValueError("episodes must be positive")

    if tag == "a":
        (heads,) = _require(artifacts, tag, "primitive_values")
    elif tag == "b":
        crafted, heads = _require(artifacts, tag, "crafted_options", "crafted_values")
        crafted_by_id = {o.id: o for o in crafted}
    elif tag == "c":
        randoms, heads = _require(artifacts, tag, "random_options", "random_values")
        random_by_id = {o.id: o for o in randoms}
    elif tag == "d":
        prims, heads = _require(artifacts, tag, "primitive_options", "leaf_values")
        pool = list(prims)
    elif tag == "e":
        prims, crafted, heads = _require(artifacts, tag, "primitive_options", "crafted_options", "leaf_values")
        pool = list(prims) + list(crafted)
    else:  # f
        randoms, heads = _require(artifacts, tag, "random_options", "leaf_values")
        randoms = list(randoms)

    results: list[ConditionEpisode] = []
    for ep in range(episodes):
        state = start_states[ep] if start_states is not None else env.reset(rng)
        phi = env.feature_map(state)
        total = 0.0
        steps = 0
        decisions = 0
        goal = False
        while decisions < max_decisions and steps < max_steps:
            if tag == "a":
                a = heads.greedy(phi)
                reward, state, terminal = env.step(state, Action(a), rng)
                phi = env.feature_map(state)
                total += reward
                steps += 1
            elif tag in ("b", "c"):
                by_id = crafted_by_id if tag == "b" else random_by_id
                o = heads.greedy(phi, subset=by_id.keys())
                a = by_id[o].policy.mode(phi)
                reward, state, terminal = env.step(state, Action(a), rng)
                phi = env.feature_map(state)
                total += reward
                steps += 1
            else:
                if tag == "f":
                    picks = rng.choice(len(randoms), size=min(random_subset_size, len(randoms)), replace=False)
                    pool = [randoms[i] for i in picks]
                cfg = RolloutConfig(env=env, pool=pool, leaf=heads, n_rollouts=n_rollouts, depth=depth)
                move = rollout_plan(state, cfg, gamma, rng)
                a = move.policy.mode(phi)
                reward, state, terminal = env.step(state, Action(a), rng)
                phi = env.feature_map(state)
                total += reward
                steps += 1
            decisions += 1
            if terminal:
                goal = True
                break
        results.append(ConditionEpisode(ep, total, goal, decisions, steps))

    returns = np.array([r.episode_return for r in results])
    mean = float(np.mean(returns))
    stderr = float(np.std(returns, ddof=1) / math.sqrt(len(returns))) if len(returns) > 1 else math.nan
    return ConditionResult(tag=tag, mean_return=mean, stderr_return=stderr, episodes=results)
