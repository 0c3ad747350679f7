"""Shared MDP/SMDP domain types, reward accumulation, and the episode driver.

States, actions, and transitions are immutable value types; environments are
pure functions of (state, action, rng draw), so a fixed seed replays a
trajectory exactly and independent runs can execute in parallel with no shared
mutable state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, NamedTuple, Protocol, Sequence

if TYPE_CHECKING:
    from .features import FeatureVector


class FloorColor(Enum):
    """Floor colors of the continuous rooms domain, in feature-bit order."""

    PURPLE = 0
    GREEN = 1
    YELLOW = 2
    BLUE = 3


class DiscreteState(NamedTuple):
    index: int


class ContinuousState(NamedTuple):
    x: float
    y: float
    psi: float  # heading in degrees, normalized to [0, 360)
    floor_color: FloorColor


class Action(NamedTuple):
    id: int


class PrimitiveTransition(NamedTuple):
    """One primitive decision epoch."""

    state_features: FeatureVector
    action: Action
    reward: float
    next_features: FeatureVector
    terminal: bool


class SmdpTransition(NamedTuple):
    """One SMDP decision epoch: an option executed to termination.

    ``cumulative_reward`` is the discounted sum of the primitive rewards
    collected during execution; ``duration_l`` counts primitive steps (>= 1).
    """

    start_features: FeatureVector
    option_id: int
    cumulative_reward: float
    duration_l: int
    end_features: FeatureVector
    terminal: bool


class Environment(Protocol):
    """Contract every environment implements.

    ``step`` must be a pure function of (state, action, rng draw): replaying
    with the same seed reproduces the trajectory bit for bit.
    """

    action_count: int
    feature_map: Callable[[Any], "FeatureVector"]

    def reset(self, rng) -> Any: ...

    def step(self, state, action: Action, rng) -> tuple[float, Any, bool]: ...


class DivergenceError(RuntimeError):
    """An update produced a non-finite quantity."""


def discounted_accumulate(rewards: Sequence[float], gamma: float) -> float:
    """Discounted sum of a reward sequence: sum_i gamma^i * rewards[i].

    Raises on an empty sequence (a zero-length option execution is forbidden)
    and on gamma outside [0, 1).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"discount factor must lie in [0, 1), got {gamma}")
    if len(rewards) == 0:
        raise ValueError("empty reward sequence: options must run at least one step")
    total = 0.0
    g = 1.0
    for r in rewards:
        total += g * r
        g *= gamma
    return total


def effective_discount(gamma: float, duration_l: int, terminal: bool) -> float:
    """Bootstrap discount gamma^l, replaced by 0 on episode-ending transitions."""
    if terminal:
        return 0.0
    if duration_l == 1:
        return gamma
    return gamma**duration_l


class DecisionRule:
    """Base behavior for :func:`run_episode`.

    ``decide`` returns either an :class:`Action` (primitive step) or a linear
    option to execute to termination. ``observe`` is called once per logged
    transition; learning agents override it, plain behaviors ignore it.
    """

    def decide(self, state, features, rng):
        raise NotImplementedError

    def observe(self, transition) -> None:
        pass


@dataclass
class EpisodeResult:
    episode_return: float  # undiscounted sum of primitive rewards
    discounted_return: float
    transitions: list
    goal_reached: bool
    primitive_steps: int
    decision_epochs: int


def run_episode(env, behavior: DecisionRule, gamma: float, max_steps: int, rng) -> EpisodeResult:
    """Run one episode, logging transitions at the behavior's granularity.

    Primitive decisions log a PrimitiveTransition; option decisions execute the
    option to termination and log a single SmdpTransition. Truncation at
    ``max_steps`` primitive steps is a normal outcome with terminal=False.
    """
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    from .options import execute_option

    state = env.reset(rng)
    phi = env.feature_map(state)
    transitions: list = []
    total = 0.0
    disc = 0.0
    steps = 0
    epochs = 0
    goal = False
    while steps < max_steps:
        decision = behavior.decide(state, phi, rng)
        if isinstance(decision, Action):
            reward, nxt, terminal = env.step(state, decision, rng)
            nphi = env.feature_map(nxt)
            tr = PrimitiveTransition(phi, decision, reward, nphi, terminal)
            total += reward
            disc += gamma**steps * reward
            steps += 1
        else:
            ex = execute_option(env, state, decision, gamma, max_steps - steps, rng, start_features=phi)
            tr = ex.transition
            total += ex.undiscounted_reward
            disc += gamma**steps * tr.cumulative_reward
            steps += tr.duration_l
            nxt, nphi, terminal = ex.end_state, tr.end_features, tr.terminal
        transitions.append(tr)
        epochs += 1
        behavior.observe(tr)
        state, phi = nxt, nphi
        if terminal:
            goal = True
            break
    return EpisodeResult(total, disc, transitions, goal, steps, epochs)


TRANSITION_CSV_COLUMNS = ["episode", "step", "kind", "option_or_action_id", "reward", "duration_l", "terminal"]


def write_transitions_csv(path, per_episode) -> None:
    """Write a transition log; ``per_episode`` yields (episode, transitions).

    Kind is ``P`` for primitive rows (reward = one-step reward, duration 1) and
    ``O`` for option rows (reward = discounted cumulative reward).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRANSITION_CSV_COLUMNS)
        for episode, transitions in per_episode:
            for step, t in enumerate(transitions):
                if isinstance(t, PrimitiveTransition):
                    writer.writerow([episode, step, "P", t.action.id, repr(t.reward), 1, int(t.terminal)])
                else:
                    writer.writerow(
                        [episode, step, "O", t.option_id, repr(t.cumulative_reward), t.duration_l, int(t.terminal)]
                    )
