"""Core types, reward accumulation, and the episode driver."""

import numpy as np
import pytest
from numpy.random import default_rng

from optiontd.core import (
    Action,
    DecisionRule,
    PrimitiveTransition,
    SmdpTransition,
    discounted_accumulate,
    effective_discount,
    run_episode,
    write_transitions_csv,
)
from optiontd.envs import Gridworld, canonical_gridworld_spec, GridworldSpec, load_gridworld_map
from optiontd.options import BiasedRandomPolicy, LinearOption

from conftest import ChainEnv


class FixedActionBehavior(DecisionRule):
    def __init__(self, action_id):
        self.action_id = action_id

    def decide(self, state, features, rng):
        return Action(self.action_id)


class RandomActionBehavior(DecisionRule):
    def __init__(self, action_count):
        self.action_count = action_count

    def decide(self, state, features, rng):
        return Action(int(rng.integers(self.action_count)))


class TestDiscountedAccumulate:
    def test_single_step_reduces_to_reward(self):
        assert discounted_accumulate([5.0], 0.9) == 5.0

    def test_hand_summed_series(self):
        # 1 + 0.5 + 0.25
        assert discounted_accumulate([1.0, 1.0, 1.0], 0.5) == pytest.approx(1.75)

    def test_gamma_one_rejected(self):
        with pytest.raises(ValueError):
            discounted_accumulate([-1.0, -1.0, 10.0], 1.0)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            discounted_accumulate([], 0.9)

    def test_constant_rewards_match_closed_form(self):
        # sum_{i<k} gamma^i c == c (1 - gamma^k) / (1 - gamma)
        rng = default_rng(0)
        for _ in range(50):
            c = float(rng.normal())
            gamma = float(rng.uniform(0.0, 0.999))
            k = int(rng.integers(1, 40))
            expected = c * (1 - gamma**k) / (1 - gamma)
            assert discounted_accumulate([c] * k, gamma) == pytest.approx(expected, rel=1e-12, abs=1e-12)


class TestEffectiveDiscount:
    def test_terminal_is_zero(self):
        assert effective_discount(0.9, 3, True) == 0.0

    def test_duration_one_is_exactly_gamma(self):
        assert effective_discount(0.95, 1, False) == 0.95

    def test_duration_power(self):
        assert effective_discount(0.9, 2, False) == pytest.approx(0.81)


class TestRunEpisode:
    def test_goal_entering_action_pays_goal_reward(self):
        # 1x3 corridor: start left of the goal, step right, collect +10
        spec = load_gridworld_map("..G", noise=0.0)
        env = Gridworld(spec)

        class StartRight(DecisionRule):
            def decide(self, state, features, rng):
                return Action(3)

        rng = default_rng(0)
        # reset is uniform over the two free cells; force the adjacent one
        result = None
        for _ in range(10):
            r = run_episode(env, StartRight(), 0.95, 10, rng)
            if r.goal_reached and r.primitive_steps == 1:
                result = r
                break
        assert result is not None
        assert result.episode_return >= 10.0

    def test_zero_max_steps_rejected(self):
        env = Gridworld(canonical_gridworld_spec())
        with pytest.raises(ValueError):
            run_episode(env, FixedActionBehavior(0), 0.95, 0, default_rng(0))

    def test_wall_walk_logs_bump_penalty(self):
        # 1x3 corridor, keep walking left into the boundary; cap ends episode
        spec = load_gridworld_map("..G", noise=0.0)
        env = Gridworld(spec)
        rng = default_rng(1)
        result = run_episode(env, FixedActionBehavior(2), 0.95, 5, rng)
        assert not result.goal_reached
        assert any(t.reward == spec.reward_wall for t in result.transitions)
        assert result.primitive_steps == 5

    def test_deterministic_replay_bit_identical(self):
        env = Gridworld(canonical_gridworld_spec())
        logs = []
        for _ in range(2):
            rng = default_rng(42)
            result = run_episode(env, RandomActionBehavior(4), 0.95, 200, rng)
            logs.append(result.transitions)
        assert len(logs[0]) == len(logs[1])
        for a, b in zip(logs[0], logs[1]):
            assert a == b

    def test_mixed_granularity_and_return_accounting(self):
        env = ChainEnv()
        option = LinearOption(0, BiasedRandomPolicy(1, 0.9, 2), 0.5)

        class Mixed(DecisionRule):
            def __init__(self):
                self.turn = 0

            def decide(self, state, features, rng):
                self.turn += 1
                return Action(1) if self.turn % 2 else option

        rng = default_rng(7)
        result = None
        for _ in range(10):
            r = run_episode(env, Mixed(), 0.9, 50, rng)
            kinds = {type(t) for t in r.transitions}
            if PrimitiveTransition in kinds and SmdpTransition in kinds:
                result = r
                break
        assert result is not None
        # undiscounted return equals reward_step per step except the goal step
        expected = env.reward_step * (result.primitive_steps - 1)
        if result.goal_reached:
            expected += env.reward_goal
        else:
            expected += env.reward_step
        assert result.episode_return == pytest.approx(expected)

    def test_discounted_return_consistent(self):
        env = ChainEnv()
        rng = default_rng(3)
        result = run_episode(env, RandomActionBehavior(2), 0.9, 30, rng)
        # every transition here is primitive: recompute the discounted sum
        rewards = [t.reward for t in result.transitions]
        expected = sum(r * 0.9**i for i, r in enumerate(rewards))
        assert result.discounted_return == pytest.approx(expected, rel=1e-12)


def test_duration_one_smdp_equals_primitive_reward():
    env = ChainEnv()
    option = LinearOption(0, BiasedRandomPolicy(1, 0.9, 2), 1.0)  # always one step
    from optiontd.options import execute_option

    rng = default_rng(11)
    state = env.reset(rng)
    ex = execute_option(env, state, option, 0.9, 10, rng)
    assert ex.transition.duration_l == 1
    assert ex.transition.cumulative_reward == ex.rewards[0]


def test_transition_csv_schema(tmp_path):
    env = ChainEnv()
    rng = default_rng(5)
    result = run_episode(env, RandomActionBehavior(2), 0.9, 10, rng)
    path = tmp_path / "transitions.csv"
    write_transitions_csv(path, [(0, result.transitions)])
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "episode,step,kind,option_or_action_id,reward,duration_l,terminal"
    first = rows[1].split(",")
    assert first[0] == "0" and first[2] == "P" and first[5] == "1"
    # reward column round-trips exactly
    assert float(first[4]) == result.transitions[0].reward
