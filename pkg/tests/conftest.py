"""Shared fixtures: a small chain SMDP exercising the environment contract,
plus dataset builders used across learner and acceptance tests."""

import numpy as np
import pytest
from numpy.random import default_rng

from optiontd.features import FeatureVector, tabular_features
from optiontd.options import BiasedRandomPolicy, LinearOption, execute_option


class ChainEnv:
    """Five-state chain: left/right actions, stepping right off the end wins.

    States are plain ints; the terminal is None and maps to a zero feature
    vector. A second, independent implementation of the environment contract
    (reset / pure step / feature_map / action_count) next to the gridworld.
    """

    action_count = 2

    def __init__(self, n: int = 5, reward_step: float = -0.1, reward_goal: float = 1.0):
        self.n = n
        self.reward_step = reward_step
        self.reward_goal = reward_goal
        self._phi = [tabular_features(i, n) for i in range(n)]
        self._terminal_phi = FeatureVector.zeros(n)
        self.feature_map = lambda s: self._terminal_phi if s is None else self._phi[s]

    @property
    def feature_dim(self):
        return self.n

    def reset(self, rng):
        return int(rng.integers(self.n))

    def step(self, state, action, rng):
        if action.id == 1:
            if state == self.n - 1:
                return self.reward_goal, None, True
            return self.reward_step, state + 1, False
        return self.reward_step, max(state - 1, 0), False


def chain_options():
    """Three options over the chain: two beta=0.5 biased walks, one beta=1."""
    return [
        LinearOption(0, BiasedRandomPolicy(1, 0.9, 2), 0.5),
        LinearOption(1, BiasedRandomPolicy(0, 0.8, 2), 0.5),
        LinearOption(2, BiasedRandomPolicy(1, 0.95, 2), 1.0),
    ]


def chain_dataset(n_transitions=10_000, gamma=0.8, seed=0):
    """SMDP transitions collected by uniform-random option behavior."""
    env = ChainEnv()
    options = chain_options()
    rng = default_rng(seed)
    data = []
    state = env.reset(rng)
    while len(data) < n_transitions:
        option = options[int(rng.integers(len(options)))]
        ex = execute_option(env, state, option, gamma, 100, rng)
        data.append(ex.transition)
        state = env.reset(rng) if ex.transition.terminal else ex.end_state
    return data


CHAIN_GAMMA = 0.8


@pytest.fixture(scope="session")
def chain_data():
    return chain_dataset()


def random_primitive_dataset(dim=8, count=60, gamma=0.9, seed=3, nnz=3):
    """Random sparse SMDP transitions for gradient and diagnostic tests."""
    rng = default_rng(seed)
    out = []
    for _ in range(count):
        def sparse():
            idx = np.sort(rng.choice(dim, size=nnz, replace=False))
            val = rng.normal(size=nnz)
            val[val == 0.0] = 0.5
            return FeatureVector(dim, idx.astype(np.int64), val)

        duration = int(rng.integers(1, 4))
        terminal = bool(rng.random() < 0.1)
        from optiontd.core import SmdpTransition

        out.append(SmdpTransition(sparse(), 0, float(rng.normal()), duration, sparse(), terminal))
    return out
