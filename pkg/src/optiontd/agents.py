"""Learning agents that drive the experiments.

Control agents maintain one value head per option (or per primitive action)
and update the executed head with the gradient-corrected TD rule, bootstrapping
through the greedy head at the landing state; behavior is uniform-random or
epsilon-greedy over the available options. Evaluation agents (least-squares,
expectation-model) follow random behavior and estimate the behavior value.
"""

from __future__ import annotations

import numpy as np

from .core import Action, DecisionRule, DivergenceError, PrimitiveTransition, SmdpTransition, effective_discount
from .learn import LstdAccumulator, TabularQ, loem_evaluate_update, q_update, smdp_q_update, tdc_step_inplace
from .options import LoemModel, loem_update_inplace, sample_available_options
from .search import ValueHeads


def _as_smdp_fields(t) -> tuple:
    """(phi, id, reward, duration, phi', terminal) for either transition kind."""
    if isinstance(t, PrimitiveTransition):
        return t.state_features, t.action.id, t.reward, 1, t.next_features, t.terminal
    return t.start_features, t.option_id, t.cumulative_reward, t.duration_l, t.end_features, t.terminal


class UniformRandomBehavior(DecisionRule):
    """Uniform random over options (or primitive actions); learns nothing."""

    def __init__(self, options=None, action_count: int | None = None):
        if (options is None) == (action_count is None):
            raise ValueError("give exactly one of options or action_count")
        self.options = list(options) if options is not None else None
        self.action_count = action_count

    def decide(self, state, features, rng):
        if self.options is None:
            return Action(int(rng.integers(self.action_count)))
        return self.options[int(rng.integers(len(self.options)))]


class OptionValueAgent(DecisionRule):
    """Per-option linear value heads learned with two-timescale TD updates.

    The executed head's TD target bootstraps through the maximum head value at
    the landing features (discounted by gamma^duration), so the heads estimate
    the value of acting greedily over the set. ``behavior`` is "random"
    (off-policy data collection) or "egreedy".
    """

    def __init__(self, options, dim: int, gamma: float, schedule, behavior: str = "egreedy",
                 epsilon: float = 0.1, primitive_mode: bool = False):
        if behavior not in ("random", "egreedy"):
            raise ValueError(f"unknown behavior {behavior!r}")
        self.options = list(options)
        ids = [o.id for o in self.options]
        if ids != list(range(len(ids))):
            raise ValueError("option ids must be contiguous from 0 for matrix-backed heads")
        self.dim = dim
        self.gamma = gamma
        self.schedule = schedule
        self.behavior = behavior
        self.epsilon = epsilon
        self.primitive_mode = primitive_mode
        n = len(self.options)
        self.theta = np.zeros((n, dim))
        self.w = np.zeros((n, dim))
        self.k = np.zeros(n, dtype=np.int64)
        self.learning = True
        self._everywhere = all(o.initiation is None for o in self.options)

    # -- behavior ----------------------------------------------------------

    def _available(self, features) -> list[int]:
        if self._everywhere:
            return range(len(self.options))
        return sample_available_options(self.options, features)

    def _values_at(self, features) -> np.ndarray:
        if features.nnz == 1:
            return self.theta[:, features.idx[0]] * features.val[0]
        if features.nnz == 0:
            return np.zeros(len(self.options))
        return self.theta[:, features.idx] @ features.val

    def decide(self, state, features, rng):
        available = self._available(features)
        if self.behavior == "random" or rng.random() < self.epsilon:
            ids = list(available)
            choice = ids[int(rng.integers(len(ids)))]
        else:
            vals = self._values_at(features)
            if self._everywhere:
                choice = int(np.argmax(vals))  # first max = lowest id
            else:
                ids = list(available)
                choice = ids[int(np.argmax(vals[ids]))]
        option = self.options[choice]
        if self.primitive_mode:
            return Action(option.policy.action)
        return option

    # -- learning ----------------------------------------------------------

    def observe(self, t) -> None:
        if not self.learning:
            return
        phi, o, reward, duration, phi2, terminal = _as_smdp_fields(t)
        g = effective_discount(self.gamma, duration, terminal)
        bootstrap = float(np.max(self._values_at(phi2))) if g != 0.0 else 0.0
        k = int(self.k[o])
        tdc_step_inplace(self.theta[o], self.w[o], phi, g, phi2, reward,
                         self.schedule.alpha(k), self.schedule.beta(k), bootstrap=bootstrap)
        self.k[o] += 1

    def value_heads(self) -> ValueHeads:
        return ValueHeads(ids=tuple(o.id for o in self.options), theta=self.theta.copy())


class ModelPlanningTdcAgent(DecisionRule):
    """Single-vector SMDP TD control with per-option expectation models.

    One theta approximates the greedy-over-options value V(s) ~ theta.phi,
    updated by the two-timescale TD rule on every executed transition. Option
    selection is greedy over model-predicted values b_o.phi + theta.(F_o phi),
    where each option's (F_o, b_o) is the running mean of its observed
    (discounted termination features, discounted reward) at the start state.
    Requires one-hot features; models are exact per-cell regression means.

    ``reward_prior`` seeds unvisited (state, option) model rewards: values
    above the typical learned level make the greedy step sweep untried
    options (systematic but slow with large sets), values below it make the
    agent exploit learned models and explore via epsilon only. Ties are
    broken uniformly at random so an untrained agent does not lock onto one
    option id.
    """

    def __init__(self, options, dim: int, gamma: float, schedule, epsilon: float = 0.1,
                 reward_prior: float = -4.0, primitive_mode: bool = False):
        self.options = list(options)
        n = len(self.options)
        if [o.id for o in self.options] != list(range(n)):
            raise ValueError("option ids must be contiguous from 0 for model tensors")
        self.dim = dim
        self.gamma = gamma
        self.schedule = schedule
        self.epsilon = epsilon
        self.primitive_mode = primitive_mode
        self.theta = np.zeros(dim)
        self.w = np.zeros(dim)
        self.k = 0
        self.models_f = np.zeros((n, dim, dim))
        self.models_b = np.full((n, dim), reward_prior)
        self.visits = np.zeros((n, dim), dtype=np.int64)
        self.learning = True

    def _choose(self, phi, rng) -> int:
        if rng.random() < self.epsilon:
            return int(rng.integers(len(self.options)))
        s = int(phi.idx[0])
        q = self.models_b[:, s] + self.models_f[:, :, s] @ self.theta
        top = np.flatnonzero(q >= q.max() - 1e-12)
        return int(top[rng.integers(len(top))]) if len(top) > 1 else int(top[0])

    def decide(self, state, features, rng):
        choice = self._choose(features, rng)
        option = self.options[choice]
        if self.primitive_mode:
            return Action(option.policy.action)
        return option

    def observe(self, t) -> None:
        if not self.learning:
            return
        phi, o, reward, duration, phi2, terminal = _as_smdp_fields(t)
        g = effective_discount(self.gamma, duration, terminal)
        s = int(phi.idx[0])
        self.visits[o, s] += 1
        count = self.visits[o, s]
        if count == 1:
            self.models_b[o, s] = reward
            col = self.models_f[o, :, s]
            col[:] = 0.0
        else:
            self.models_b[o, s] += (reward - self.models_b[o, s]) / count
            col = self.models_f[o, :, s]
            col *= 1.0 - 1.0 / count
        if g != 0.0:
            phi2.add_into(col, g / count)
        tdc_step_inplace(self.theta, self.w, phi, g, phi2, reward,
                         self.schedule.alpha(self.k), self.schedule.beta(self.k))
        self.k += 1


class SimPlanningTdcAgent(DecisionRule):
    """Single-vector SMDP TD control with generative one-step-option lookahead.

    For feature maps without per-cell model tables (the continuous domain):
    at each decision a sample of candidate options is simulated once from the
    current state against the environment's pure step function, scored by the
    sampled discounted reward plus gamma^l theta.phi(end), and the best sample
    is executed for real. Theta learns from real transitions only.
    """

    def __init__(self, options, env, dim: int, gamma: float, schedule, epsilon: float = 0.1,
                 candidates: int = 12, sim_steps: int = 60):
        self.options = list(options)
        self.env = env
        self.dim = dim
        self.gamma = gamma
        self.schedule = schedule
        self.epsilon = epsilon
        self.candidates = candidates
        self.sim_steps = sim_steps
        self.theta = np.zeros(dim)
        self.w = np.zeros(dim)
        self.k = 0
        self.learning = True

    def decide(self, state, features, rng):
        from .options import execute_option

        n = len(self.options)
        if rng.random() < self.epsilon:
            return self.options[int(rng.integers(n))]
        if self.candidates >= n:
            pool = self.options
        else:
            picks = rng.choice(n, size=self.candidates, replace=False)
            pool = [self.options[i] for i in picks]
        best = None
        best_v = -np.inf
        for option in pool:
            ex = execute_option(self.env, state, option, self.gamma, self.sim_steps, rng,
                                start_features=features)
            t = ex.transition
            g = effective_discount(self.gamma, t.duration_l, t.terminal)
            v = t.cumulative_reward + (g * t.end_features.dot(self.theta) if g != 0.0 else 0.0)
            if v > best_v:
                best, best_v = option, v
        # all-NaN scores (diverged theta) fall back; the update guard reports
        return best if best is not None else pool[0]

    def observe(self, t) -> None:
        if not self.learning:
            return
        phi, o, reward, duration, phi2, terminal = _as_smdp_fields(t)
        g = effective_discount(self.gamma, duration, terminal)
        tdc_step_inplace(self.theta, self.w, phi, g, phi2, reward,
                         self.schedule.alpha(self.k), self.schedule.beta(self.k))
        self.k += 1


class TabularQAgent(DecisionRule):
    """Tabular SMDP Q-learning (or one-step Q-learning in primitive mode).

    Requires one-hot features; the state key is the hot index.
    """

    def __init__(self, options, gamma: float, alpha: float = 0.1, behavior: str = "egreedy",
                 epsilon: float = 0.1, primitive_mode: bool = False):
        if behavior not in ("random", "egreedy"):
            raise ValueError(f"unknown behavior {behavior!r}")
        self.options = list(options)
        self.ids = [o.id for o in self.options]
        self.by_id = {o.id: o for o in self.options}
        self.gamma = gamma
        self.alpha = alpha
        self.behavior = behavior
        self.epsilon = epsilon
        self.primitive_mode = primitive_mode
        self.q = TabularQ()
        self.learning = True

    def decide(self, state, features, rng):
        if self.behavior == "random" or rng.random() < self.epsilon:
            o = self.ids[int(rng.integers(len(self.ids)))]
        else:
            s = int(features.idx[0])
            best_v = -np.inf
            o = self.ids[0]
            for cand in self.ids:
                v = self.q.value(s, cand)
                if v > best_v:
                    o, best_v = cand, v
        option = self.by_id[o]
        if self.primitive_mode:
            return Action(option.policy.action)
        return option

    def observe(self, t) -> None:
        if not self.learning:
            return
        phi, o, reward, duration, phi2, terminal = _as_smdp_fields(t)
        s = int(phi.idx[0])
        s2 = int(phi2.idx[0]) if phi2.nnz else -1
        if duration == 1 and self.primitive_mode:
            q_update(self.q, s, o, reward, s2, self.ids, self.gamma, self.alpha, terminal)
        else:
            smdp_q_update(self.q, s, o, reward, duration, s2, self.ids, self.gamma, self.alpha, terminal)


class LstdBehaviorAgent(DecisionRule):
    """Uniform-random behavior accumulating least-squares statistics of the
    behavior value function; call ``solve`` for the current estimate."""

    def __init__(self, options, dim: int, gamma: float):
        self.options = list(options)
        self.gamma = gamma
        self.acc = LstdAccumulator(dim)

    def decide(self, state, features, rng):
        return self.options[int(rng.integers(len(self.options)))]

    def observe(self, t) -> None:
        phi, o, reward, duration, phi2, terminal = _as_smdp_fields(t)
        self.acc.add(SmdpTransition(phi, o, reward, duration, phi2, terminal), self.gamma)

    def solve(self) -> np.ndarray:
        from .learn import smdp_lstd_solve

        return smdp_lstd_solve(self.acc)


class LoemBehaviorAgent(DecisionRule):
    """Uniform-random behavior learning an expectation model (F, b) of the
    behavior's SMDP dynamics and evaluating theta against it online."""

    def __init__(self, options, dim: int, gamma: float, schedule):
        self.options = list(options)
        self.gamma = gamma
        self.schedule = schedule
        self.model = LoemModel.zeros(dim)
        self.theta = np.zeros(dim)
        self.k = 0

    def decide(self, state, features, rng):
        return self.options[int(rng.integers(len(self.options)))]

    def observe(self, t) -> None:
        phi, o, reward, duration, phi2, terminal = _as_smdp_fields(t)
        smdp = SmdpTransition(phi, o, reward, duration, phi2, terminal)
        k = self.k
        loem_update_inplace(self.model, smdp, self.schedule.beta(k), self.gamma)
        self.theta = loem_evaluate_update(self.theta, phi, self.model, self.schedule.alpha(k))
        if not np.all(np.isfinite(self.theta)):
            raise DivergenceError("expectation-model evaluation diverged")
        self.k += 1
