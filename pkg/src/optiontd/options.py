"""Linear options: biased random policies, the multi-timescale option
generator, the SMDP executor, hallway options for the gridworld, and the
linear option expectation model (LOEM).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Action, DivergenceError, SmdpTransition, discounted_accumulate, effective_discount
from .envs import GridworldSpec, hallway_cells, shortest_path_actions
from .features import FeatureVector


class BiasedRandomPolicy:
    """Picks the favored action with probability x, the rest uniformly."""

    __slots__ = ("favored_action", "bias", "action_count")
    state_dependent = False

    def __init__(self, favored_action: int, bias: float, action_count: int):
        if not 0.0 < bias < 1.0:
            raise ValueError(f"bias must lie in (0, 1), got {bias}")
        if action_count < 2:
            raise ValueError("biased policies need at least two actions")
        if not 0 <= favored_action < action_count:
            raise ValueError("favored action out of range")
        self.favored_action = favored_action
        self.bias = bias
        self.action_count = action_count

    def probs(self, features=None) -> np.ndarray:
        p = np.full(self.action_count, (1.0 - self.bias) / (self.action_count - 1))
        p[self.favored_action] = self.bias
        return p

    def sample(self, features, rng) -> int:
        if rng.random() < self.bias:
            return self.favored_action
        k = int(rng.integers(self.action_count - 1))
        return k + (k >= self.favored_action)

    def mode(self, features=None) -> int:
        """The action this policy suggests: its most likely draw."""
        if self.bias >= (1.0 - self.bias) / (self.action_count - 1):
            return self.favored_action
        return 0 if self.favored_action != 0 else 1


class FixedActionPolicy:
    """Always the same action; wraps a primitive action as an option policy."""

    __slots__ = ("action", "action_count")
    state_dependent = False

    def __init__(self, action: int, action_count: int):
        self.action = action
        self.action_count = action_count

    def probs(self, features=None) -> np.ndarray:
        p = np.zeros(self.action_count)
        p[self.action] = 1.0
        return p

    def sample(self, features, rng) -> int:
        return self.action

    def mode(self, features=None) -> int:
        return self.action


class TabularActionPolicy:
    """Deterministic per-cell action table, read through one-hot features."""

    __slots__ = ("actions", "action_count")
    state_dependent = True

    def __init__(self, actions: np.ndarray, action_count: int):
        self.actions = actions
        self.action_count = action_count

    def probs(self, features) -> np.ndarray:
        p = np.zeros(self.action_count)
        p[self.sample(features, None)] = 1.0
        return p

    def sample(self, features: FeatureVector, rng) -> int:
        if features.nnz != 1:
            raise ValueError("tabular policies require one-hot features")
        return int(self.actions[features.idx[0]])

    def mode(self, features) -> int:
        return self.sample(features, None)


@dataclass(frozen=True, eq=False)
class LinearOption:
    """A temporally extended action over feature states.

    ``beta`` is the per-step termination probability: a constant in (0, 1] or
    a callable of the current feature vector (used by hallway options, which
    terminate only at their doorway). ``initiation`` restricts where the
    option may start; None means available everywhere, which is how every
    generated set is configured.
    """

    id: int
    policy: object
    beta: float | Callable[[FeatureVector], float]
    initiation: Callable[[FeatureVector], bool] | None = None

    def __post_init__(self):
        if not callable(self.beta) and not 0.0 < self.beta <= 1.0:
            raise ValueError(f"constant beta must lie in (0, 1], got {self.beta}")

    def termination_prob(self, features) -> float:
        return self.beta(features) if callable(self.beta) else self.beta

    @property
    def needs_features(self) -> bool:
        return self.policy.state_dependent or callable(self.beta)


def generate_option_set(biases, betas, action_count: int, rng) -> list[LinearOption]:
    """One biased policy per bias value, crossed with every termination scale.

    Each policy's favored action is drawn uniformly; the resulting set has
    len(biases) * len(betas) options, all available at all states, ids assigned
    policy-major.
    """
    biases = list(biases)
    betas = list(betas)
    if not biases or not betas:
        raise ValueError("need at least one bias and one beta value")
    for b in betas:
        if not 0.0 < b <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {b}")
    options = []
    for x in biases:
        favored = int(rng.integers(action_count))
        policy = BiasedRandomPolicy(favored, float(x), action_count)
        for beta in betas:
            options.append(LinearOption(id=len(options), policy=policy, beta=float(beta)))
    return options


def random_option_set(n_policies: int, betas, action_count: int, seed) -> tuple[list[LinearOption], list[dict]]:
    """Seeded random option set plus the serializable recipe that rebuilds it."""
    rng = np.random.default_rng(seed)
    biases = rng.uniform(0.0, 1.0, size=n_policies)
    while np.any(biases == 0.0):  # open interval (0, 1)
        biases[biases == 0.0] = rng.uniform(0.0, 1.0, size=int(np.sum(biases == 0.0)))
    options = generate_option_set(biases, betas, action_count, rng)
    records = [
        {"id": o.id, "x": o.policy.bias, "favored_action": o.policy.favored_action, "beta": o.beta}
        for o in options
    ]
    return options, records


def options_from_records(records, action_count: int) -> list[LinearOption]:
    """Rebuild a biased-random option set from its recipe records."""
    out = []
    for rec in records:
        policy = BiasedRandomPolicy(int(rec["favored_action"]), float(rec["x"]), action_count)
        out.append(LinearOption(id=int(rec["id"]), policy=policy, beta=float(rec["beta"])))
    return out


def primitive_options(action_count: int, start_id: int = 0) -> list[LinearOption]:
    """Each primitive action as a one-step option (beta = 1)."""
    return [
        LinearOption(id=start_id + a, policy=FixedActionPolicy(a, action_count), beta=1.0)
        for a in range(action_count)
    ]


def hallway_options(spec: GridworldSpec, start_id: int = 0) -> list[LinearOption]:
    """One crafted option per doorway: walk the shortest path to it, stop there.

    The policy is the deterministic BFS-greedy walk toward the doorway cell;
    termination probability is 1 at that cell and 0 elsewhere.
    """
    out = []
    for k, cell in enumerate(hallway_cells(spec)):
        policy = TabularActionPolicy(shortest_path_actions(spec, cell), 4)

        def make_beta(target):
            def beta(features: FeatureVector) -> float:
                return 1.0 if features.nnz == 1 and int(features.idx[0]) == target else 0.0

            return beta

        out.append(LinearOption(id=start_id + k, policy=policy, beta=make_beta(cell)))
    return out


def sample_available_options(option_set, state_features: FeatureVector) -> list[int]:
    """Ids of options whose initiation set contains the state; never empty."""
    ids = [o.id for o in option_set if o.initiation is None or o.initiation(state_features)]
    if not ids:
        raise ValueError("no option available in this state")
    return ids


@dataclass
class OptionExecution:
    """Trace of one option execution: the SMDP transition plus raw bookkeeping
    (per-step rewards and the final environment state) that episode accounting
    and replay tests need."""

    transition: SmdpTransition
    rewards: list[float]
    end_state: object

    @property
    def undiscounted_reward(self) -> float:
        return sum(self.rewards)


def execute_option(env, state, option: LinearOption, gamma: float, max_steps: int, rng,
                   start_features: FeatureVector | None = None) -> OptionExecution:
    """Run an option to termination, accumulating its discounted reward.

    The option samples its policy, steps the environment, and after each step
    terminates with probability beta; environment termination or the step cap
    always ends it. Minimum duration is one step.
    """
    if max_steps < 1:
        raise ValueError("option execution needs at least one step of budget")
    phi0 = start_features if start_features is not None else env.feature_map(state)
    if option.initiation is not None and not option.initiation(phi0):
        raise ValueError(f"option {option.id} initiation set does not contain this state")
    needs = option.needs_features
    phi = phi0
    rewards: list[float] = []
    terminal = False
    end_phi = None
    for _ in range(max_steps):
        a = option.policy.sample(phi if needs else None, rng)
        reward, state, terminal = env.step(state, Action(a), rng)
        rewards.append(reward)
        if terminal:
            break
        if needs:
            phi = env.feature_map(state)
        beta = option.termination_prob(phi if needs else None)
        if beta >= 1.0 or (beta > 0.0 and rng.random() < beta):
            end_phi = phi if needs else None
            break
    if end_phi is None:
        end_phi = env.feature_map(state)
    cumulative = discounted_accumulate(rewards, gamma)
    transition = SmdpTransition(phi0, option.id, cumulative, len(rewards), end_phi, terminal)
    return OptionExecution(transition, rewards, state)


# ---------------------------------------------------------------------------
# Linear option expectation models
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LoemModel:
    """Expectation model (F, b): F phi predicts the expected discounted
    termination features, b . phi the expected discounted reward."""

    F: np.ndarray  # (n, n)
    b: np.ndarray  # (n,)

    @classmethod
    def zeros(cls, dim: int) -> "LoemModel":
        return cls(F=np.zeros((dim, dim)), b=np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.b.shape[0]


def loem_update_inplace(model: LoemModel, t: SmdpTransition, alpha: float, gamma: float) -> None:
    """Per-sample least-squares gradient step toward the expectation-model
    conditions: F += a (g phi' - F phi) phi^T, b += a (R - b.phi) phi."""
    phi, phi2 = t.start_features, t.end_features
    if phi.dim != model.dim:
        raise ValueError(f"feature dimension {phi.dim} does not match model dimension {model.dim}")
    g = effective_discount(gamma, t.duration_l, t.terminal)
    if phi.nnz == 0:
        return
    f_phi = model.F[:, phi.idx] @ phi.val
    target = g * phi2.to_dense() if g != 0.0 else np.zeros(model.dim)
    resid = target - f_phi
    if not np.all(np.isfinite(resid)):
        raise DivergenceError("non-finite expectation-model residual")
    model.F[:, phi.idx] += alpha * np.outer(resid, phi.val)
    r_resid = t.cumulative_reward - phi.dot(model.b)
    phi.add_into(model.b, alpha * r_resid)


def loem_update(model: LoemModel, t: SmdpTransition, alpha: float, gamma: float) -> LoemModel:
    """Functional form of :func:`loem_update_inplace`: returns a new model."""
    out = LoemModel(F=model.F.copy(), b=model.b.copy())
    loem_update_inplace(out, t, alpha, gamma)
    return out


def loem_fit(transitions, gamma: float, dim: int | None = None, ridge: float = 1e-10) -> LoemModel:
    """Exact least-squares fit of (F, b) to a transition dataset.

    Solves the batch regressions F = [sum g phi' phi^T][sum phi phi^T]^-1 and
    b = [sum phi phi^T]^-1 [sum R phi]; a tiny ridge keeps rank-deficient
    covariances (unvisited features) solvable.
    """
    transitions = list(transitions)
    if not transitions:
        raise ValueError("cannot fit an expectation model to zero transitions")
    if dim is None:
        dim = transitions[0].start_features.dim
    C = np.zeros((dim, dim))
    G = np.zeros((dim, dim))
    rb = np.zeros(dim)
    for t in transitions:
        phi = t.start_features.to_dense()
        g = effective_discount(gamma, t.duration_l, t.terminal)
        C += np.outer(phi, phi)
        if g != 0.0:
            G += g * np.outer(t.end_features.to_dense(), phi)
        rb += t.cumulative_reward * phi
    C += ridge * np.eye(dim)
    F = np.linalg.solve(C.T, G.T).T
    b = np.linalg.solve(C, rb)
    return LoemModel(F=F, b=b)
