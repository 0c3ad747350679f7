"""Learning algorithms over sparse linear features.

The centerpiece is the two-timescale gradient-corrected TD update for SMDP
transitions, where an option of duration l bootstraps through gamma^l. Around
it: the primitive-step special case, least-squares policy evaluation,
expectation-model evaluation, tabular Q baselines, projected-Bellman-error
diagnostics with their closed-form fixed point, and step-size schedule
validation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .core import DivergenceError, PrimitiveTransition, SmdpTransition, effective_discount
from .features import FeatureVector

if TYPE_CHECKING:
    from .options import LoemModel


class SingularSystemError(ValueError):
    """A linear solve was refused; carries the offending condition estimate."""

    def __init__(self, message: str, condition: float = math.inf):
        super().__init__(message)
        self.condition = condition


# ---------------------------------------------------------------------------
# Step-size schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerSchedule:
    """Two-timescale power schedule alpha_k = a0/(1+k/scale)^p, beta_k likewise.

    With scale=1 this is the textbook a/(k+1)^p family; the scale stretches the
    decay without changing any of the summability exponents.
    """

    alpha0: float
    beta0: float
    p: float = 1.0
    q: float = 2.0 / 3.0
    scale: float = 1.0

    def alpha(self, k: int) -> float:
        return self.alpha0 / (1.0 + k / self.scale) ** self.p

    def beta(self, k: int) -> float:
        return self.beta0 / (1.0 + k / self.scale) ** self.q


@dataclass(frozen=True)
class ConstantSchedule:
    """Fixed step sizes; handy for single-update tests and tabular baselines."""

    alpha0: float
    beta0: float = 0.0

    def alpha(self, k: int) -> float:
        return self.alpha0

    def beta(self, k: int) -> float:
        return self.beta0


@dataclass
class ScheduleReport:
    ok: bool
    violations: list[str] = field(default_factory=list)


def validate_schedule(schedule: PowerSchedule) -> ScheduleReport:
    """Check the two-timescale convergence conditions for a power schedule.

    Requires divergent sums (p, q <= 1), square-summability (p, q > 1/2), and
    a vanishing step-size ratio (p > q). Returns a report listing every
    violated condition rather than failing on the first.
    """
    violations = []
    if schedule.alpha0 <= 0.0 or schedule.beta0 <= 0.0:
        violations.append("positivity: step-size constants must be positive")
    if schedule.p > 1.0:
        violations.append(f"alpha_sum: sum of alpha_k is finite for p={schedule.p} > 1")
    if schedule.q > 1.0:
        violations.append(f"beta_sum: sum of beta_k is finite for q={schedule.q} > 1")
    if schedule.p <= 0.5:
        violations.append(f"alpha_square_sum: sum of alpha_k^2 diverges for p={schedule.p} <= 1/2")
    if schedule.q <= 0.5:
        violations.append(f"beta_square_sum: sum of beta_k^2 diverges for q={schedule.q} <= 1/2")
    if schedule.p <= schedule.q:
        violations.append(f"ratio: alpha_k/beta_k does not vanish for p={schedule.p} <= q={schedule.q}")
    return ScheduleReport(ok=not violations, violations=violations)


# ---------------------------------------------------------------------------
# Gradient-corrected TD
# ---------------------------------------------------------------------------


@dataclass
class LearnerState:
    """Value parameters theta, correction parameters w, and the step counter."""

    theta: np.ndarray
    w: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "LearnerState":
        return cls(theta=np.zeros(dim), w=np.zeros(dim), k=0)


def tdc_step_inplace(theta: np.ndarray, w: np.ndarray, phi: FeatureVector, g: float,
                     phi2: FeatureVector, reward: float, alpha: float, beta: float,
                     bootstrap: float | None = None) -> float:
    """One gradient-corrected TD step, mutating theta and w. Returns delta.

    delta = R + g * v' - theta.phi with v' = theta.phi' unless an explicit
    bootstrap value is supplied (greedy control passes max over heads). The
    correction multiplies only the bootstrap term:
        theta += alpha * (delta * phi - g * (phi.w) * phi')
        w     += beta  * (delta - phi.w) * phi
    """
    v_next = phi2.dot(theta) if bootstrap is None else bootstrap
    delta = reward + g * v_next - phi.dot(theta)
    if not math.isfinite(delta):
        raise DivergenceError(f"non-finite TD error {delta}")
    phi_w = phi.dot(w)
    phi.add_into(theta, alpha * delta)
    if g != 0.0 and phi_w != 0.0:
        phi2.add_into(theta, -alpha * g * phi_w)
    phi.add_into(w, beta * (delta - phi_w))
    return delta


def smdp_tdc_update(learner: LearnerState, t: SmdpTransition, gamma: float, schedule) -> LearnerState:
    """Apply one SMDP gradient-corrected TD update; returns a new LearnerState.

    The cumulative (discounted) option reward plays the role of the one-step
    reward and the bootstrap discount is gamma^duration (0 when the transition
    ends the episode).
    """
    theta = learner.theta.copy()
    w = learner.w.copy()
    g = effective_discount(gamma, t.duration_l, t.terminal)
    tdc_step_inplace(theta, w, t.start_features, g, t.end_features, t.cumulative_reward,
                     schedule.alpha(learner.k), schedule.beta(learner.k))
    return LearnerState(theta=theta, w=w, k=learner.k + 1)


def tdc_update(learner: LearnerState, t: PrimitiveTransition, gamma: float, schedule) -> LearnerState:
    """Primitive-transition special case: identical to a duration-1 SMDP update."""
    smdp = SmdpTransition(t.state_features, t.action.id, t.reward, 1, t.next_features, t.terminal)
    return smdp_tdc_update(learner, smdp, gamma, schedule)


def train_on_replay(transitions, gamma: float, schedule, n_updates: int, rng,
                    learner: LearnerState | None = None) -> LearnerState:
    """Iterate SMDP TDC over uniform i.i.d. resamples of a fixed dataset.

    This is the i.i.d. sampling regime that two-timescale convergence
    analyses assume; the update sequence is identical to repeated
    :func:`smdp_tdc_update` calls.
    """
    transitions = list(transitions)
    if not transitions:
        raise ValueError("empty transition dataset")
    dim = transitions[0].start_features.dim
    if learner is None:
        learner = LearnerState.zeros(dim)
    theta = learner.theta.copy()
    w = learner.w.copy()
    k = learner.k
    n = len(transitions)
    for _ in range(n_updates):
        t = transitions[int(rng.integers(n))]
        g = effective_discount(gamma, t.duration_l, t.terminal)
        tdc_step_inplace(theta, w, t.start_features, g, t.end_features, t.cumulative_reward,
                         schedule.alpha(k), schedule.beta(k))
        k += 1
    return LearnerState(theta=theta, w=w, k=k)


# ---------------------------------------------------------------------------
# Least-squares policy evaluation
# ---------------------------------------------------------------------------


class LstdAccumulator:
    """Running sums A_hat = sum phi (phi - g phi')^T and b_hat = sum R phi."""

    def __init__(self, dim: int):
        self.dim = dim
        self.A_hat = np.zeros((dim, dim))
        self.b_hat = np.zeros(dim)
        self.count = 0

    def add(self, t: SmdpTransition, gamma: float) -> None:
        phi = t.start_features.to_dense()
        g = effective_discount(gamma, t.duration_l, t.terminal)
        target = phi - g * t.end_features.to_dense() if g != 0.0 else phi
        self.A_hat += np.outer(phi, target)
        self.b_hat += t.cumulative_reward * phi
        self.count += 1


def smdp_lstd_solve(acc: LstdAccumulator, cond_limit: float = 1e12, residual_tol: float = 1e-6) -> np.ndarray:
    """Solve A_hat theta = b_hat, guarding conditioning and the residual."""
    if acc.count == 0:
        raise ValueError("accumulator holds no samples")
    cond = float(np.linalg.cond(acc.A_hat))
    if not math.isfinite(cond) or cond > cond_limit:
        raise SingularSystemError(f"A_hat is singular or ill-conditioned (cond={cond:.3g})", cond)
    theta = np.linalg.solve(acc.A_hat, acc.b_hat)
    residual = float(np.max(np.abs(acc.b_hat - acc.A_hat @ theta)))
    if residual > residual_tol * max(1.0, float(np.max(np.abs(acc.b_hat)))):
        raise SingularSystemError(f"solve residual {residual:.3g} above tolerance", cond)
    return theta


# ---------------------------------------------------------------------------
# Dataset diagnostics: MSPBE, its gradient, and the fixed-point oracle
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DatasetMatrices:
    """Empirical moments of a transition dataset (means, not sums)."""

    A: np.ndarray  # E[phi (phi - g phi')^T]
    b: np.ndarray  # E[R phi]
    C: np.ndarray  # E[phi phi^T]
    G: np.ndarray  # E[g phi' phi^T]
    count: int


def dataset_matrices(transitions, gamma: float, dim: int | None = None) -> DatasetMatrices:
    transitions = list(transitions)
    if not transitions:
        raise ValueError("empty transition dataset")
    if dim is None:
        dim = transitions[0].start_features.dim
    A = np.zeros((dim, dim))
    b = np.zeros(dim)
    C = np.zeros((dim, dim))
    G = np.zeros((dim, dim))
    for t in transitions:
        phi = t.start_features.to_dense()
        g = effective_discount(gamma, t.duration_l, t.terminal)
        C += np.outer(phi, phi)
        if g != 0.0:
            phi2 = t.end_features.to_dense()
            A += np.outer(phi, phi - g * phi2)
            G += g * np.outer(phi2, phi)
        else:
            A += np.outer(phi, phi)
        b += t.cumulative_reward * phi
    n = len(transitions)
    return DatasetMatrices(A=A / n, b=b / n, C=C / n, G=G / n, count=n)


def fixed_point_oracle(transitions, gamma: float, dim: int | None = None) -> np.ndarray:
    """Direct solve of the TD fixed point A theta = b on a dataset (test oracle)."""
    m = dataset_matrices(transitions, gamma, dim)
    cond = float(np.linalg.cond(m.A))
    if not math.isfinite(cond) or cond > 1e12:
        raise SingularSystemError(f"empirical A is singular (cond={cond:.3g})", cond)
    return np.linalg.solve(m.A, m.b)


def _covariance_solve(C: np.ndarray, v: np.ndarray, ridge: float | None) -> np.ndarray:
    """Solve C w = v, adding ridge * I only when C is effectively singular."""
    cond = float(np.linalg.cond(C))
    if not math.isfinite(cond) or cond > 1e12:
        if ridge is None:
            raise SingularSystemError(f"feature covariance is singular (cond={cond:.3g})", cond)
        C = C + ridge * np.eye(C.shape[0])
    return np.linalg.solve(C, v)


def mspbe(theta: np.ndarray, transitions, gamma: float, ridge: float | None = 1e-8) -> float:
    """Mean-square projected Bellman error on a dataset's empirical moments:
    E[delta phi]^T E[phi phi^T]^{-1} E[delta phi]."""
    m = dataset_matrices(transitions, gamma, theta.shape[0])
    v = m.b - m.A @ theta
    w = _covariance_solve(m.C, v, ridge)
    return max(float(v @ w), 0.0)


def mspbe_gradient(theta: np.ndarray, transitions, gamma: float,
                   w_exact: np.ndarray | None = None, ridge: float | None = 1e-8) -> np.ndarray:
    """Half the negative MSPBE gradient: E[delta phi] - E[g phi' phi^T] w.

    This is the steepest-descent direction the two-timescale updates follow;
    the full gradient of :func:`mspbe` is -2 times this vector. ``w_exact``
    defaults to the dataset solve of E[phi phi^T] w = E[delta phi].
    """
    m = dataset_matrices(transitions, gamma, theta.shape[0])
    v = m.b - m.A @ theta
    if w_exact is None:
        w_exact = _covariance_solve(m.C, v, ridge)
    return v - m.G @ w_exact


# ---------------------------------------------------------------------------
# Expectation-model policy evaluation
# ---------------------------------------------------------------------------


def loem_evaluate_update(theta: np.ndarray, phi: FeatureVector, model: "LoemModel", alpha: float) -> np.ndarray:
    """One expectation-model evaluation update:
    theta += alpha * (b.phi + theta.(F phi) - theta.phi) * phi."""
    if phi.dim != model.dim:
        raise ValueError(f"feature dimension {phi.dim} does not match model dimension {model.dim}")
    if phi.nnz == 0:
        return theta.copy()
    f_phi = model.F[:, phi.idx] @ phi.val
    delta = phi.dot(model.b) + float(theta @ f_phi) - phi.dot(theta)
    if not math.isfinite(delta):
        raise DivergenceError(f"non-finite expectation-model TD error {delta}")
    out = theta.copy()
    phi.add_into(out, alpha * delta)
    return out


# ---------------------------------------------------------------------------
# Tabular Q baselines
# ---------------------------------------------------------------------------


@dataclass
class TabularQ:
    """Sparse table of (state key, option-or-action id) -> value, default 0."""

    table: dict = field(default_factory=dict)

    def value(self, state, o: int) -> float:
        return self.table.get((state, o), 0.0)

    def set(self, state, o: int, v: float) -> None:
        self.table[(state, o)] = v


def smdp_q_update(q: TabularQ, s, o: int, cumulative_reward: float, duration_l: int, s_next,
                  available_next, gamma: float, alpha: float, terminal: bool = False) -> TabularQ:
    """SMDP Q-learning: Q(s,o) += alpha [R + gamma^l max_o' Q(s',o') - Q(s,o)].

    Mutates and returns the table. The bootstrap discount is 0 on terminal.
    """
    if duration_l < 1:
        raise ValueError("option duration must be at least 1")
    g = effective_discount(gamma, duration_l, terminal)
    target = cumulative_reward
    if g != 0.0:
        target += g * max(q.value(s_next, o2) for o2 in available_next)
    old = q.value(s, o)
    q.set(s, o, old + alpha * (target - old))
    return q


def q_update(q: TabularQ, s, a: int, reward: float, s_next, actions, gamma: float,
             alpha: float, terminal: bool = False) -> TabularQ:
    """One-step Q-learning; the duration-1 special case of the SMDP update."""
    return smdp_q_update(q, s, a, reward, 1, s_next, actions, gamma, alpha, terminal)


def greedy_option(values, state_features: FeatureVector, available) -> int:
    """Id of the highest-valued available option; ties break to the lowest id.

    ``values`` is either a TabularQ (requires one-hot features) or a 2-D array
    whose row o holds option o's weight vector.
    """
    ids = sorted(available)
    if not ids:
        raise ValueError("no available options to choose from")
    if isinstance(values, TabularQ):
        if state_features.nnz != 1:
            raise ValueError("tabular greedy selection requires one-hot features")
        state = int(state_features.idx[0])
        score = lambda o: values.value(state, o)
    else:
        score = lambda o: state_features.dot(values[o])
    best_id = ids[0]
    best_v = score(best_id)
    for o in ids[1:]:
        v = score(o)
        if v > best_v:
            best_id, best_v = o, v
    return best_id


# ---------------------------------------------------------------------------
# Weight persistence
# ---------------------------------------------------------------------------


def save_weights(path, theta: np.ndarray, w: np.ndarray | None = None, *, gamma: float,
                 algorithm: str, seed, ids=None) -> None:
    """Persist learned parameters with a self-describing header."""
    header = {
        "dim": int(np.asarray(theta).shape[-1]),
        "gamma": float(gamma),
        "algorithm": str(algorithm),
        "seed": seed if seed is None else int(seed),
    }
    arrays = {"theta": np.asarray(theta), "header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    if w is not None:
        arrays["w"] = np.asarray(w)
    if ids is not None:
        arrays["ids"] = np.asarray(ids, dtype=np.int64)
    np.savez(path, **arrays)


@dataclass
class LoadedWeights:
    theta: np.ndarray
    w: np.ndarray | None
    ids: np.ndarray | None
    dim: int
    gamma: float
    algorithm: str
    seed: int | None


def load_weights(path) -> LoadedWeights:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        return LoadedWeights(
            theta=data["theta"],
            w=data["w"] if "w" in data else None,
            ids=data["ids"] if "ids" in data else None,
            dim=header["dim"],
            gamma=header["gamma"],
            algorithm=header["algorithm"],
            seed=header["seed"],
        )
