"""Acceptance suite: one test per criterion, printing a pass/fail line each.

Criterion 7 is split into its return half (passes) and its goal-completion
half; the latter is structurally unattainable at this desk scale and is left
faithfully red — see the decisions ledger for the blocking analysis. Criterion
9 is soft by its own definition (failure triggers investigation, not
rejection): the test runs the comparison at full scale, prints the verdict,
and records the measured totals without hard-failing the suite.
"""

import csv
import time

import numpy as np
import pytest
from numpy.random import default_rng
from scipy import stats

from optiontd.config import parse_experiment_config, parse_search_config
from optiontd.core import Action, PrimitiveTransition, SmdpTransition
from optiontd.envs import Gridworld, load_gridworld_map
from optiontd.experiments import run_experiment, run_search_suite
from optiontd.features import FeatureVector, RbfGrid, rbf_features, tabular_features, wrap_angle_deg
from optiontd.learn import (
    LearnerState,
    LstdAccumulator,
    PowerSchedule,
    fixed_point_oracle,
    loem_evaluate_update,
    mspbe,
    mspbe_gradient,
    smdp_lstd_solve,
    smdp_tdc_update,
    tdc_update,
    train_on_replay,
    validate_schedule,
)
from optiontd.options import BiasedRandomPolicy, LinearOption, discounted_accumulate, execute_option, loem_fit

from conftest import CHAIN_GAMMA, ChainEnv, chain_dataset, random_primitive_dataset

CHAIN_SCHEDULE = PowerSchedule(alpha0=0.5, beta0=1.0, p=1.0, q=2.0 / 3.0, scale=50.0)


def report(criterion, ok, detail):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="module")
def chain_fixture():
    data = chain_dataset(n_transitions=10_000, gamma=CHAIN_GAMMA, seed=0)
    theta_star = fixed_point_oracle(data, CHAIN_GAMMA)
    return data, theta_star


@pytest.fixture(scope="module")
def converged_tdc(chain_fixture):
    data, theta_star = chain_fixture
    rng = default_rng(42)
    learner = None
    crossed_at = None
    start = time.perf_counter()
    for chunk in range(40):  # 40 x 5000 = 2e5 updates
        learner = train_on_replay(data, CHAIN_GAMMA, CHAIN_SCHEDULE, 5_000, rng, learner=learner)
        err = float(np.max(np.abs(learner.theta - theta_star)))
        if crossed_at is None and err < 1e-2:
            crossed_at = (chunk + 1) * 5_000
    elapsed = time.perf_counter() - start
    return learner, crossed_at, err, elapsed


def test_criterion_01_fixed_point_convergence(chain_fixture, converged_tdc):
    _, theta_star = chain_fixture
    learner, crossed_at, final_err, elapsed = converged_tdc
    schedule_ok = validate_schedule(CHAIN_SCHEDULE).ok
    ok = schedule_ok and crossed_at is not None and crossed_at <= 200_000 and elapsed < 10.0
    report(1, ok, f"crossed 1e-2 at {crossed_at} updates, final err {final_err:.4f}, {elapsed:.1f}s")
    assert schedule_ok
    assert crossed_at is not None and crossed_at <= 200_000
    assert elapsed < 10.0


def test_criterion_02_gradient_identity():
    start = time.perf_counter()
    rng = default_rng(17)
    worst = 0.0
    for trial in range(5):
        data = random_primitive_dataset(dim=8, count=50, gamma=0.9, seed=trial)
        for _ in range(20):  # 100 random theta overall
            theta = rng.normal(scale=2.0, size=8)
            grad = mspbe_gradient(theta, data, 0.9)
            eps = 1e-5
            fd = np.empty(8)
            for i in range(8):
                up, down = theta.copy(), theta.copy()
                up[i] += eps
                down[i] -= eps
                fd[i] = (mspbe(up, data, 0.9) - mspbe(down, data, 0.9)) / (2 * eps)
            # the operation returns -(1/2) * grad MSPBE
            rel = float(np.max(np.abs(fd + 2.0 * grad)) / max(np.max(np.abs(fd)), 1e-12))
            worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 5.0
    report(2, ok, f"max relative error {worst:.2e} over 100 thetas, {elapsed:.1f}s")
    assert worst < 1e-5
    assert elapsed < 5.0


def test_criterion_03_lstd_tdc_loem_triangle(chain_fixture, converged_tdc):
    start = time.perf_counter()
    data, _ = chain_fixture
    learner, *_ = converged_tdc
    acc = LstdAccumulator(5)
    for t in data:
        acc.add(t, CHAIN_GAMMA)
    theta_lstd = smdp_lstd_solve(acc)
    model = loem_fit(data, CHAIN_GAMMA, dim=5)
    theta_loem = np.zeros(5)
    for _ in range(2_000):
        for i in range(5):
            theta_loem = loem_evaluate_update(theta_loem, tabular_features(i, 5), model, 0.5)
    pairs = {
        "lstd-tdc": float(np.max(np.abs(theta_lstd - learner.theta))),
        "lstd-loem": float(np.max(np.abs(theta_lstd - theta_loem))),
        "tdc-loem": float(np.max(np.abs(learner.theta - theta_loem))),
    }
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-2 for v in pairs.values()) and elapsed < 30.0
    report(3, ok, ", ".join(f"{k} {v:.4f}" for k, v in pairs.items()) + f", {elapsed:.1f}s")
    for name, gap in pairs.items():
        assert gap < 1e-2, name
    assert elapsed < 30.0


def test_criterion_04_duration_one_reduction():
    rng = default_rng(2)
    dim = 6
    sched = PowerSchedule(0.1, 0.5, 1.0, 2.0 / 3.0, 5000.0)
    la = LearnerState.zeros(dim)
    lb = LearnerState.zeros(dim)
    for _ in range(10_000):
        i, j = int(rng.integers(dim)), int(rng.integers(dim))
        r = float(rng.normal())
        terminal = bool(rng.random() < 0.05)
        prim = PrimitiveTransition(tabular_features(i, dim), Action(0), r, tabular_features(j, dim), terminal)
        smdp = SmdpTransition(tabular_features(i, dim), 0, r, 1, tabular_features(j, dim), terminal)
        la = tdc_update(la, prim, 0.9, sched)
        lb = smdp_tdc_update(lb, smdp, 0.9, sched)
    identical = np.array_equal(la.theta, lb.theta) and np.array_equal(la.w, lb.w)
    report(4, identical, "1e4 primitive transitions update bit-identically through both rules")
    assert identical


def test_criterion_05_option_executor_statistics():
    rows = ["." * 25 for _ in range(24)] + ["." * 24 + "G"]
    env = Gridworld(load_gridworld_map("\n".join(rows), noise=0.0))
    rng = default_rng(3)
    state = env.reset(rng)
    details = []
    ok = True
    for beta in (0.2, 0.5, 1.0):
        option = LinearOption(0, BiasedRandomPolicy(0, 0.5, 4), beta)
        durations = np.empty(100_000)
        for i in range(durations.size):
            ex = execute_option(env, state, option, 0.95, 2_000, rng)
            durations[i] = ex.transition.duration_l
        mean = float(durations.mean())
        within = abs(mean - 1.0 / beta) <= 0.02 / beta
        ok = ok and within
        details.append(f"beta={beta}: mean {mean:.4f} (target {1 / beta:.1f})")
        assert within, details[-1]
    # replay-consistent discounted rewards, exact
    chain = ChainEnv()
    option = LinearOption(0, BiasedRandomPolicy(1, 0.7, 2), 0.4)
    for _ in range(500):
        s = chain.reset(rng)
        ex = execute_option(chain, s, option, 0.9, 50, rng)
        assert ex.transition.cumulative_reward == discounted_accumulate(ex.rewards, 0.9)
    report(5, ok, "; ".join(details) + "; replay-exact rewards")


def test_criterion_06_feature_construction():
    grid = RbfGrid.canonical()
    assert grid.dim == 1204
    from optiontd.core import ContinuousState, FloorColor

    cx, cy, cpsi = grid.centers[42]
    at_center = rbf_features(ContinuousState(cx, cy, cpsi, FloorColor.GREEN), grid)
    center_value = dict(at_center.pairs())[4 + 42]
    assert center_value == pytest.approx(10.0)
    rng = default_rng(0)
    for _ in range(500):
        s = ContinuousState(rng.uniform(0, 10), rng.uniform(0, 10), float(rng.uniform(0, 360)), FloorColor.BLUE)
        v = rbf_features(s, grid)
        assert all(val >= 0.1 for i, val in v.pairs() if i >= 4)
    a = rbf_features(ContinuousState(5.0, 5.0, 359.0, FloorColor.BLUE), grid).to_dense()
    b = rbf_features(ContinuousState(5.0, 5.0, 1.0, FloorColor.BLUE), grid).to_dense()
    zero_slice = np.flatnonzero(grid.centers[:, 2] == 0.0) + 4
    wrap_equal = np.allclose(a[zero_slice], b[zero_slice], rtol=1e-12)
    assert wrap_equal
    report(6, True, f"dim 1204, center value {center_value:.1f}, threshold and angular wrap hold")


GRIDWORLD_BASE = {
    "episodes": 500,
    "max_steps": 1000,
    "seeds": 30,
    "gamma": 0.95,
    "options": {"n_policies": 40, "betas": [0.2, 0.4, 0.6, 0.8, 1.0], "seed": 12345},
    "schedule": {"alpha0": 1.0, "beta0": 1.0, "p": 1.0, "q": 0.6667, "scale": 1000},
    "behavior": {"kind": "egreedy", "epsilon": 0.1},
    "planning": {"reward_prior": -4.0},
}


def _final_means_and_goals(out_dir, seeds, window=50):
    finals, goals = [], []
    for seed in seeds:
        with open(out_dir / f"run_{seed}.csv") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = [[float(v) for v in row] for row in reader]
        finals.append(float(np.mean([r[1] for r in rows[-window:]])))
        goals.append(int(sum(r[3] for r in rows)))
    return np.array(finals), np.array(goals)


@pytest.fixture(scope="module")
def gridworld_comparison(tmp_path_factory):
    base = tmp_path_factory.mktemp("criterion7")
    start = time.perf_counter()
    outs = {}
    for algo in ("smdp-tdc", "tdc"):
        cfg, violations = parse_experiment_config({**GRIDWORLD_BASE, "algorithm": algo,
                                                   "out": str(base / algo)})
        assert not violations, violations
        outs[algo] = run_experiment(cfg)
    elapsed = time.perf_counter() - start
    smdp_final, smdp_goals = _final_means_and_goals(outs["smdp-tdc"], range(30))
    prim_final, prim_goals = _final_means_and_goals(outs["tdc"], range(30))
    return smdp_final, smdp_goals, prim_final, prim_goals, elapsed


def test_criterion_07i_gridworld_final_return(gridworld_comparison):
    smdp_final, _, prim_final, _, elapsed = gridworld_comparison
    test = stats.ttest_rel(smdp_final, prim_final, alternative="greater")
    ok = smdp_final.mean() > prim_final.mean() and test.pvalue < 0.05 and elapsed < 600.0
    report("7(i)", ok,
           f"final-50 return {smdp_final.mean():.1f} vs {prim_final.mean():.1f}, "
           f"paired p={test.pvalue:.2e}, {elapsed:.0f}s")
    assert smdp_final.mean() > prim_final.mean()
    assert test.pvalue < 0.05
    assert elapsed < 600.0


def test_criterion_07ii_gridworld_goal_completions(gridworld_comparison):
    # Faithfully asserted and expected to fail: on the 11x11 canonical map a
    # primitive epsilon-greedy learner saturates goal completions from the
    # first episodes, so no option agent can strictly exceed it. Blocking
    # analysis in the decisions ledger.
    _, smdp_goals, _, prim_goals, _ = gridworld_comparison
    strictly_more = int(smdp_goals.sum()) > int(prim_goals.sum())
    report("7(ii)", strictly_more,
           f"goal completions {int(smdp_goals.sum())} vs {int(prim_goals.sum())} "
           "(known-unattainable at this desk scale; see decisions ledger)")
    assert strictly_more, (
        f"SMDP completions {int(smdp_goals.sum())} did not exceed primitive "
        f"{int(prim_goals.sum())}: the primitive baseline saturates the small canonical map; "
        "see the decisions ledger entry 'criterion 7(ii)' for the blocking analysis"
    )


SUITE_CONFIG = {
    "mode": "search-suite",
    "seeds": 30,
    "episodes": 6,
    "max_decisions": 200,
    "max_steps": 1000,
    "value_learning": {"episodes": 50, "seed": 7},
    "rollout": {"n_rollouts": 100, "depth": 3},
    "options": {"n_policies": 40, "betas": [0.5, 1.0], "seed": 11},
    "start": "far",
}


def test_criterion_08_search_condition_ordering(tmp_path):
    cfg, violations = parse_search_config({**SUITE_CONFIG, "out": str(tmp_path / "suite")})
    assert not violations, violations
    start = time.perf_counter()
    out = run_search_suite(cfg)
    elapsed = time.perf_counter() - start
    per_seed = {tag: {} for tag in "abcdef"}
    with open(out / "conditions.csv") as fh:
        reader = csv.reader(fh)
        next(reader)
        for tag, episode, ret, goal, decisions, steps in reader:
            seed = int(episode) // cfg.episodes
            per_seed[tag].setdefault(seed, []).append(float(ret))
    means = {tag: np.array([np.mean(per_seed[tag][s]) for s in sorted(per_seed[tag])])
             for tag in "adef"}
    results = {}
    for hi, lo in (("e", "d"), ("f", "d"), ("f", "a")):
        test = stats.ttest_rel(means[hi], means[lo], alternative="greater")
        results[f"{hi}>{lo}"] = (float(np.mean(means[hi] - means[lo])), float(test.pvalue))
    ok = all(d > 0 and p < 0.05 for d, p in results.values()) and elapsed < 600.0
    report(8, ok, ", ".join(f"{k}: diff {d:.1f} p={p:.1e}" for k, (d, p) in results.items())
           + f", {elapsed:.0f}s")
    for key, (diff, p) in results.items():
        assert diff > 0, key
        assert p < 0.05, key
    assert elapsed < 600.0


ROOMS_BASE = {
    "environment": {"kind": "rooms"},
    "episodes": 100_000,
    "max_steps": 1000,
    "step_budget": 100_000,
    "seeds": 10,
    "gamma": 0.99,
    "options": {"n_policies": 40, "betas": [0.2, 0.4, 0.6, 0.8, 1.0], "seed": 12345},
    "schedule": {"alpha0": 0.001, "beta0": 0.005, "p": 1.0, "q": 0.6667, "scale": 50_000},
    "behavior": {"kind": "egreedy", "epsilon": 0.1},
    "planning": {"candidates": 12, "sim_steps": 60},
}


def test_criterion_09_rooms_goal_completions_soft(tmp_path):
    # Soft criterion: failure triggers investigation, not rejection (the true
    # room geometry is a stand-in). The comparison runs at full scale and the
    # verdict is printed; investigation notes live in the decisions ledger.
    start = time.perf_counter()
    totals = {}
    for algo in ("smdp-tdc", "tdc"):
        cfg, violations = parse_experiment_config({**ROOMS_BASE, "algorithm": algo,
                                                   "out": str(tmp_path / algo)})
        assert not violations, violations
        out = run_experiment(cfg)
        goals = 0
        for seed in range(10):
            with open(out / f"run_{seed}.csv") as fh:
                reader = csv.reader(fh)
                next(reader)
                goals += sum(int(float(row[3])) for row in reader)
        totals[algo] = goals
    elapsed = time.perf_counter() - start
    more = totals["smdp-tdc"] > totals["tdc"]
    verdict = "PASS" if more else "SOFT-FAIL (investigation in decisions ledger)"
    report(9, more, f"goal completions smdp {totals['smdp-tdc']} vs primitive {totals['tdc']} "
                    f"- {verdict}, {elapsed:.0f}s")
    assert totals["smdp-tdc"] > 0 and totals["tdc"] > 0  # both agents learned to reach goals
    assert elapsed < 1200.0


def test_criterion_10_schedule_grid_classification():
    grid = [0.4, 0.6, 2.0 / 3.0, 0.8, 1.0]
    mismatches = []
    for p in grid:
        for q in grid:
            got = validate_schedule(PowerSchedule(0.1, 0.5, p, q, 7.0)).ok
            expected = 0.5 < q < p <= 1.0
            if got != expected:
                mismatches.append((p, q))
    report(10, not mismatches, f"(p, q) grid classified exactly; {len(grid) ** 2} cells")
    assert not mismatches
