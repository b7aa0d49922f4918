import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from envscale.errors import CyclicOrder, InfeasibleBudget
from envscale.strategy import (
    HparamLaws,
    HparamPoint,
    TaskValueState,
    TrajectoryGroup,
    ValueWeights,
    allocate_budget,
    allocation_utility,
    curriculum_order,
    fit_power_law,
    group_advantages,
    gspo_objective,
    kcg_select,
    oversampling_coefficient,
    predict_optimal_hparams,
    self_verification_trigger,
    sequence_importance_ratio,
    sliding_window_ppl,
    task_value,
)
from envscale.strategy.schedule import first_trigger

rewards_st = st.lists(st.floats(-100, 100), min_size=2, max_size=32)


# ---- GSPO


def test_importance_ratio():
    assert sequence_importance_ratio(-5.0, -5.0, 7) == 1.0
    assert sequence_importance_ratio(10 * math.log(2), 0.0, 10) == pytest.approx(2.0, abs=1e-12)
    assert sequence_importance_ratio(-3.0, -4.0, 5) == pytest.approx(sequence_importance_ratio(-6.0, -8.0, 10), abs=1e-12)
    with pytest.raises(ValueError):
        sequence_importance_ratio(float("nan"), 0.0, 1)
    with pytest.raises(ValueError):
        sequence_importance_ratio(0.0, 0.0, 0)


def test_advantage_examples():
    assert np.all(group_advantages([3.0] * 5) == 0)
    assert group_advantages([1.0, 0.0]).tolist() == [1.0, -1.0]
    with pytest.raises(ValueError):
        group_advantages([1.0])
    r = np.random.default_rng(0).random(16).tolist()
    mean = sum(r) / 16
    std = math.sqrt(sum((x - mean) ** 2 for x in r) / 16)
    assert np.allclose(group_advantages(r), [(x - mean) / std for x in r], atol=1e-12)


@given(rewards_st, st.floats(-50, 50), st.floats(0.01, 100))
def test_advantage_invariants(r, shift, scale):
    a = group_advantages(r)
    assert abs(a.sum()) <= 1e-9
    if np.std(r) > 1e-3:
        assert np.allclose(group_advantages([x + shift for x in r]), a, atol=1e-6)
        assert np.allclose(group_advantages([x * scale for x in r]), a, atol=1e-6)


def scalar_term(s, adv, eps):
    unclipped = s * adv
    c = 1 - eps if s < 1 - eps else (1 + eps if s > 1 + eps else s)
    return unclipped if unclipped < c * adv else c * adv


def test_clip_examples():
    # one trajectory with advantage +1 and ratio 2, one with advantage -1 and ratio 1
    g = TrajectoryGroup((1.0, 0.0), (0.0, 0.0), (math.log(2), 0.0), (1, 1))
    assert gspo_objective([g], 0.2) == pytest.approx((1.2 - 1.0) / 2, abs=1e-12)
    g = TrajectoryGroup((1.0, 0.0), (0.0, 0.0), (0.0, math.log(0.5)), (1, 1))
    assert gspo_objective([g], 0.2) == pytest.approx((1.0 - 0.8) / 2, abs=1e-12)
    assert scalar_term(0.5, -1.0, 0.2) == -0.8


def test_identity_policy_objective_is_zero():
    rng = np.random.default_rng(1)
    groups = [TrajectoryGroup(tuple(rng.random(8)), tuple(-rng.random(8) * 10), tuple(-rng.random(8) * 10), (5,) * 8)]
    same = [TrajectoryGroup(g.rewards, g.old_logp, g.old_logp, g.token_counts) for g in groups]
    assert abs(gspo_objective(same, 0.2)) <= 1e-9


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-1, 1), st.integers(1, 50)), min_size=2, max_size=8),
       st.floats(0.05, 0.95), st.integers(2, 4))
def test_gspo_matches_scalar_oracle(rows, eps, stretch):
    rewards = [r for r, _, _ in rows]
    adv = group_advantages(rewards)
    g = TrajectoryGroup(tuple(rewards), (0.0,) * len(rows), tuple(d * t for _, d, t in rows), tuple(t for *_, t in rows))
    expect = sum(scalar_term(math.exp(d), a, eps) for (_, d, _), a in zip(rows, adv)) / len(rows)
    assert gspo_objective([g], eps) == pytest.approx(expect, abs=1e-9)
    for (_, d, _), a in zip(rows, adv):
        assert abs(scalar_term(math.exp(d), a, eps)) <= max(math.exp(d), 1 + eps) * abs(a) + 1e-12
    # same per-token log ratio with longer trajectories
    longer = TrajectoryGroup(g.rewards, g.old_logp, tuple(x * stretch for x in g.new_logp),
                             tuple(t * stretch for t in g.token_counts))
    assert gspo_objective([longer], eps) == pytest.approx(gspo_objective([g], eps), abs=1e-9)


def test_gspo_bad_epsilon():
    with pytest.raises(ValueError):
        gspo_objective([], 1.0)


# ---- task value, budget, oversampling


def test_task_value_shape():
    w = ValueWeights(warmup_bonus=0.0)
    assert task_value(TaskValueState("t", 0.5, 10), w) == 1.0
    assert task_value(TaskValueState("t", 0.0, 10), w) == 0.0
    assert task_value(TaskValueState("t", 1.0, 10), w) == 0.0
    sweep = [task_value(TaskValueState("t", i / 20, 10), w) for i in range(21)]
    assert sweep == pytest.approx(sweep[::-1], abs=1e-12)
    assert all(a < b for a, b in zip(sweep[:10], sweep[1:11]))
    assert task_value(TaskValueState("t", 0.0, 0)) == ValueWeights().warmup_bonus


def test_task_state_update():
    s = TaskValueState("t").update([1, 0, 1, 1])
    assert (s.pass_rate, s.attempts) == (0.75, 4)
    with pytest.raises(ValueError):
        TaskValueState("t", 1.5)


def test_budget_examples():
    assert allocate_budget([2.0] * 4, 12, 1, 8) == [3, 3, 3, 3]
    assert allocate_budget([1.0, 0.0], 10, 1, 9) == [9, 1]
    with pytest.raises(InfeasibleBudget):
        allocate_budget([1.0, 1.0], 1, 1, 4)
    with pytest.raises(InfeasibleBudget):
        allocate_budget([1.0], 10, 1, 4)


def brute_force_best(values, total, lo, hi):
    best = -math.inf
    for alloc in itertools.product(range(lo, hi + 1), repeat=len(values)):
        if sum(alloc) == total:
            best = max(best, allocation_utility(values, alloc))
    return best


def random_budget_instance(rng):
    n = rng.randint(1, 5)
    lo = rng.randint(0, 2)
    hi = rng.randint(lo, 10)
    total = rng.randint(n * lo, min(10, n * hi)) if n * lo <= 10 else None
    values = [round(rng.uniform(0, 2), 3) for _ in range(n)]
    return values, total, lo, hi


def test_budget_matches_brute_force():
    rng = random.Random(0)
    checked = 0
    while checked < 300:
        values, total, lo, hi = random_budget_instance(rng)
        if total is None or total > len(values) * hi:
            continue
        got = allocate_budget(values, total, lo, hi)
        assert sum(got) == total and all(lo <= x <= hi for x in got)
        assert allocation_utility(values, got) == pytest.approx(brute_force_best(values, total, lo, hi), abs=1e-12)
        checked += 1


def test_oversampling():
    assert oversampling_coefficient(1.0, 4) == 1
    assert oversampling_coefficient(0.0, 4) == 4
    assert oversampling_coefficient(0.75, 4) == 1
    stairs = [oversampling_coefficient(i / 100, 6) for i in range(101)]
    assert all(a >= b for a, b in zip(stairs, stairs[1:]))
    assert set(stairs) == set(range(1, 7))


# ---- curriculum and trigger


def test_curriculum_examples():
    assert curriculum_order([(0.5, "a"), (0.1, "a"), (0.9, "a"), (0.1, "a")]) == [1, 3, 0, 2]
    tasks = [(0.1, "planning"), (0.9, "basic"), (0.0, "planning"), (0.5, "basic")]
    order = curriculum_order(tasks, [("basic", "planning")])
    assert order == [3, 1, 2, 0]
    with pytest.raises(CyclicOrder):
        curriculum_order(tasks, [("basic", "planning"), ("planning", "basic")])


def reachable(prec):
    closure = set(prec)
    changed = True
    while changed:
        changed = False
        for (a, b), (c, d) in itertools.product(list(closure), repeat=2):
            if b == c and (a, d) not in closure:
                closure.add((a, d))
                changed = True
    return closure


def check_schedule(tasks, prec, order):
    assert sorted(order) == list(range(len(tasks)))
    before = reachable(prec)
    for x, y in itertools.combinations(order, 2):
        tx, ty = tasks[x][1], tasks[y][1]
        assert (ty, tx) not in before
        if tx == ty:
            assert tasks[x][0] < tasks[y][0] or (tasks[x][0] == tasks[y][0] and x < y)


@pytest.mark.parametrize("seed", range(20))
def test_curriculum_random_instances(seed):
    rng = random.Random(seed)
    tiers = [f"t{i}" for i in range(5)]
    rng.shuffle(tiers)
    # edges only go forward in a hidden order, so the precedence is acyclic
    prec = [(tiers[i], tiers[j]) for i in range(5) for j in range(i + 1, 5) if rng.random() < 0.4]
    tasks = [(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]), rng.choice(tiers)) for _ in range(50)]
    check_schedule(tasks, prec, curriculum_order(tasks, prec))


def test_trigger_examples():
    assert not self_verification_trigger([0.1, 0.2, 0.3, 0.4, 0.5], 4, 1e-6)
    assert self_verification_trigger([0.3] * 6, 4, 1e-6)
    assert not self_verification_trigger([0.3], 4, 1e-6)
    with pytest.raises(ValueError):
        self_verification_trigger([1, 2], 1, 0.0)


def test_trigger_fires_at_first_flat_window():
    series = [0, 1, 2, 3, 4, 5, 5, 5, 5, 5, 5]
    # window slopes ending at indices 5..8: 1.0, 0.7, 0.3, 0.0
    assert first_trigger(series, 4, 0.05) == 8
    assert first_trigger(series, 4, 0.5) == 7


# ---- data selection


def brute_ppl(nlls, w):
    w = min(w, len(nlls))
    # correctly rounded window sums, so equality can be exact
    return max(math.exp(math.fsum(nlls[i:i + w]) / w) for i in range(len(nlls) - w + 1))


def test_ppl_examples():
    assert sliding_window_ppl([0.7] * 1000) == pytest.approx(math.exp(0.7), rel=1e-12)
    short = [0.1, 0.5, 0.9]
    assert sliding_window_ppl(short) == pytest.approx(math.exp(0.5), rel=1e-12)
    with pytest.raises(ValueError):
        sliding_window_ppl([])


def test_ppl_matches_brute_force():
    rng = np.random.default_rng(0)
    x = rng.exponential(2.0, 2000).tolist()
    assert sliding_window_ppl(x) == brute_ppl(x, 512)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 20), min_size=1, max_size=80), st.integers(1, 40))
def test_ppl_brute_force_property(x, w):
    assert sliding_window_ppl(x, w) == pytest.approx(brute_ppl(x, w), rel=1e-12)


def plain_kcg(X, k):
    chosen = [0]
    while len(chosen) < k:
        best, arg = -1.0, None
        for i in range(len(X)):
            if i in chosen:
                continue
            d = min(math.dist(X[i], X[j]) for j in chosen)
            if d > best:
                best, arg = d, i
        chosen.append(arg)
    return chosen


def stepwise_weighted(X, s, k):
    chosen = [max(range(len(s)), key=lambda i: (s[i], -i))]
    while len(chosen) < k:
        gains = {i: s[i] * min(math.dist(X[i], X[j]) for j in chosen) for i in range(len(X)) if i not in chosen}
        chosen.append(max(gains, key=lambda i: (gains[i], -i)))
    return chosen


def test_kcg_all_points():
    X = np.random.default_rng(0).random((7, 3))
    assert sorted(kcg_select(X, [1.0] * 7, 7)) == list(range(7))


def test_kcg_uniform_scores_is_plain_kcg():
    X = np.random.default_rng(1).random((20, 2)).tolist()
    for k in (1, 5, 12, 20):
        assert kcg_select(X, [1.0] * 20, k) == plain_kcg(X, k)


@pytest.mark.parametrize("seed", range(5))
def test_kcg_matches_stepwise_recomputation(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((15, 4)).tolist()
    s = (rng.random(15) * 5 + 0.5).tolist()
    assert kcg_select(X, s, 4) == stepwise_weighted(X, s, 4)


# ---- power laws


def test_power_law_exact():
    law = fit_power_law([(x, 2 * x ** 0.5) for x in (1, 4, 9, 100, 1e4)])
    assert law.coefficient == pytest.approx(2, abs=1e-9)
    assert law.exponent == pytest.approx(0.5, abs=1e-9)
    assert law.residual <= 1e-9
    two = fit_power_law([(3.0, 5.0), (30.0, 7.0)])
    assert two(3.0) == pytest.approx(5.0) and two(30.0) == pytest.approx(7.0) and two.residual <= 1e-12
    with pytest.raises(ValueError):
        fit_power_law([(1.0, 1.0), (0.0, 2.0)])
    with pytest.raises(ValueError):
        fit_power_law([(1.0, 1.0)])


def noisy_exponent(seed, a=3.0, b=-0.3, sigma=0.05):
    rng = np.random.default_rng(seed)
    x = np.logspace(15, 21, 50)
    y = a * x ** b * np.exp(sigma * rng.standard_normal(50))
    return fit_power_law(list(zip(x, y))).exponent


@pytest.mark.parametrize("seed", range(10))
def test_power_law_noisy_recovery(seed):
    assert abs(noisy_exponent(seed) + 0.3) <= 0.02


LAWS = {"loss": (10.0, -0.1), "bs": (3.0, 0.4), "lr": (0.02, -0.25)}


def law_points():
    pts = []
    for c in np.logspace(18, 22, 9):
        f = {k: a * c ** b for k, (a, b) in LAWS.items()}
        pts.append(HparamPoint(float(c), f["bs"], f["lr"], f["loss"]))
    return pts


def test_hparams_identity_at_fitted_point():
    pts = law_points()
    laws = HparamLaws.fit(pts)
    p = pts[4]
    pred = predict_optimal_hparams(p.loss, 0.0, laws)
    assert pred.batch_size == pytest.approx(p.batch_size, rel=1e-9)
    assert pred.learning_rate == pytest.approx(p.learning_rate, rel=1e-9)
    assert not pred.extrapolated


def test_hparams_closed_form():
    laws = HparamLaws.fit(law_points())
    loss, spent = 0.09, 3e20
    eq = (loss / 10.0) ** (1 / -0.1)
    pred = predict_optimal_hparams(loss, spent, laws)
    assert pred.equivalent_compute == pytest.approx(eq, rel=1e-9)
    assert pred.batch_size == pytest.approx(3.0 * (eq + spent) ** 0.4, rel=1e-9)
    assert pred.learning_rate == pytest.approx(0.02 * (eq + spent) ** -0.25, rel=1e-9)


def test_hparams_extrapolation_flag():
    laws = HparamLaws.fit(law_points())
    assert predict_optimal_hparams(0.001, 0.0, laws).extrapolated
