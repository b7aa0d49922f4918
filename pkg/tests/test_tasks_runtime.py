import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from envscale.context import ContextPolicy
from envscale.database import OK, ToolCall, execute_tool
from envscale.environment import EnvConfig, assemble_environment
from envscale.noise import NoiseProfile
from envscale.runtime import (
    EpisodeLimits,
    RewardReport,
    ScriptedSolver,
    Trajectory,
    evaluate_trajectory,
    reports_to_csv,
    run_episode,
)
from envscale.tasks import Predicate, Rubric, Task, generate_task, replay_plan, step_args, validate_rubric

from conftest import build_envs, make_graph


@pytest.fixture(scope="module")
def short_env():
    g = make_graph()
    rng = random.Random(2)
    env = assemble_environment(g, EnvConfig(tau=1.0, chain_length=(3, 3), expansion_budget=None), rng)
    return env, generate_task(env, rng, (0.0, 0.0))


def gold_events(task, env, repeat=1):
    """A trajectory that issues every plan call ``repeat`` times in a row."""
    events, outputs, db = [], {}, env.db
    for i, ps in enumerate(task.plan):
        call = ToolCall(ps.tool, step_args(task, i, outputs))
        for _ in range(repeat):
            res, db = execute_tool(db, call, env.graph)
            events.append({"type": "tool-call", "tool": call.tool, "args": call.args, "tokens": 1, "duration": 1.0})
            events.append({"type": "tool-result", "tool": call.tool, "status": res.status, "payload": res.payload,
                           "tokens": 1, "duration": 0.1})
            assert res.status == OK
        outputs[i] = res.payload["id"]
    return Trajectory(events)


# ---- tasks and rubrics


def test_created_rows_become_label_predicates(env_pool):
    for g, env, task in env_pool:
        after, results = replay_plan(env.db, task, g)
        for r in results:
            for table, kind in r.effects:
                if kind == "insert":
                    label = r.payload["row"]["label"]
                    assert any(p.table == table and p.selector == (("label", label),) for p in task.rubric.predicates)


def test_task_generation_deterministic(env_pool):
    _, env, _ = env_pool[0]
    assert generate_task(env, random.Random(5)).dumps() == generate_task(env, random.Random(5)).dumps()


def test_description_mentions_only_known_entities(env_pool):
    for g, env, task in env_pool:
        for k in task.explicit_facts:
            step, slot = k.split(".", 1)
            if g.tools[task.plan[int(step)].tool].slot(slot).value_kind == "entity-id":
                assert f"{slot}={task.facts[k]}" in task.description


def test_hundred_tasks_validate():
    for g, env, task in build_envs(100, seed=3):
        assert validate_rubric(task, env)


def test_rubric_with_untouched_row_predicate_fails(env_pool):
    g, env, task = env_pool[1]
    table = next(t for t, rows in env.db.tables.items() if rows)
    rid = min(env.db.tables[table])
    bogus = Predicate(table, (("id", rid),), "status", "never-set")
    broken = Task(task.description, task.user_profile, Rubric(task.rubric.predicates + (bogus,), task.rubric.forbidden_effects),
                  task.plan, task.facts)
    assert not validate_rubric(broken, env)


def test_ablated_plans_always_rejected():
    for g, env, task in build_envs(50, seed=4):
        for i in range(len(task.plan)):
            db, results = replay_plan(env.db.copy(), task, g, skip=i)
            effects = [e for r in results for e in r.effects]
            assert not task.rubric.accepts(db, effects)


def test_validate_rubric_needs_two_trials(env_pool):
    _, env, task = env_pool[0]
    with pytest.raises(ValueError):
        validate_rubric(task, env, trials=1)


def test_task_round_trip(env_pool):
    _, _, task = env_pool[2]
    assert Task.from_dict(json.loads(task.dumps())).dumps() == task.dumps()


# ---- scoring


def test_gold_trajectory_scores_one(env_pool):
    for g, env, task in env_pool[:10]:
        assert evaluate_trajectory(gold_events(task, env), env, task.rubric).reward == 1


def test_empty_trajectory_scores_zero(env_pool):
    _, env, task = env_pool[0]
    rep = evaluate_trajectory(Trajectory(), env, task.rubric)
    assert rep.reward == 0 and rep.turns == 0


def test_redundant_calls_do_not_change_outcome(env_pool):
    for g, env, task in env_pool[:10]:
        rep = evaluate_trajectory(gold_events(task, env, repeat=2), env, task.rubric)
        assert rep.reward == 1 and rep.predicates_satisfied == rep.predicates_total


def test_reward_csv_header_when_empty():
    text = reports_to_csv([], RewardReport.CSV_FIELDS)
    assert text == ",".join(RewardReport.CSV_FIELDS) + "\n"


# ---- episodes


def _run(env, task, skill, seed, noise=None, limits=EpisodeLimits(max_turns=64), **kw):
    # summaries only: a discard reset would replay finished steps and change the turn count
    return run_episode(env, task, ScriptedSolver(skill, **kw), noise or NoiseProfile(), ContextPolicy("summary"), limits,
                       random.Random(seed))


def test_perfect_solver_turn_count(env_pool):
    for g, env, _ in env_pool[:10]:
        task = generate_task(env, random.Random(0), (0.0, 0.0))
        traj, rep = _run(env, task, 1.0, 0, limits=EpisodeLimits(max_turns=500))
        assert rep.reward == 1 and rep.termination == "completed"
        assert traj.turns == len(task.plan) + 1


def test_zero_skill_hits_turn_limit(short_env):
    env, task = short_env
    traj, rep = _run(env, task, 0.0, 0)
    assert rep.reward == 0 and rep.termination == "turn-limit" and traj.turns == 64


def test_episode_determinism(short_env):
    env, task = short_env
    a = _run(env, task, 0.6, 7, NoiseProfile.at_level(3), noise_handling=0.5)
    b = _run(env, task, 0.6, 7, NoiseProfile.at_level(3), noise_handling=0.5)
    assert a[0].to_jsonl() == b[0].to_jsonl() and a[1] == b[1]


def test_trajectory_invariants_and_jsonl(short_env):
    env, task = short_env
    traj, _ = _run(env, task, 0.7, 3, NoiseProfile.at_level(4), noise_handling=0.5)
    prev = None
    for e in traj.events:
        assert e["tokens"] >= 0
        if e["type"] == "tool-result":
            assert prev["type"] == "tool-call" and prev["tool"] == e["tool"]
        prev = e
    times = [e["t"] for e in traj.events]
    assert times == sorted(times)
    assert Trajectory.from_jsonl(traj.to_jsonl()).to_jsonl() == traj.to_jsonl()
    noisy = [e for e in traj.events if e.get("noise")]
    assert noisy


def _z(p1, p2, n):
    """One-sided two-proportion z statistic for p2 > p1."""
    pool = (p1 + p2) / 2
    se = math.sqrt(max(pool * (1 - pool) * 2 / n, 1e-12))
    return (p2 - p1) / se


def test_pass_rate_monotone_in_skill(short_env):
    env, task = short_env
    n = 2000
    rates = {s: sum(_run(env, task, s, ep)[1].reward for ep in range(n)) / n for s in (0.0, 0.25, 0.5, 0.75, 1.0)}
    assert rates[0.0] < rates[0.5] < rates[1.0]
    assert rates[0.25] < rates[0.5] < rates[0.75]
    for lo, hi in [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)]:
        assert _z(rates[hi], rates[lo], n) < 2.326


@settings(max_examples=40, deadline=None)
@given(skill=st.floats(0, 1), seed=st.integers(0, 10_000), level=st.integers(0, 4))
def test_reward_is_replay_of_trajectory(short_env, skill, seed, level):
    env, task = short_env
    traj, rep = _run(env, task, skill, seed, NoiseProfile.at_level(level), noise_handling=0.5)
    again = evaluate_trajectory(traj, env, task.rubric)
    assert again.reward == rep.reward and again.predicates_satisfied == rep.predicates_satisfied


def test_solver_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        ScriptedSolver(skill=1.2)
    with pytest.raises(ValueError):
        EpisodeLimits(max_turns=0)
