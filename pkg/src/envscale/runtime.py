"""Episode runner: a scripted agent and a template user acting on an environment.

The agent stands in for a learned policy. Each turn it either calls the next
plan tool (with probability ``skill``) or some other tool, asks the user for a
withheld fact, or declares the task finished. Rewards are binary and computed
only from the final database state and the effects the episode triggered.
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass, field

from . import context as ctxm
from .context import ContextPolicy, ContextState, Digest
from .database import OK, TRANSIENT_FAILURE, ToolCall, execute_tool
from .noise import (
    DISTRACTOR_PREFERENCE,
    LATENCY_SPIKE,
    LATENCY_SPIKE_TIME,
    REORDERING,
    NoiseProfile,
    NoisyExecutor,
)
from .tasks import Task, step_args


@dataclass(frozen=True)
class ScriptedSolver:
    skill: float = 1.0
    noise_handling: float = 1.0
    clarification_rate: float = 1.0
    retry_budget: int = 2

    def __post_init__(self):
        for name in ("skill", "noise_handling", "clarification_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")


@dataclass(frozen=True)
class EpisodeLimits:
    max_turns: int = 64
    # hard cap on live context tokens; exceeding it ends the episode
    max_tokens: int = 128_000

    def __post_init__(self):
        if self.max_turns <= 0 or self.max_tokens <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class CostModel:
    """Synthetic token and time costs of trajectory events."""

    prompt_base: int = 64
    call_base: int = 12
    call_per_arg: int = 3
    # extra tokens the agent spends thinking on every turn
    reasoning: int = 0
    result_base: int = 24
    result_per_field: int = 4
    ask: int = 16
    reply_base: int = 12
    reply_verbose: int = 24
    reply_per_fact: int = 8
    final: int = 16
    agent_time: float = 1.0
    tool_time: float = 0.2
    user_time: float = 0.5

    def prompt(self, task: Task) -> int:
        return self.prompt_base + len(task.description) // 4

    def call(self, call: ToolCall) -> int:
        return self.call_base + self.call_per_arg * len(call.args) + self.reasoning

    def result(self, payload: dict) -> int:
        return self.result_base + self.result_per_field * len(payload.get("row", {}))


@dataclass
class Trajectory:
    events: list = field(default_factory=list)
    policy_version: int = 0

    @property
    def token_counts(self) -> list[int]:
        return [e["tokens"] for e in self.events]

    @property
    def wall_times(self) -> list[float]:
        return [e["duration"] for e in self.events]

    @property
    def turns(self) -> int:
        return sum(1 for e in self.events if e["type"] in ("tool-call", "agent-message"))

    @property
    def tokens(self) -> int:
        return sum(self.token_counts)

    def tool_pairs(self):
        """(call event, result event) pairs in order."""
        pending = None
        for e in self.events:
            if e["type"] == "tool-call":
                pending = e
            elif e["type"] == "tool-result":
                yield pending, e
                pending = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, text: str, policy_version: int = 0) -> "Trajectory":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()], policy_version)


@dataclass
class RewardReport:
    reward: int
    predicates_satisfied: int
    predicates_total: int
    forbidden_triggered: list
    turns: int
    tokens: int
    termination: str = ""

    CSV_FIELDS = ("reward", "predicates_satisfied", "predicates_total", "forbidden_triggered", "turns", "tokens", "termination")

    def to_row(self) -> dict:
        return {
            "reward": self.reward,
            "predicates_satisfied": self.predicates_satisfied,
            "predicates_total": self.predicates_total,
            "forbidden_triggered": ";".join(f"{t}:{k}" for t, k in self.forbidden_triggered),
            "turns": self.turns,
            "tokens": self.tokens,
            "termination": self.termination,
        }


def reports_to_csv(rows: list[dict], fields: tuple[str, ...]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def evaluate_trajectory(traj: Trajectory, env, rubric, graph=None) -> RewardReport:
    """Replay the trajectory's applied tool calls on a fresh copy of the environment db and score it."""
    graph = graph or env.graph
    db = env.db.copy()
    effects = []
    for call_ev, res_ev in traj.tool_pairs():
        if res_ev["status"] == TRANSIENT_FAILURE:
            continue
        res, db = execute_tool(db, ToolCall(call_ev["tool"], call_ev["args"]), graph)
        effects.extend(tuple(e) for e in res.effects)
    sat = rubric.satisfied(db)
    bad = rubric.forbidden_in(effects)
    reward = int(all(sat) and not bad)
    return RewardReport(reward, sum(sat), len(sat), bad, traj.turns, traj.tokens)


def _random_value(slot, rng: random.Random, known_ids: dict):
    if slot.value_kind == "entity-id":
        ids = known_ids.get(slot.entity_kind)
        return rng.choice(ids) if ids else 1
    if slot.value_kind == "enum":
        return rng.choice(slot.values)
    if slot.value_kind == "scalar":
        return rng.randint(1, 999)
    return f"guess-{rng.randrange(16 ** 4):04x}"


class _Memory:
    """What the agent currently remembers. Wiped by a discard-all reset, kept by summaries."""

    def __init__(self, task: Task):
        self.task = task
        self.facts = {k: v for k, v in task.facts.items() if k not in task.user_profile.withheld}
        self.outputs: dict[int, object] = {}
        self.done: set[int] = set()
        self.retry: tuple[int, ToolCall] | None = None
        self.retries = 0
        self.planned = False

    def next_step(self) -> int | None:
        for i in range(len(self.task.plan)):
            if i not in self.done:
                return i
        return None

    def known_ids(self, graph) -> dict:
        out: dict = {}
        for i, v in self.outputs.items():
            if v is not None:
                out.setdefault(graph.tools[self.task.plan[i].tool].entity_kind, []).append(v)
        return out


def run_episode(
    env,
    task: Task,
    solver: ScriptedSolver,
    noise: NoiseProfile | None,
    ctx_policy: ContextPolicy,
    limits: EpisodeLimits,
    rng: random.Random,
    *,
    graph=None,
    costs: CostModel | None = None,
    adversary: str | None = None,
    policy_version: int = 0,
) -> tuple[Trajectory, RewardReport]:
    """Run one episode until completion, the turn limit or a context overflow.

    The database is never mutated in place; each episode works on its own
    immutable state. Context actions (summaries, resets) do not consume
    randomness, so runs that differ only in context policy make identical
    decisions until one of them hits a limit.
    """
    graph = graph or env.graph
    costs = costs or CostModel()
    noise = noise or NoiseProfile()
    executor = NoisyExecutor(noise, rng, adversary)
    traj = Trajectory(policy_version=policy_version)
    db = env.db
    base = costs.prompt(task)
    ctx = ContextState.fresh(base)
    live: list[dict] = []
    digest: Digest | None = None
    mem = _Memory(task)
    now = 0.0
    plan_tools = {s.tool for s in task.plan}
    env_tools = sorted(env.subgraph.included) if env.subgraph else sorted(graph.tools)
    distract = [t for t in env_tools if t not in plan_tools]
    # stated preferences the agent may act on even though the task does not ask for them
    lures = []
    if DISTRACTOR_PREFERENCE in noise.enabled_kinds:
        lures = [t for t in task.distractors if rng.random() >= solver.skill]
    withheld = set(task.user_profile.withheld)

    def emit(ev: dict, turn: bool = False) -> None:
        nonlocal now, ctx
        ev["seq"] = len(traj.events)
        ev["t"] = round(now, 6)
        now += ev["duration"]
        traj.events.append(ev)
        live.append(ev)
        ctx = ctx.add(ev["tokens"], turn)

    termination = "turn-limit"
    turns = 0
    while turns < limits.max_turns:
        step = mem.next_step()
        call = None
        if step is None:
            emit({"type": "agent-message", "kind": "final", "tokens": costs.final, "duration": costs.agent_time}, True)
            termination = "completed"
            break
        if REORDERING in noise.enabled_kinds and task.step_order and not mem.planned:
            # the steps arrive shuffled; spend one turn restoring dependency order
            mem.planned = True
            emit({"type": "agent-message", "kind": "plan", "tokens": costs.ask + costs.reasoning,
                  "duration": costs.agent_time}, True)
        elif mem.retry is not None:
            step, call = mem.retry
        elif lures:
            spec = graph.tools[lures.pop(0)]
            args = {s.name: _random_value(s, rng, mem.known_ids(graph)) for s in spec.inputs if s.source != "constant"}
            call = ToolCall(spec.id, args)
            step = None
        elif rng.random() < solver.skill:
            missing = [k for k in task.needed_facts(step) if k not in mem.facts]
            if missing and rng.random() < solver.clarification_rate:
                emit({"type": "agent-message", "kind": "ask", "facts": missing,
                      "tokens": costs.ask + costs.reasoning, "duration": costs.agent_time}, True)
                revealed = {k: task.facts[k] for k in missing}
                for k in sorted(withheld - set(missing)):
                    if k not in mem.facts and rng.random() < task.user_profile.cooperativeness:
                        revealed[k] = task.facts[k]
                mem.facts.update(revealed)
                tok = costs.reply_base + int(costs.reply_verbose * task.user_profile.verbosity) + costs.reply_per_fact * len(revealed)
                emit({"type": "user-message", "facts": dict(sorted(revealed.items())), "tokens": tok,
                      "duration": costs.user_time})
            else:
                args = step_args(task, step, mem.outputs, mem.facts)
                spec = graph.tools[task.plan[step].tool]
                for k in missing:
                    # no clarification: the agent guesses the value
                    args[k.split(".", 1)[1]] = _random_value(spec.slot(k.split(".", 1)[1]), rng, mem.known_ids(graph))
                call = ToolCall(spec.id, args)
        else:
            if distract:
                spec = graph.tools[rng.choice(distract)]
                known = mem.known_ids(graph)
                args = {s.name: _random_value(s, rng, known) for s in spec.inputs if s.source != "constant"}
                call = ToolCall(spec.id, args)
                step = None
            else:
                call = ToolCall(task.plan[step].tool, {})
                step = None

        if call is not None:
            emit({"type": "tool-call", "tool": call.tool, "args": dict(sorted(call.args.items())), "step": step,
                  "tokens": costs.call(call), "duration": costs.agent_time}, True)
            res, db = executor(db, call, graph)
            dur = costs.tool_time + (LATENCY_SPIKE_TIME if res.noise == LATENCY_SPIKE else 0.0)
            ev = {"type": "tool-result", "tool": call.tool, "step": step, "status": res.status,
                  "payload": res.payload, "tokens": costs.result(res.payload), "duration": dur}
            if res.noise:
                ev["noise"] = res.noise
            emit(ev)
            if step is not None:
                _observe(mem, solver, rng, step, call, res)
        turns += 1

        if ctx.tokens > limits.max_tokens:
            termination = "token-limit"
            break
        action = ctxm.apply_policy(ctx, ctx_policy)
        if action == ctxm.SUMMARIZE:
            before = ctx.tokens
            digest, live = ctxm.summarize(live, ctx_policy.keep_last_k, digest)
            tokens = base + sum(e["tokens"] for e in live) + digest.tokens
            ctx = ContextState(tokens, ctx.turns, ctx.resets, ctx.schedule_index, base)
            traj.events.append({"type": "context", "action": action, "seq": len(traj.events), "t": round(now, 6),
                                "tokens": 0, "duration": 0.0, "before": before, "after": ctx.tokens})
        elif action == ctxm.DISCARD:
            before = ctx.tokens
            live, digest = [], None
            ctx = ctx.after_discard()
            mem = _Memory(task)
            mem.planned = True
            traj.events.append({"type": "context", "action": action, "seq": len(traj.events), "t": round(now, 6),
                                "tokens": 0, "duration": 0.0, "before": before, "after": ctx.tokens})
    report = evaluate_trajectory(traj, env, task.rubric, graph)
    report.termination = termination
    return traj, report


def _observe(mem: _Memory, solver: ScriptedSolver, rng: random.Random, step: int, call: ToolCall, res) -> None:
    payload = res.payload
    suspicious = (
        res.status == TRANSIENT_FAILURE
        or (res.status == OK and payload.get("id") is None)
        or (res.status == OK and payload.get("id") != payload.get("row", {}).get("id"))
    )
    if suspicious and mem.retries < solver.retry_budget and rng.random() < solver.noise_handling:
        mem.retry = (step, call)
        mem.retries += 1
        return
    mem.retry = None
    mem.retries = 0
    mem.done.add(step)
    if res.status == OK:
        mem.outputs[step] = payload.get("id")


__all__ = [
    "CostModel",
    "EpisodeLimits",
    "RewardReport",
    "ScriptedSolver",
    "Trajectory",
    "evaluate_trajectory",
    "reports_to_csv",
    "run_episode",
]
