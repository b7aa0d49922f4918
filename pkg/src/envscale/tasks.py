"""Tasks, user profiles and rubrics.

A task's plan is the concatenation of an environment's gold chains. Slot
values the agent must be told (entity ids of seeded rows, labels, new field
values) are task facts; some of them are withheld by the user profile and only
revealed when the agent asks.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace

from .database import DatabaseState, ToolCall, ToolResult, execute_tool

_VERBS = {"lookup": "look up", "create": "create", "update": "update", "cancel": "cancel"}


@dataclass(frozen=True)
class PlanStep:
    tool: str
    chain: int
    # slot name -> index of the earlier plan step whose output id feeds it
    sources: tuple[tuple[str, int], ...] = ()

    def to_dict(self) -> dict:
        return {"tool": self.tool, "chain": self.chain, "sources": [list(s) for s in self.sources]}

    @classmethod
    def from_dict(cls, d: dict) -> "PlanStep":
        return cls(d["tool"], d["chain"], tuple((s, int(i)) for s, i in d["sources"]))


def fact_key(step: int, slot: str) -> str:
    return f"{step}.{slot}"


@dataclass(frozen=True)
class UserProfile:
    verbosity: float = 0.5
    cooperativeness: float = 0.5
    withheld: frozenset = frozenset()

    def __post_init__(self):
        for name in ("verbosity", "cooperativeness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "withheld", frozenset(self.withheld))

    def to_dict(self) -> dict:
        return {"verbosity": self.verbosity, "cooperativeness": self.cooperativeness, "withheld": sorted(self.withheld)}

    @classmethod
    def from_dict(cls, d: dict) -> "UserProfile":
        return cls(d["verbosity"], d["cooperativeness"], frozenset(d["withheld"]))


@dataclass(frozen=True)
class Predicate:
    table: str
    selector: tuple[tuple[str, object], ...]
    column: str
    expected: object

    def holds(self, db: DatabaseState) -> bool:
        for row in db.tables.get(self.table, {}).values():
            if all(row.get(c) == v for c, v in self.selector) and row.get(self.column) == self.expected:
                return True
        return False

    def to_dict(self) -> dict:
        return {"table": self.table, "selector": [list(s) for s in self.selector], "column": self.column, "expected": self.expected}

    @classmethod
    def from_dict(cls, d: dict) -> "Predicate":
        return cls(d["table"], tuple((c, v) for c, v in d["selector"]), d["column"], d["expected"])


@dataclass(frozen=True)
class Rubric:
    predicates: tuple[Predicate, ...]
    forbidden_effects: tuple[tuple[str, str], ...] = ()
    acceptance_rule: str = "all predicates hold"

    def satisfied(self, db: DatabaseState) -> list[bool]:
        return [p.holds(db) for p in self.predicates]

    def forbidden_in(self, effects) -> list[tuple[str, str]]:
        bad = set(self.forbidden_effects)
        return [tuple(e) for e in effects if tuple(e) in bad]

    def accepts(self, db: DatabaseState, effects=()) -> bool:
        return all(self.satisfied(db)) and not self.forbidden_in(effects)

    def to_dict(self) -> dict:
        return {
            "predicates": [p.to_dict() for p in self.predicates],
            "forbidden_effects": [list(e) for e in self.forbidden_effects],
            "acceptance_rule": self.acceptance_rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rubric":
        return cls(
            tuple(Predicate.from_dict(p) for p in d["predicates"]),
            tuple(tuple(e) for e in d["forbidden_effects"]),
            d.get("acceptance_rule", "all predicates hold"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class Task:
    description: str
    user_profile: UserProfile
    rubric: Rubric
    plan: tuple[PlanStep, ...]
    facts: dict = field(default_factory=dict)
    # non-plan tools mentioned as preferences, to lure a careless agent
    distractors: tuple[str, ...] = ()
    # display order of plan steps in the description
    step_order: tuple[int, ...] = ()

    def __hash__(self):
        return hash(self.dumps())

    @property
    def explicit_facts(self) -> list[str]:
        return [k for k in self.facts if k not in self.user_profile.withheld]

    def needed_facts(self, step: int) -> list[str]:
        prefix = f"{step}."
        return [k for k in self.facts if k.startswith(prefix)]

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "user_profile": self.user_profile.to_dict(),
            "rubric": self.rubric.to_dict(),
            "plan": [s.to_dict() for s in self.plan],
            "facts": dict(sorted(self.facts.items())),
            "distractors": list(self.distractors),
            "step_order": list(self.step_order),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Task":
        return cls(
            d["description"],
            UserProfile.from_dict(d["user_profile"]),
            Rubric.from_dict(d["rubric"]),
            tuple(PlanStep.from_dict(s) for s in d["plan"]),
            dict(d["facts"]),
            tuple(d.get("distractors", ())),
            tuple(d.get("step_order", ())),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_plan(env) -> tuple[tuple[PlanStep, ...], dict]:
    """Flatten gold chains into plan steps and the facts the agent must be told."""
    graph = env.graph
    plan: list[PlanStep] = []
    facts: dict = {}
    for ci, chain in enumerate(env.gold_chains):
        start = len(plan)
        for pos, tool in enumerate(chain.tools):
            spec = graph.tools[tool]
            step = start + pos
            sources = []
            earlier = {t: start + i for i, t in enumerate(chain.tools[:pos])}
            bound = chain.bindings[pos] if chain.bindings else {}
            for s in spec.inputs:
                if s.source == "produced-by-tool" and s.producer in earlier:
                    sources.append((s.name, earlier[s.producer]))
                elif s.name in bound:
                    facts[fact_key(step, s.name)] = bound[s.name]
            plan.append(PlanStep(tool, ci, tuple(sources)))
    return tuple(plan), facts


def step_args(task: Task, step: int, outputs: dict[int, object], facts: dict | None = None) -> dict:
    """Arguments for plan ``step`` from earlier step outputs and known facts (all facts by default)."""
    facts = task.facts if facts is None else facts
    ps = task.plan[step]
    args = {slot: outputs[src] for slot, src in ps.sources if outputs.get(src) is not None}
    prefix = f"{step}."
    for k, v in facts.items():
        if k.startswith(prefix):
            args[k[len(prefix):]] = v
    return args


def replay_plan(
    db: DatabaseState, task: Task, graph, skip: int | None = None
) -> tuple[DatabaseState, list[ToolResult]]:
    """Execute the plan with full knowledge of the facts, optionally leaving out one step."""
    outputs: dict[int, object] = {}
    results = []
    for i, ps in enumerate(task.plan):
        if i == skip:
            continue
        res, db = execute_tool(db, ToolCall(ps.tool, step_args(task, i, outputs)), graph)
        results.append(res)
        if res.ok:
            outputs[i] = res.payload["id"]
    return db, results


def _effects(results) -> list[tuple[str, str]]:
    return [tuple(e) for r in results for e in r.effects]


def rubric_from_replay(before: DatabaseState, after: DatabaseState, results, schema) -> Rubric:
    """Predicates for every changed cell and every column of every inserted row.

    Inserted rows are selected by label so the rubric does not depend on the
    id a particular run happens to assign.
    """
    preds = []
    for table in sorted(after.tables):
        old = before.tables.get(table, {})
        for rid in sorted(after.tables[table]):
            row = after.tables[table][rid]
            if rid not in old:
                sel = (("label", row["label"]),)
                for col, _ in schema.tables[table]:
                    if col != "id":
                        preds.append(Predicate(table, sel, col, row[col]))
            else:
                for col, _ in schema.tables[table]:
                    if row[col] != old[rid][col]:
                        preds.append(Predicate(table, (("id", rid),), col, row[col]))
    inserted = {t for t, kind in _effects(results) if kind == "insert"}
    forbidden = [(t, "insert") for t in sorted(schema.tables) if t not in inserted]
    forbidden += [(t, "delete") for t in sorted(schema.tables)]
    return Rubric(tuple(preds), tuple(forbidden))


def render_description(task: Task, graph) -> str:
    """Template text for a task: one sentence per step, explicit facts inline."""
    order = task.step_order or tuple(range(len(task.plan)))
    lines = []
    for i in order:
        ps = task.plan[i]
        spec = graph.tools[ps.tool]
        known = []
        for k in task.needed_facts(i):
            if k not in task.user_profile.withheld:
                known.append(f"{k.split('.', 1)[1]}={task.facts[k]}")
        detail = f" ({', '.join(known)})" if known else ""
        lines.append(f"- {_VERBS[spec.family]} the {spec.entity_kind}"
                     f"{' ' + spec.column if spec.family == 'update' else ''}{detail}")
    text = "Please help me with the following:\n" + "\n".join(lines)
    for t in task.distractors:
        spec = graph.tools[t]
        text += f"\nI usually like to {_VERBS[spec.family]} the {spec.entity_kind} too."
    return text


def generate_task(env, rng: random.Random, withheld_fraction: tuple[float, float] = (0.0, 0.3)) -> Task:
    """Build a task whose rubric is read off the post-state of replaying the gold plan.

    The user profile is sampled: verbosity, cooperativeness, and a random
    fraction of facts the user withholds until asked.
    """
    if not env.gold_chains:
        raise ValueError("environment has no gold chain")
    graph = env.graph
    plan, facts = build_plan(env)
    draft = Task("", UserProfile(), Rubric(()), plan, facts)
    after, results = replay_plan(env.db, draft, graph)
    if not all(r.ok for r in results):
        raise RuntimeError("gold plan does not replay cleanly")
    rubric = rubric_from_replay(env.db, after, results, graph.schema)
    keys = sorted(facts)
    frac = rng.uniform(*withheld_fraction)
    withheld = frozenset(rng.sample(keys, int(round(frac * len(keys))))) if keys else frozenset()
    profile = UserProfile(round(rng.random(), 3), round(rng.random(), 3), withheld)
    task = replace(draft, user_profile=profile, rubric=rubric)
    return replace(task, description=render_description(task, graph))


def validate_rubric(task: Task, env, trials: int = 2) -> bool:
    """Gold replays pass in every trial, every one-step ablation fails, and no predicate is vacuous."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    graph = env.graph
    rubric = task.rubric
    for _ in range(trials):
        db, results = replay_plan(env.db.copy(), task, graph)
        if not rubric.accepts(db, _effects(results)):
            return False
    if any(p.holds(env.db) for p in rubric.predicates):
        return False
    for i in range(len(task.plan)):
        db, results = replay_plan(env.db.copy(), task, graph, skip=i)
        if rubric.accepts(db, _effects(results)):
            return False
    return True
