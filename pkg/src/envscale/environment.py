"""Environment construction by verifiability-preserving expansion.

An environment starts from a seed tool chain that is made executable by
seeding database rows. It then grows breadth-first over the dependency graph,
admitting a tool only once every tool it depends on is already part of the
environment. Further seed chains are added while :func:`spawn_decision` says
so, and a fallback keeps adding chains until the environment reaches its
minimum size.
"""

from __future__ import annotations

import json
import math
import random
from collections.abc import Iterable
from dataclasses import dataclass, field

from .database import DatabaseState, ToolCall, ToolResult, execute_tool
from .domain import ToolGraph
from .errors import GraphTooSmall, NoFeasibleChain, UnsatisfiableSlot


@dataclass
class ToolChain:
    """An ordered tool sequence.

    ``bindings`` is filled by :func:`instantiate_chain_db`. It holds, per
    position, a concrete value for every slot that is not fed by an earlier
    tool of the same chain.
    """

    tools: list[str]
    domain: str
    bindings: list[dict] | None = None

    def __len__(self) -> int:
        return len(self.tools)

    def to_dict(self) -> dict:
        d = {"tools": list(self.tools), "domain": self.domain}
        if self.bindings is not None:
            d["bindings"] = [dict(sorted(b.items())) for b in self.bindings]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ToolChain":
        return cls(list(d["tools"]), d["domain"], d.get("bindings"))

    def without(self, position: int) -> "ToolChain":
        """The chain with one tool removed (used for rubric ablation)."""
        b = None if self.bindings is None else self.bindings[:position] + self.bindings[position + 1:]
        return ToolChain(self.tools[:position] + self.tools[position + 1:], self.domain, b)


@dataclass
class EnvSubgraph:
    included: set[str]
    remaining: set[str]
    seed_chains: list[ToolChain] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "included": sorted(self.included),
            "remaining": sorted(self.remaining),
            "seed_chains": [c.to_dict() for c in self.seed_chains],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSubgraph":
        return cls(set(d["included"]), set(d["remaining"]), [ToolChain.from_dict(c) for c in d["seed_chains"]])


@dataclass
class Environment:
    subgraph: EnvSubgraph
    db: DatabaseState
    gold_chains: list[ToolChain]
    complexity: float
    provenance: list[str]
    graph: ToolGraph | None = field(default=None, repr=False, compare=False)

    @property
    def domain(self) -> str:
        return self.gold_chains[0].domain if self.gold_chains else (self.graph.domain if self.graph else "")

    @property
    def tools(self) -> list[str]:
        return sorted(self.subgraph.included, key=lambda t: (self.graph.tools[t].order, t)) if self.graph else sorted(self.subgraph.included)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "subgraph": self.subgraph.to_dict(),
            "db": self.db.to_dict(),
            "gold_chains": [c.to_dict() for c in self.gold_chains],
            "complexity": self.complexity,
            "provenance": list(self.provenance),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict, graph: ToolGraph | None = None) -> "Environment":
        return cls(
            EnvSubgraph.from_dict(d["subgraph"]),
            DatabaseState.from_dict(d["db"]),
            [ToolChain.from_dict(c) for c in d["gold_chains"]],
            float(d["complexity"]),
            list(d["provenance"]),
            graph,
        )

    @classmethod
    def loads(cls, text: str, graph: ToolGraph | None = None) -> "Environment":
        return cls.from_dict(json.loads(text), graph)


def chain_args(graph: ToolGraph, chain: ToolChain, position: int, outputs: dict[str, object]) -> dict:
    """Arguments for ``chain.tools[position]`` given outputs of earlier tools (keyed by tool id)."""
    spec = graph.tools[chain.tools[position]]
    bound = chain.bindings[position] if chain.bindings else {}
    args = {}
    for s in spec.inputs:
        if s.source == "produced-by-tool" and s.producer in outputs:
            args[s.name] = outputs[s.producer]
        elif s.name in bound:
            args[s.name] = bound[s.name]
    return args


def run_chain(db: DatabaseState, chain: ToolChain, graph: ToolGraph) -> tuple[bool, DatabaseState, list[ToolResult]]:
    """Replay a bound chain. Produced-by-tool slots take the id output by the producer earlier in the chain.

    Execution continues past failures (they leave the state unchanged), so the
    final state of a broken chain can still be scored.
    """
    outputs: dict[str, object] = {}
    results = []
    for i, tool in enumerate(chain.tools):
        res, db = execute_tool(db, ToolCall(tool, chain_args(graph, chain, i, outputs)), graph)
        results.append(res)
        if res.ok:
            outputs[tool] = res.payload["id"]
    return all(r.ok for r in results), db, results


def _weighted_pick(items: list[str], usage: dict[str, int], rng: random.Random) -> str:
    weights = [1.0 / (1 + usage.get(t, 0)) for t in items]
    return rng.choices(items, weights=weights)[0]


def feasible_tools(graph: ToolGraph, pool: Iterable[str], chain: Iterable[str], available: Iterable[str] = ()) -> list[str]:
    """Tools of ``pool`` not in ``chain`` whose producers all sit in ``chain`` or ``available``."""
    have = set(chain) | set(available)
    in_chain = set(chain)
    out = [t for t in pool if t not in in_chain and graph.tools[t].producers() <= have]
    return sorted(out, key=lambda t: (graph.tools[t].order, t))


def sample_seed_chain(
    graph: ToolGraph,
    usage_counts: dict[str, int],
    length_range: tuple[int, int],
    rng: random.Random,
    *,
    within: Iterable[str] | None = None,
    available: Iterable[str] = (),
    max_tries: int = 50,
) -> ToolChain:
    """Sample a dependency-feasible chain, down-weighting frequently used tools by ``1/(1+n)``.

    After the first tool, candidates that consume an output of the chain are
    preferred so the result is a connected chain rather than a bag of roots.
    Producers listed in ``available`` count as already satisfied.
    """
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ValueError(f"bad length range {length_range}")
    pool = sorted(set(within) if within is not None else graph.nodes)
    if not pool:
        raise NoFeasibleChain("empty graph")
    available = set(available)
    for _ in range(max_tries):
        target = rng.randint(lo, hi)
        chain: list[str] = []
        while len(chain) < target:
            cands = feasible_tools(graph, pool, chain, available)
            if chain:
                in_chain = set(chain)
                ext = [t for t in cands if graph.tools[t].producers() & in_chain]
                if ext:
                    cands = ext
            if not cands:
                break
            chain.append(_weighted_pick(cands, usage_counts, rng))
        if len(chain) >= lo:
            return ToolChain(chain, graph.domain)
    raise NoFeasibleChain(f"no chain of length >= {lo} in {len(pool)} tools")


def _user_value(slot, rng: random.Random, avoid=None):
    if slot.value_kind == "enum":
        opts = [v for v in slot.values if v != avoid]
        if not opts:
            raise UnsatisfiableSlot(f"slot {slot.name} has no admissible enum value")
        return rng.choice(opts)
    if slot.value_kind == "scalar":
        while True:
            v = rng.randint(1, 999)
            if v != avoid:
                return v
    while True:
        v = f"{slot.name}-{rng.randrange(16 ** 6):06x}"
        if v != avoid:
            return v


def seed_row(db: DatabaseState, graph: ToolGraph, kind: str) -> int:
    """Append a default row for ``kind`` to ``db`` (mutating builder copy) and return its id."""
    table = graph.schema.entity_kinds[kind]
    row = graph.schema.default_row(table)
    row["label"] = f"{kind}-{db.counters.get(table, 0) + 1}"
    return db.insert(table, row)


def instantiate_chain_db(
    chain: ToolChain, graph: ToolGraph, rng: random.Random, base: DatabaseState | None = None
) -> tuple[DatabaseState, ToolChain]:
    """Seed the rows a chain needs and bind its user-facing slot values.

    Returns the seeded state (the chain's own effects are not applied) and the
    chain with ``bindings`` filled in. Rows are only appended, so an existing
    ``base`` is never modified. Update values are chosen to differ from the
    value they replace, so every step has a visible effect.
    """
    db = base.copy() if base is not None else DatabaseState.empty(graph.schema)
    bindings: list[dict] = [{} for _ in chain.tools]
    seen: set[str] = set()
    # rows first, so ids are not shifted by rows the chain creates itself
    for i, tool in enumerate(chain.tools):
        spec = graph.tools[tool]
        for s in spec.inputs:
            if s.value_kind != "entity-id":
                if s.value_kind == "enum" and s.source != "constant" and not s.values:
                    raise UnsatisfiableSlot(f"{tool}.{s.name}: empty enum domain")
                continue
            if s.source == "produced-by-tool" and s.producer in seen:
                continue
            bindings[i][s.name] = seed_row(db, graph, s.entity_kind)
        seen.add(tool)

    sim = db
    outputs: dict[str, object] = {}
    for i, tool in enumerate(chain.tools):
        spec = graph.tools[tool]
        partial = ToolChain(chain.tools, chain.domain, bindings)
        args = chain_args(graph, partial, i, outputs)
        for s in spec.inputs:
            if s.source != "user-provided" or s.value_kind == "entity-id":
                continue
            avoid = None
            if spec.family == "update" and s.name == spec.value_slot:
                row = sim.get(graph.schema.entity_kinds[spec.entity_kind], args[spec.target])
                avoid = row[spec.column]
            if spec.family == "create" and s.column == "label":
                table = graph.schema.entity_kinds[spec.entity_kind]
                labels = {r["label"] for r in sim.tables[table].values()}
                v = _user_value(s, rng)
                while v in labels:
                    v = _user_value(s, rng)
            else:
                v = _user_value(s, rng, avoid)
            bindings[i][s.name] = v
            args[s.name] = v
        if spec.family == "update" and spec.slot(spec.value_slot).value_kind == "entity-id":
            row = sim.get(graph.schema.entity_kinds[spec.entity_kind], args[spec.target])
            if row[spec.column] == args[spec.value_slot]:
                raise UnsatisfiableSlot(f"{tool}: update would not change {spec.column}")
        res, sim = execute_tool(sim, ToolCall(tool, args), graph)
        if not res.ok:
            raise RuntimeError(f"instantiation left {tool} non-executable: {res.status} {res.payload}")
        outputs[tool] = res.payload["id"]
    return db, ToolChain(list(chain.tools), chain.domain, bindings)


def expand_chain(
    seed_chain: ToolChain,
    graph: ToolGraph,
    db: DatabaseState,
    budget: int | None,
    included: Iterable[str] = (),
) -> tuple[EnvSubgraph, DatabaseState]:
    """Breadth-first growth from the seed chain.

    A successor is admitted only when every tool it depends on is already
    included. Rows are appended for the entity slots it takes from the user.
    ``budget=None`` means unbounded. Returns the subgraph and the augmented
    state.
    """
    inc = set(included) | set(seed_chain.tools)
    db = db.copy()
    added = 0
    order = lambda t: (graph.tools[t].order, t)  # noqa: E731
    succ: dict[str, list[str]] = {}
    for a, b in graph.edges:
        succ.setdefault(a, []).append(b)
    layer = list(dict.fromkeys(seed_chain.tools))
    while layer and (budget is None or added < budget):
        nxt = []
        for u in layer:
            for v in sorted(succ.get(u, ()), key=order):
                if v in inc or not graph.tools[v].producers() <= inc:
                    continue
                inc.add(v)
                nxt.append(v)
                added += 1
                for s in graph.tools[v].inputs:
                    if s.value_kind == "entity-id" and s.source == "user-provided":
                        seed_row(db, graph, s.entity_kind)
                if budget is not None and added >= budget:
                    break
            if budget is not None and added >= budget:
                break
        layer = nxt
    return EnvSubgraph(inc, graph.nodes - inc, [seed_chain]), db


def complexity(sub: EnvSubgraph, graph: ToolGraph, lam: float = 10.0) -> float:
    """Environment complexity: node count plus ``lam`` times the internal edge density."""
    v = sub.included
    n = len(v)
    if n <= 1:
        return float(n)
    e = sum(1 for a, b in graph.edges if a in v and b in v)
    return n + lam * (2.0 * e) / (n * (n - 1))


def chain_discovery_difficulty(
    remaining: Iterable[str],
    graph: ToolGraph,
    db: DatabaseState,
    solver,
    attempt_cap: int,
    rng: random.Random,
    min_len: int = 1,
) -> int:
    """Number of randomized solver attempts until a valid chain is found in ``remaining``.

    Each attempt proposes ``min_len`` distinct tools. With probability
    ``solver.skill`` a step picks among feasible tools, otherwise it picks
    uniformly. Producers outside ``remaining`` count as satisfied when their
    output kind has rows in ``db``. Returns ``attempt_cap + 1`` when no
    attempt succeeds.
    """
    if attempt_cap < 1:
        raise ValueError("attempt_cap must be >= 1")
    pool = sorted(set(remaining), key=lambda t: (graph.tools[t].order, t))
    if len(pool) < min_len:
        return attempt_cap + 1
    pool_set = set(pool)
    available = set()
    for t, spec in graph.tools.items():
        if t not in pool_set and any(db.tables.get(graph.schema.entity_kinds[k]) for k in spec.output_entities):
            available.add(t)
    for attempt in range(1, attempt_cap + 1):
        chain: list[str] = []
        valid = True
        for _ in range(min_len):
            cands = [t for t in pool if t not in chain]
            feas = feasible_tools(graph, cands, chain, available)
            if rng.random() < solver.skill:
                if not feas:
                    valid = False
                    break
                pick = rng.choice(feas)
            else:
                pick = rng.choice(cands)
                if pick not in feas:
                    valid = False
            chain.append(pick)
            if not valid:
                break
        if valid:
            return attempt
    return attempt_cap + 1


@dataclass
class SpawnWeights:
    w_complexity: float = 0.2
    w_difficulty: float = 0.4
    w_remaining: float = 0.4
    c0: float = 30.0
    d0: float = 40.0

    def validate(self) -> None:
        if min(self.w_complexity, self.w_difficulty, self.w_remaining) < 0:
            raise ValueError("spawn weights must be nonnegative")
        if self.c0 <= 0 or self.d0 <= 0:
            raise ValueError("c0 and d0 must be positive")


def spawn_decision(c: float, g: int, d: int, weights: SpawnWeights, tau: float) -> tuple[float, bool]:
    """Probability of seeding another chain and the thresholded decision ``p > tau``.

    ``p`` falls with environment complexity ``c`` and discovery difficulty
    ``g`` and rises with the number of unused tools ``d``.
    """
    weights.validate()
    if c < 0 or g < 0 or d < 0:
        raise ValueError("c, g and d must be nonnegative")
    p = (
        weights.w_complexity * math.exp(-c / weights.c0)
        + weights.w_difficulty / (1.0 + g)
        + weights.w_remaining * min(d / weights.d0, 1.0)
    )
    p = min(1.0, max(0.0, p))
    return p, p > tau


@dataclass
class EnvConfig:
    tau: float = 0.6
    weights: SpawnWeights = field(default_factory=SpawnWeights)
    lam: float = 10.0
    min_tools: int = 20
    chain_length: tuple[int, int] = (3, 6)
    expansion_budget: int | None = 8
    attempt_cap: int = 20
    solver_skill: float = 0.9
    max_seeds: int = 8
    strict_min_tools: bool = False

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "weights": vars(self.weights).copy(),
            "lam": self.lam,
            "min_tools": self.min_tools,
            "chain_length": list(self.chain_length),
            "expansion_budget": self.expansion_budget,
            "attempt_cap": self.attempt_cap,
            "solver_skill": self.solver_skill,
            "max_seeds": self.max_seeds,
            "strict_min_tools": self.strict_min_tools,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = SpawnWeights(**d["weights"])
        if "chain_length" in d:
            d["chain_length"] = tuple(d["chain_length"])
        return cls(**d)


@dataclass
class _Prober:
    skill: float


def assemble_environment(
    graph: ToolGraph,
    config: EnvConfig | None = None,
    rng: random.Random | None = None,
    usage_counts: dict[str, int] | None = None,
) -> Environment:
    """Build one environment: seed, expand, decide whether to spawn again, then apply the size fallback.

    ``usage_counts`` is updated in place so successive environments drawn from
    one graph favour less used tools.
    """
    config = config or EnvConfig()
    rng = rng or random.Random(0)
    usage = usage_counts if usage_counts is not None else {}
    n = len(graph)
    if config.strict_min_tools and n < config.min_tools:
        raise GraphTooSmall(f"graph has {n} tools, need {config.min_tools}")
    log: list[str] = []
    db = DatabaseState.empty(graph.schema)
    included: set[str] = set()
    gold: list[ToolChain] = []
    prober = _Prober(config.solver_skill)

    def add_chain(chain: ToolChain, tag: str) -> None:
        nonlocal db, included
        db, bound = instantiate_chain_db(chain, graph, rng, base=db)
        for t in bound.tools:
            usage[t] = usage.get(t, 0) + 1
        gold.append(bound)
        sub, db = expand_chain(bound, graph, db, config.expansion_budget, included)
        new = sorted(sub.included - included - set(bound.tools))
        included = sub.included
        log.append(f"{tag} chain={','.join(bound.tools)}")
        log.append(f"expand added={','.join(new)} size={len(included)}")

    chain = sample_seed_chain(graph, usage, config.chain_length, rng)
    add_chain(chain, "seed 1")
    while True:
        remaining = graph.nodes - included
        sub = EnvSubgraph(included, remaining, gold)
        c = complexity(sub, graph, config.lam)
        g = chain_discovery_difficulty(remaining, graph, db, prober, config.attempt_cap, rng, config.chain_length[0])
        p, spawn = spawn_decision(c, g, len(remaining), config.weights, config.tau)
        log.append(f"decide c={c:.4f} g={g} d={len(remaining)} p={p:.4f} tau={config.tau} spawn={spawn}")
        if not spawn or len(gold) >= config.max_seeds:
            break
        try:
            chain = sample_seed_chain(
                graph, usage, config.chain_length, rng, within=remaining, available=included
            )
        except NoFeasibleChain:
            log.append("spawn aborted: no feasible chain in remaining tools")
            break
        add_chain(chain, f"seed {len(gold) + 1}")

    floor = min(config.min_tools, n)
    while len(included) < floor:
        remaining = graph.nodes - included
        try:
            chain = sample_seed_chain(graph, usage, config.chain_length, rng, within=remaining, available=included)
        except NoFeasibleChain:
            # any unused tool whose producers are all included is a chain of length 1
            chain = sample_seed_chain(
                graph, usage, (1, config.chain_length[1]), rng, within=remaining, available=included
            )
        add_chain(chain, "fallback")

    sub = EnvSubgraph(set(included), graph.nodes - included, list(gold))
    env = Environment(sub, db, gold, complexity(sub, graph, config.lam), log, graph)
    return env


def check_environment(env: Environment, graph: ToolGraph, min_tools: int = 20) -> list[str]:
    """Invariant violations of an environment (empty when sound)."""
    problems = []
    sub = env.subgraph
    if sub.included & sub.remaining:
        problems.append("included and remaining overlap")
    if sub.included | sub.remaining != graph.nodes:
        problems.append("included and remaining do not cover the graph")
    if len(sub.included) < min(min_tools, len(graph)):
        problems.append(f"only {len(sub.included)} tools")
    for i, ch in enumerate(env.gold_chains):
        if not set(ch.tools) <= sub.included:
            problems.append(f"gold chain {i} leaves the environment")
        ok, _, results = run_chain(env.db, ch, graph)
        if not ok:
            problems.append(f"gold chain {i} fails: {[r.status for r in results]}")
    return problems
