"""Procedural domain generation: schemas, tool sets and the tool dependency graph.

A domain is a set of entity kinds, one table each. Every kind gets a family of
tools (lookup, create, cancel and several single-column updates). Entity-id
input slots are either provided by the user or produced by an earlier tool;
the latter are the edges of the dependency graph. Tools are placed on a fixed
total order and producers always precede consumers, so the graph is a DAG.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Any

from .database import DatabaseState
from .errors import InfeasibleConfig

SCHEMA_VERSION = 1

VALUE_KINDS = ("entity-id", "scalar", "enum", "text")
SOURCES = ("user-provided", "produced-by-tool", "constant")
FAMILIES = ("lookup", "create", "update", "cancel")
_FAMILY_RANK = {"lookup": 0, "create": 1, "update": 2, "cancel": 3}

# Domain styles: varying ``DomainGenConfig.style`` reaches each of these.
DOMAIN_STYLES: dict[str, list[str]] = {
    "airline": ["passenger", "flight", "booking", "seat", "payment", "baggage", "voucher", "gate", "crew", "lounge"],
    "retail": ["customer", "product", "order", "shipment", "return", "coupon", "review", "warehouse", "cart", "invoice"],
    "hotel": ["guest", "room", "reservation", "folio", "housekeeping", "amenity", "event", "parking", "minibar", "spa"],
    "banking": ["client", "account", "card", "transfer", "loan", "statement", "dispute", "beneficiary", "alert", "branch"],
    "telecom": ["subscriber", "plan", "line", "device", "bill", "ticket", "roaming", "addon", "port", "outage"],
    "healthcare": ["patient", "provider", "appointment", "prescription", "claim", "referral", "lab", "vaccine", "ward", "insurer"],
    "restaurant": ["diner", "table", "booking", "menu", "order", "tab", "delivery", "rider", "allergen", "shift"],
    "logistics": ["shipper", "parcel", "route", "depot", "vehicle", "driver", "manifest", "pickup", "customs", "label"],
    "education": ["student", "course", "enrollment", "grade", "instructor", "assignment", "exam", "campus", "club", "scholarship"],
    "insurance": ["holder", "policy", "claim", "adjuster", "premium", "vehicle", "property", "rider", "broker", "inspection"],
    "rental_car": ["renter", "car", "rental", "station", "damage", "fuel", "toll", "upgrade", "license", "protection"],
    "real_estate": ["buyer", "listing", "viewing", "offer", "agent", "mortgage", "inspection", "escrow", "tenant", "lease"],
    "events": ["attendee", "venue", "ticket", "session", "speaker", "sponsor", "badge", "booth", "workshop", "survey"],
    "fitness": ["member", "gym", "membership", "class", "trainer", "locker", "session", "plan", "checkin", "guestpass"],
    "government": ["citizen", "permit", "application", "office", "fee", "appeal", "inspection", "license", "record", "notice"],
    "streaming": ["viewer", "title", "profile", "subscription", "playlist", "device", "download", "rating", "gift", "household"],
    "utilities": ["resident", "meter", "service", "reading", "bill", "outage", "payment", "plan", "technician", "visit"],
    "travel_agency": ["traveler", "package", "itinerary", "tour", "guide", "visa", "transfer", "excursion", "deposit", "insurance"],
    "pharmacy": ["patient", "drug", "refill", "prescriber", "store", "claim", "reminder", "delivery", "counseling", "batch"],
    "library": ["patron", "book", "loan", "hold", "branch", "fine", "room", "event", "ebook", "card"],
    "automotive": ["owner", "vehicle", "service", "part", "mechanic", "estimate", "warranty", "recall", "loaner", "appointment"],
    "cloud_ops": ["tenant", "project", "instance", "volume", "network", "snapshot", "quota", "incident", "key", "billing"],
    "food_delivery": ["eater", "merchant", "basket", "courier", "dropoff", "promo", "tip", "complaint", "menu", "zone"],
    "hr": ["employee", "department", "position", "payroll", "leave", "review", "benefit", "expense", "training", "asset"],
}
STYLE_NAMES = tuple(DOMAIN_STYLES)

_SCALAR_COLS = ["amount", "quantity", "rating", "capacity", "price", "duration", "limit", "score"]
_ENUM_COLS = {
    "tier": ("basic", "silver", "gold", "platinum"),
    "priority": ("low", "normal", "high"),
    "channel": ("web", "phone", "store", "app"),
    "category": ("standard", "premium", "economy"),
    "stage": ("draft", "review", "approved", "closed"),
    "mode": ("manual", "auto", "hybrid"),
    "region": ("north", "south", "east", "west"),
    "language": ("en", "es", "fr", "de"),
}
_TEXT_COLS = ["note", "title", "address", "comment", "tag", "contact", "reference", "instructions"]
CANCEL_REASON = ("requested", "duplicate", "fraud")


@dataclass(frozen=True)
class ParamSlot:
    name: str
    value_kind: str
    source: str
    producer: str | None = None
    entity_kind: str | None = None
    values: tuple = ()
    constant: Any = None
    # database column this slot writes on create, if any
    column: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value_kind": self.value_kind,
            "source": self.source,
            "producer": self.producer,
            "entity_kind": self.entity_kind,
            "values": list(self.values),
            "constant": self.constant,
            "column": self.column,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSlot":
        return cls(
            d["name"], d["value_kind"], d["source"], d.get("producer"), d.get("entity_kind"),
            tuple(d.get("values", ())), d.get("constant"), d.get("column"),
        )


@dataclass
class ToolSpec:
    id: str
    domain: str
    family: str
    entity_kind: str
    inputs: list[ParamSlot]
    reads: list[str]
    writes: list[tuple[str, str]]
    output_entities: list[str]
    order: int = 0
    target: str | None = None
    value_slot: str | None = None
    column: str | None = None

    def slot(self, name: str) -> ParamSlot:
        for s in self.inputs:
            if s.name == name:
                return s
        raise KeyError(name)

    def produced_slots(self) -> list[ParamSlot]:
        return [s for s in self.inputs if s.source == "produced-by-tool"]

    def producers(self) -> set[str]:
        return {s.producer for s in self.inputs if s.source == "produced-by-tool"}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "domain": self.domain,
            "family": self.family,
            "entity_kind": self.entity_kind,
            "inputs": [s.to_dict() for s in self.inputs],
            "reads": list(self.reads),
            "writes": [list(w) for w in self.writes],
            "output_entities": list(self.output_entities),
            "order": self.order,
            "target": self.target,
            "value_slot": self.value_slot,
            "column": self.column,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolSpec":
        return cls(
            d["id"], d["domain"], d["family"], d["entity_kind"],
            [ParamSlot.from_dict(s) for s in d["inputs"]],
            list(d["reads"]), [tuple(w) for w in d["writes"]], list(d["output_entities"]),
            d.get("order", 0), d.get("target"), d.get("value_slot"), d.get("column"),
        )


@dataclass
class DomainSchema:
    domain: str
    # table -> [(column, type)]; types are VALUE_KINDS plus "bool"
    tables: dict[str, list[tuple[str, str]]]
    entity_kinds: dict[str, str]
    enum_values: dict[str, tuple] = field(default_factory=dict)

    def columns(self, table: str) -> list[str]:
        return [c for c, _ in self.tables[table]]

    def default_row(self, table: str) -> dict:
        row = {}
        for col, typ in self.tables[table]:
            if col == "status":
                row[col] = "active"
            elif typ == "bool":
                row[col] = False
            elif typ == "scalar":
                row[col] = 0
            elif typ == "enum":
                row[col] = self.enum_values[f"{table}.{col}"][0]
            elif typ == "text":
                row[col] = ""
            else:
                row[col] = None
        return row

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "tables": {t: [list(c) for c in cols] for t, cols in sorted(self.tables.items())},
            "entity_kinds": dict(sorted(self.entity_kinds.items())),
            "enum_values": {k: list(v) for k, v in sorted(self.enum_values.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSchema":
        return cls(
            d["domain"],
            {t: [tuple(c) for c in cols] for t, cols in d["tables"].items()},
            dict(d["entity_kinds"]),
            {k: tuple(v) for k, v in d.get("enum_values", {}).items()},
        )


@dataclass
class ToolGraph:
    domain: str
    tools: dict[str, ToolSpec]
    edges: set[tuple[str, str]]
    schema: DomainSchema

    @property
    def nodes(self) -> set[str]:
        return set(self.tools)

    def __len__(self) -> int:
        return len(self.tools)

    def density(self) -> float:
        n = len(self.tools)
        return 0.0 if n < 2 else 2 * len(self.edges) / (n * (n - 1))

    def successors(self, tool: str) -> set[str]:
        return {b for a, b in self.edges if a == tool}

    def topo_order(self) -> list[str]:
        return sorted(self.tools, key=lambda t: (self.tools[t].order, t))

    def is_dag(self) -> bool:
        indeg = {t: 0 for t in self.tools}
        out: dict[str, list[str]] = {t: [] for t in self.tools}
        for a, b in self.edges:
            if a not in indeg or b not in indeg:
                continue
            indeg[b] += 1
            out[a].append(b)
        stack = [t for t, d in indeg.items() if d == 0]
        seen = 0
        while stack:
            t = stack.pop()
            seen += 1
            for b in out[t]:
                indeg[b] -= 1
                if indeg[b] == 0:
                    stack.append(b)
        return seen == len(self.tools)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "domain": self.domain,
            "schema": self.schema.to_dict(),
            "tools": [self.tools[t].to_dict() for t in sorted(self.tools)],
            "edges": sorted([a, b] for a, b in self.edges),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToolGraph":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
        tools = {t["id"]: ToolSpec.from_dict(t) for t in d["tools"]}
        return cls(d["domain"], tools, {(a, b) for a, b in d["edges"]}, DomainSchema.from_dict(d["schema"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def loads(cls, text: str) -> "ToolGraph":
        return cls.from_dict(json.loads(text))

    def subgraph(self, keep) -> "ToolGraph":
        keep = set(keep)
        return ToolGraph(
            self.domain,
            {t: s for t, s in self.tools.items() if t in keep},
            {(a, b) for a, b in self.edges if a in keep and b in keep},
            self.schema,
        )


def edges_from_slots(tools: dict[str, ToolSpec]) -> set[tuple[str, str]]:
    return {(s.producer, t.id) for t in tools.values() for s in t.produced_slots()}


@dataclass
class DomainGenConfig:
    n_tools: int = 64
    density: float = 0.08
    n_tables: int = 8
    style: int = 0
    max_refs: int = 4
    density_tolerance: float = 0.1
    max_attempts: int = 200
    # permits small graphs (below 60 tools / 4 tables) for tests and demos
    test_mode: bool = False

    def validate(self) -> None:
        if not 0.0 < self.density < 1.0:
            raise InfeasibleConfig(f"density must be in (0, 1), got {self.density}")
        if not self.test_mode:
            if self.n_tools < 60:
                raise InfeasibleConfig(f"n_tools must be >= 60, got {self.n_tools}")
            if self.n_tables < 4:
                raise InfeasibleConfig(f"n_tables must be >= 4, got {self.n_tables}")
        if self.n_tables < 1 or self.n_tools < 3 * self.n_tables:
            raise InfeasibleConfig(f"{self.n_tools} tools cannot cover {self.n_tables} tables (need 3 per table)")

    @property
    def style_name(self) -> str:
        return STYLE_NAMES[self.style % len(STYLE_NAMES)]


def _kind_names(style: str, n: int) -> list[str]:
    base = DOMAIN_STYLES[style]
    return [base[i % len(base)] + ("" if i < len(base) else f"_{i // len(base)}") for i in range(n)]


def _table(kind: str) -> str:
    return kind + "s"


@dataclass
class _Skeleton:
    id: str
    family: str
    kind: str
    order: int = 0
    # (slot name, entity kind, column or None)
    entity_slots: list[tuple[str, str, str | None]] = field(default_factory=list)
    other_slots: list[ParamSlot] = field(default_factory=list)
    target: str | None = None
    value_slot: str | None = None
    column: str | None = None


def generate_domain(seed: int, config: DomainGenConfig | None = None) -> tuple[DomainSchema, ToolGraph]:
    """Deterministically generate a domain schema and its tool dependency graph."""
    config = config or DomainGenConfig()
    config.validate()
    rng = random.Random(seed)
    style = config.style_name
    domain = style
    kinds = _kind_names(style, config.n_tables)
    k = len(kinds)

    parents: dict[str, list[str]] = {kinds[0]: []}
    for i in range(1, k):
        ps = [kinds[rng.randrange(i)]]
        if i >= 3 and rng.random() < 0.3:
            extra = kinds[rng.randrange(i)]
            if extra not in ps:
                ps.append(extra)
        parents[kinds[i]] = ps

    # distribute update tools over kinds
    n_updates = config.n_tools - 3 * k
    per_kind = {kd: 0 for kd in kinds}
    offset = rng.randrange(k)
    for j in range(n_updates):
        per_kind[kinds[(offset + j) % k]] += 1

    tables: dict[str, list[tuple[str, str]]] = {}
    enum_values: dict[str, tuple] = {}
    skeletons: list[_Skeleton] = []
    for kd in kinds:
        t = _table(kd)
        cols = [("id", "entity-id"), ("status", "enum"), ("verified", "bool"), ("label", "text")]
        enum_values[f"{t}.status"] = ("active", "cancelled")
        cols += [(f"{p}_id", "entity-id") for p in parents[kd]]
        skeletons.append(_Skeleton(f"get_{kd}", "lookup", kd, entity_slots=[(f"{kd}_id", kd, None)],
                                   target=f"{kd}_id", column="verified"))
        create = _Skeleton(f"create_{kd}", "create", kd,
                           entity_slots=[(f"{p}_id", p, f"{p}_id") for p in parents[kd]],
                           other_slots=[ParamSlot("label", "text", "user-provided", column="label")])
        skeletons.append(create)
        skeletons.append(_Skeleton(
            f"cancel_{kd}", "cancel", kd, entity_slots=[(f"{kd}_id", kd, None)],
            other_slots=[ParamSlot("reason", "enum", "constant", values=CANCEL_REASON, constant=CANCEL_REASON[0])],
            target=f"{kd}_id"))
        used = {c for c, _ in cols}
        kinds_cycle = ["scalar", "enum", "text", "entity-id"]
        rng.shuffle(kinds_cycle)
        for j in range(per_kind[kd]):
            vk = kinds_cycle[j % 4]
            if vk == "entity-id" and k < 2:
                vk = "scalar"
            sk = _Skeleton("", "update", kd, target=f"{kd}_id", entity_slots=[(f"{kd}_id", kd, None)])
            if vk == "scalar":
                col = _fresh(rng.choice(_SCALAR_COLS), used)
                sk.other_slots.append(ParamSlot("value", "scalar", "user-provided", column=col))
            elif vk == "enum":
                base = rng.choice(sorted(_ENUM_COLS))
                col = _fresh(base, used)
                enum_values[f"{t}.{col}"] = _ENUM_COLS[base]
                sk.other_slots.append(ParamSlot("value", "enum", "user-provided", values=_ENUM_COLS[base], column=col))
            elif vk == "text":
                col = _fresh(rng.choice(_TEXT_COLS), used)
                sk.other_slots.append(ParamSlot("value", "text", "user-provided", column=col))
            else:
                other = rng.choice([x for x in kinds if x != kd])
                col = _fresh(f"assigned_{other}", used)
                sk.entity_slots.append(("value", other, col))
            used.add(col)
            cols.append((col, vk))
            sk.id = f"update_{kd}_{col}"
            sk.value_slot = "value"
            sk.column = col
            skeletons.append(sk)
        tables[t] = cols

    # total order: lookups, creates (in kind order), updates, cancels
    kind_idx = {kd: i for i, kd in enumerate(kinds)}
    rng.shuffle(skeletons)
    skeletons.sort(key=lambda s: (_FAMILY_RANK[s.family], kind_idx[s.kind] if s.family == "create" else 0))
    for i, s in enumerate(skeletons):
        s.order = i

    producers_of: dict[str, list[_Skeleton]] = {kd: [] for kd in kinds}
    candidates: dict[tuple[str, str], list[str]] = {}
    for s in skeletons:
        for name, kd, _ in s.entity_slots:
            if s.family != "lookup":
                candidates[(s.id, name)] = [p.id for p in producers_of[kd]]
        producers_of[s.kind].append(s)

    n = config.n_tools
    target_edges = config.density * n * (n - 1) / 2
    tol = config.density_tolerance
    base_slots = [key for key, c in candidates.items() if c]

    # reference slots raise the number of sourceable slots to reach the density
    ref_capacity = []
    for s in skeletons:
        if s.family == "lookup":
            continue
        have = {kd for _, kd, _ in s.entity_slots}
        options = [kd for kd in kinds if kd not in have and producers_of_before(producers_of[kd], s.order)]
        rng.shuffle(options)
        ref_capacity.append((s, options[: config.max_refs]))
    max_edges = len(base_slots) + sum(len(o) for _, o in ref_capacity)
    if max_edges < target_edges * (1 - tol):
        raise InfeasibleConfig(
            f"density {config.density} needs ~{target_edges:.0f} edges; at most {max_edges} reachable with {n} tools"
        )
    q0 = 0.75
    n_refs = max(0, min(sum(len(o) for _, o in ref_capacity), math.ceil(target_edges / q0) - len(base_slots)))
    pool = [(s, kd) for s, opts in ref_capacity for kd in opts]
    rng.shuffle(pool)
    for s, kd in pool[:n_refs]:
        s.entity_slots.append((f"{kd}_ref", kd, None))
        candidates[(s.id, f"{kd}_ref")] = [p.id for p in producers_of[kd] if p.order < s.order]
    sourceable = [key for key, c in candidates.items() if c]
    q = min(1.0, target_edges / max(1, len(sourceable)))

    # rejection sampling over slot sourcing
    for _ in range(config.max_attempts):
        choice = {}
        for key in sourceable:
            if rng.random() < q:
                choice[key] = rng.choice(candidates[key])
        n_edges = len(choice)
        if abs(n_edges - target_edges) <= tol * target_edges:
            break
        q = min(1.0, q * target_edges / max(1, n_edges))
    else:
        raise InfeasibleConfig(f"could not reach density {config.density} within {config.max_attempts} attempts")

    tools: dict[str, ToolSpec] = {}
    for s in skeletons:
        t = _table(s.kind)
        inputs: list[ParamSlot] = []
        reads = {t} if s.family != "create" else set()
        for name, kd, col in s.entity_slots:
            prod = choice.get((s.id, name))
            src = "produced-by-tool" if prod else "user-provided"
            inputs.append(ParamSlot(name, "entity-id", src, producer=prod, entity_kind=kd, column=col))
            reads.add(_table(kd))
        inputs.extend(s.other_slots)
        writes = [(t, "insert")] if s.family == "create" else [(t, "update")]
        tools[s.id] = ToolSpec(
            s.id, domain, s.family, s.kind, inputs, sorted(reads), writes, [s.kind],
            order=s.order, target=s.target, value_slot=s.value_slot, column=s.column,
        )
    schema = DomainSchema(domain, tables, {kd: _table(kd) for kd in kinds}, enum_values)
    graph = ToolGraph(domain, tools, edges_from_slots(tools), schema)
    return schema, graph


def producers_of_before(prods: list, order: int) -> bool:
    return any(p.order < order for p in prods)


def _fresh(base: str, used: set[str]) -> str:
    if base not in used:
        return base
    i = 2
    while f"{base}_{i}" in used:
        i += 1
    return f"{base}_{i}"


@dataclass
class ToolCheck:
    tool: str
    executable: bool
    edges_consistent: bool
    messages: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.executable and self.edges_consistent


@dataclass
class ValidationReport:
    domain: str
    entries: list[ToolCheck]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def pass_rate(self) -> float:
        if not self.entries:
            return 1.0
        return sum(e.passed for e in self.entries) / len(self.entries)

    def failing(self) -> list[str]:
        return [e.tool for e in self.entries if not e.passed]

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "passed": self.passed,
            "pass_rate": self.pass_rate,
            "entries": [
                {"tool": e.tool, "executable": e.executable, "edges_consistent": e.edges_consistent, "messages": e.messages}
                for e in self.entries
            ],
        }


def validate_toolset(graph: ToolGraph) -> ValidationReport:
    """Check each tool for executability on a minimal database and for edge consistency."""
    from .environment import ToolChain, instantiate_chain_db, run_chain

    schema = graph.schema
    entries = []
    backed = edges_from_slots(graph.tools)
    for tid in graph.topo_order():
        spec = graph.tools[tid]
        msgs = []
        for s in spec.inputs:
            if s.value_kind == "entity-id" and s.entity_kind not in schema.entity_kinds:
                msgs.append(f"slot {s.name}: unknown entity kind {s.entity_kind}")
            if s.value_kind == "enum" and not s.values:
                msgs.append(f"slot {s.name}: empty enum domain")
            if s.source != "produced-by-tool":
                continue
            prod = graph.tools.get(s.producer)
            if prod is None:
                msgs.append(f"slot {s.name}: producer {s.producer} missing from graph")
                continue
            if s.entity_kind not in prod.output_entities:
                msgs.append(f"slot {s.name}: producer {s.producer} does not output {s.entity_kind}")
            if (s.producer, tid) not in graph.edges:
                msgs.append(f"slot {s.name}: edge {s.producer}->{tid} absent")
            if prod.order >= spec.order:
                msgs.append(f"slot {s.name}: producer {s.producer} does not precede consumer")
        for a, b in graph.edges:
            if b == tid and (a, b) not in backed:
                msgs.append(f"edge {a}->{b} not backed by any slot")
        tables = set(spec.reads) | {t for t, _ in spec.writes}
        for t in sorted(tables - set(schema.tables)):
            msgs.append(f"table {t} not in schema")
        edges_ok = not msgs

        executable = True
        try:
            chain = ToolChain([tid], graph.domain)
            db, bound = instantiate_chain_db(
                chain, graph, random.Random(spec.order), base=DatabaseState.empty(schema)
            )
            ok, _, results = run_chain(db, bound, graph)
            if not ok:
                executable = False
                msgs.append(f"execution failed: {results[-1].status}")
        except Exception as exc:  # a validation entry, never a fault
            executable = False
            msgs.append(f"execution error: {exc!r}")
        entries.append(ToolCheck(tid, executable, edges_ok, msgs))
    return ValidationReport(graph.domain, entries)

