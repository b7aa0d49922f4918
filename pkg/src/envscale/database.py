"""Database model and the tool interpreter.

Tools are never executed as code. A :class:`~envscale.domain.ToolSpec` is
interpreted against a :class:`DatabaseState` by :func:`execute_tool`, which is
a pure function of ``(db, call)``: the input state is never mutated.

Every generated tool has exactly one kind of state effect, and repeating a
call with identical arguments is a no-op. Both properties matter elsewhere:
rubrics can reject any chain with one tool removed, and an agent that restarts
after a context reset can safely replay its earlier calls.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any

from .errors import UnknownTool

OK = "ok"
MISSING_ARG = "missing-arg"
MISSING_ENTITY = "missing-entity"
PRECONDITION_FAILED = "precondition-failed"
TRANSIENT_FAILURE = "transient-failure"

STATUSES = (OK, MISSING_ARG, MISSING_ENTITY, PRECONDITION_FAILED, TRANSIENT_FAILURE)


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tool": self.tool, "args": dict(sorted(self.args.items()))}


@dataclass
class ToolResult:
    status: str
    payload: dict[str, Any] = field(default_factory=dict)
    # (table, effect-kind) pairs actually applied to the database
    effects: list[tuple[str, str]] = field(default_factory=list)
    noise: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == OK

    def to_dict(self) -> dict:
        d = {"status": self.status, "payload": self.payload, "effects": [list(e) for e in self.effects]}
        if self.noise is not None:
            d["noise"] = self.noise
        return d


class DatabaseState:
    """Tables of rows keyed by integer entity id.

    Treated as immutable by the interpreter; builders that need to append rows
    work on a :meth:`copy`.
    """

    __slots__ = ("tables", "counters")

    def __init__(self, tables: dict[str, dict[int, dict]] | None = None, counters: dict[str, int] | None = None):
        self.tables = tables if tables is not None else {}
        self.counters = counters if counters is not None else {t: max(rows, default=0) for t, rows in self.tables.items()}

    @classmethod
    def empty(cls, schema) -> "DatabaseState":
        return cls({t: {} for t in schema.tables}, {t: 0 for t in schema.tables})

    def copy(self) -> "DatabaseState":
        return DatabaseState(copy.deepcopy(self.tables), dict(self.counters))

    def rows(self, table: str) -> list[dict]:
        return list(self.tables[table].values())

    def get(self, table: str, entity_id) -> dict | None:
        return self.tables.get(table, {}).get(entity_id)

    def insert(self, table: str, row: dict) -> int:
        """Append ``row`` under a fresh id. Mutates ``self``; builders only."""
        new_id = self.counters.get(table, 0) + 1
        self.counters[table] = new_id
        row = dict(row)
        row["id"] = new_id
        self.tables.setdefault(table, {})[new_id] = row
        return new_id

    def n_rows(self) -> int:
        return sum(len(r) for r in self.tables.values())

    def to_dict(self) -> dict:
        return {
            "tables": {t: [self.tables[t][i] for i in sorted(self.tables[t])] for t in sorted(self.tables)},
            "counters": {t: self.counters[t] for t in sorted(self.counters)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatabaseState":
        tables = {t: {int(r["id"]): dict(r) for r in rows} for t, rows in d["tables"].items()}
        return cls(tables, {t: int(c) for t, c in d["counters"].items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, DatabaseState) and self.tables == other.tables and self.counters == other.counters

    def __repr__(self) -> str:
        return f"DatabaseState({ {t: len(r) for t, r in self.tables.items()} })"


def _with_row(db: DatabaseState, table: str, row: dict, counter: int | None = None) -> DatabaseState:
    tables = dict(db.tables)
    t = dict(tables[table])
    t[row["id"]] = row
    tables[table] = t
    counters = db.counters
    if counter is not None:
        counters = dict(counters)
        counters[table] = counter
    return DatabaseState(tables, counters)


def _payload(kind: str, row: dict, **extra) -> dict:
    return {"kind": kind, "id": row["id"], "row": dict(row), **extra}


def check_value(slot, value) -> bool:
    if slot.value_kind == "enum":
        return value in slot.values
    if slot.value_kind == "scalar":
        return isinstance(value, int) and not isinstance(value, bool)
    if slot.value_kind == "text":
        return isinstance(value, str)
    return True


def execute_tool(db: DatabaseState, call: ToolCall, graph) -> tuple[ToolResult, DatabaseState]:
    """Apply one tool call. Failures are returned as statuses and leave ``db`` unchanged.

    Raises :class:`UnknownTool` when ``call.tool`` is not in ``graph``.
    """
    spec = graph.tools.get(call.tool)
    if spec is None:
        raise UnknownTool(call.tool)
    schema = graph.schema
    args = call.args

    values = {}
    for slot in spec.inputs:
        v = args.get(slot.name)
        if v is None and slot.source == "constant":
            v = slot.constant
        if v is None:
            return ToolResult(MISSING_ARG, {"slot": slot.name}), db
        values[slot.name] = v
    for slot in spec.inputs:
        v = values[slot.name]
        if slot.value_kind == "entity-id":
            if db.get(schema.entity_kinds[slot.entity_kind], v) is None:
                return ToolResult(MISSING_ENTITY, {"slot": slot.name, "kind": slot.entity_kind, "id": v}), db
        elif not check_value(slot, v):
            return ToolResult(PRECONDITION_FAILED, {"slot": slot.name, "value": v}), db

    kind = spec.entity_kind
    table = schema.entity_kinds[kind]
    fam = spec.family

    if fam == "lookup":
        row = db.get(table, values[spec.target])
        if row[spec.column]:
            return ToolResult(OK, _payload(kind, row)), db
        row = {**row, spec.column: True}
        return ToolResult(OK, _payload(kind, row), [(table, "update")]), _with_row(db, table, row)

    if fam == "create":
        fields = {s.column: values[s.name] for s in spec.inputs if s.column is not None}
        for row in db.tables[table].values():
            if all(row.get(c) == v for c, v in fields.items()):
                # same label and parents: creation is idempotent
                return ToolResult(OK, _payload(kind, row, existing=True)), db
        new_id = db.counters.get(table, 0) + 1
        row = schema.default_row(table)
        row.update(fields)
        row["id"] = new_id
        return ToolResult(OK, _payload(kind, row), [(table, "insert")]), _with_row(db, table, row, new_id)

    row = db.get(table, values[spec.target])
    if fam == "update":
        v = values[spec.value_slot]
        if row[spec.column] == v:
            return ToolResult(OK, _payload(kind, row)), db
        row = {**row, spec.column: v}
        return ToolResult(OK, _payload(kind, row), [(table, "update")]), _with_row(db, table, row)

    if fam == "cancel":
        if row["status"] == "cancelled":
            return ToolResult(OK, _payload(kind, row, existing=True)), db
        row = {**row, "status": "cancelled"}
        return ToolResult(OK, _payload(kind, row), [(table, "update")]), _with_row(db, table, row)

    raise ValueError(f"unknown tool family {fam!r}")
