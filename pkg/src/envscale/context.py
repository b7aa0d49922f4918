"""Context management for long episodes: summarize, discard-all, or both.

Token accounting is synthetic. A context holds the base prompt, the live
events since the last reset and an optional digest. The digest is built by
:func:`summarize`, a structural (non-learned) compressor that keeps every
entity id and fact an agent has observed, so no task-critical state is lost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

SUMMARY = "summary"
DISCARD_ALL = "discard_all"
HYBRID = "hybrid"
POLICY_KINDS = (SUMMARY, DISCARD_ALL, HYBRID)

NONE = "none"
SUMMARIZE = "summarize"
DISCARD = "discard_all"

# cost of one digest entry; must stay below the cheapest observation it replaces
ENTRY_TOKENS = 3


@dataclass(frozen=True)
class ContextPolicy:
    kind: str = HYBRID
    summary_threshold_tokens: int = 80_000
    max_turns: int = 16
    discard_schedule: tuple[int, ...] | None = None
    keep_last_k: int = 2

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown context policy {self.kind!r}")
        if self.summary_threshold_tokens <= 0 or self.max_turns <= 0:
            raise ValueError("thresholds must be positive")
        if self.keep_last_k < 0:
            raise ValueError("keep_last_k must be >= 0")
        if self.discard_schedule is not None:
            s = tuple(int(x) for x in self.discard_schedule)
            if not s or min(s) <= 0 or any(b < a for a, b in zip(s, s[1:])):
                raise ValueError("discard schedule must be positive and nondecreasing")
            object.__setattr__(self, "discard_schedule", s)

    def discard_threshold(self, index: int) -> int:
        """Turn threshold after ``index`` resets. The default schedule doubles ``max_turns`` each time."""
        if self.discard_schedule is None:
            return self.max_turns * 2 ** index
        return self.discard_schedule[min(index, len(self.discard_schedule) - 1)]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "summary_threshold_tokens": self.summary_threshold_tokens,
            "max_turns": self.max_turns,
            "discard_schedule": None if self.discard_schedule is None else list(self.discard_schedule),
            "keep_last_k": self.keep_last_k,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContextPolicy":
        d = dict(d)
        if d.get("discard_schedule") is not None:
            d["discard_schedule"] = tuple(d["discard_schedule"])
        return cls(**d)


@dataclass
class Digest:
    facts: dict = field(default_factory=dict)
    # one (step, tool, kind, id) entry per ok tool result
    entities: list = field(default_factory=list)
    verbatim: list = field(default_factory=list)

    @property
    def tokens(self) -> int:
        # entity entries of results kept verbatim are not charged twice
        covered = sum(1 for e in self.verbatim if e["status"] == "ok" and (e.get("payload") or {}).get("id") is not None)
        entries = len(self.facts) + max(0, len(self.entities) - covered)
        return ENTRY_TOKENS * entries + sum(e["tokens"] for e in self.verbatim)

    def is_empty(self) -> bool:
        return not (self.facts or self.entities or self.verbatim)

    def to_dict(self) -> dict:
        return {
            "facts": [[k, v] for k, v in sorted(self.facts.items())],
            "entities": [list(e) for e in self.entities],
            "verbatim": list(self.verbatim),
        }


@dataclass(frozen=True)
class ContextState:
    tokens: int
    turns: int = 0
    resets: int = 0
    schedule_index: int = 0
    base_tokens: int = 0

    def __post_init__(self):
        if self.tokens < 0 or self.turns < 0:
            raise ValueError("token and turn counts must be nonnegative")

    @classmethod
    def fresh(cls, base_tokens: int) -> "ContextState":
        return cls(tokens=base_tokens, base_tokens=base_tokens)

    def add(self, tokens: int, turn: bool = False) -> "ContextState":
        return replace(self, tokens=self.tokens + tokens, turns=self.turns + int(turn))

    def after_discard(self) -> "ContextState":
        return replace(self, tokens=self.base_tokens, turns=0, resets=self.resets + 1, schedule_index=self.schedule_index + 1)


def apply_policy(state: ContextState, policy: ContextPolicy) -> str:
    """Decide the context action for the current state.

    Summarizing fires strictly above the token threshold and discarding
    strictly above the current turn threshold. When both fire under the hybrid
    policy, discard wins.
    """
    discard = policy.kind in (DISCARD_ALL, HYBRID) and state.turns > policy.discard_threshold(state.schedule_index)
    if discard:
        return DISCARD
    if policy.kind in (SUMMARY, HYBRID) and state.tokens > policy.summary_threshold_tokens:
        return SUMMARIZE
    return NONE


def _is_observation(ev: dict) -> bool:
    return ev["type"] in ("tool-result", "user-message")


def summarize(history: list[dict], keep_last_k: int, prior: Digest | None = None) -> tuple[Digest, list[dict]]:
    """Fold observations into a digest.

    ``history`` is a list of trajectory events. Tool results and user replies
    are replaced; the agent's own events stay live. Each ok tool result leaves
    an entity entry, each revealed fact a fact entry, and the last
    ``keep_last_k`` tool results are also kept verbatim. Returns the merged
    digest and the events that remain live.
    """
    if keep_last_k < 0:
        raise ValueError("keep_last_k must be >= 0")
    d = Digest(dict(prior.facts), list(prior.entities), []) if prior else Digest()
    results = [e for e in (prior.verbatim if prior else [])] + [e for e in history if e["type"] == "tool-result"]
    for ev in history:
        if ev["type"] == "tool-result":
            p = ev.get("payload") or {}
            if ev["status"] == "ok" and p.get("id") is not None:
                d.entities.append((ev.get("step"), ev["tool"], p.get("kind"), p["id"]))
        elif ev["type"] == "user-message":
            d.facts.update(ev.get("facts", {}))
    d.verbatim = results[-keep_last_k:] if keep_last_k else []
    live = [e for e in history if not _is_observation(e)]
    return d, live


def observation_tokens(history: list[dict]) -> int:
    return sum(e["tokens"] for e in history if _is_observation(e))
