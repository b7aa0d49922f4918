"""Leveled instruction and tool noise, solvability checks and the noise curriculum.

Tool noise is observational or transient only: a failed call leaves the
database untouched and a repeated call sees a clean result again, so noise
never makes a task unsolvable for an agent that retries.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .database import TRANSIENT_FAILURE, ToolCall, ToolResult, execute_tool

MAX_LEVEL = 4

CONSTRAINT_OBFUSCATION = "constraint-obfuscation"
DISTRACTOR_PREFERENCE = "distractor-preference"
REORDERING = "reordering"
TOOL_FAILURE = "tool-failure"
PARTIAL_RESULT = "partial-result"
INCONSISTENT_RESPONSE = "inconsistent-response"
LATENCY_SPIKE = "latency-spike"

# kinds in the order they switch on as the level rises
INSTRUCTION_KINDS = (CONSTRAINT_OBFUSCATION, DISTRACTOR_PREFERENCE, REORDERING)
TOOL_KINDS = (TOOL_FAILURE, PARTIAL_RESULT, INCONSISTENT_RESPONSE, LATENCY_SPIKE)
ALL_KINDS = INSTRUCTION_KINDS + TOOL_KINDS

FAILURE_PROB = 0.3
OTHER_PROB = 0.1
LATENCY_SPIKE_TIME = 5.0


def instruction_kinds(level: int) -> tuple[str, ...]:
    return INSTRUCTION_KINDS[: max(0, level)]


def tool_kinds(level: int) -> tuple[str, ...]:
    return TOOL_KINDS[: max(0, level)]


@dataclass(frozen=True)
class NoiseProfile:
    instruction_level: int = 0
    tool_level: int = 0
    enabled_kinds: frozenset | None = None
    failure_prob: float = FAILURE_PROB
    other_prob: float = OTHER_PROB
    # noisy answers in a row for the same call before a clean one is forced
    max_consecutive: int = 1
    # tools that never succeed; such a profile must fail verify_solvability
    permanent_failures: frozenset = frozenset()
    max_level: int = MAX_LEVEL

    def __post_init__(self):
        for name in ("instruction_level", "tool_level"):
            v = getattr(self, name)
            if not 0 <= v <= self.max_level:
                raise ValueError(f"{name} must be in [0, {self.max_level}]")
        allowed = set(instruction_kinds(self.instruction_level)) | set(tool_kinds(self.tool_level))
        kinds = allowed if self.enabled_kinds is None else set(self.enabled_kinds)
        if not kinds <= allowed:
            raise ValueError(f"kinds {sorted(kinds - allowed)} are not available at these levels")
        if self.max_consecutive < 1:
            raise ValueError("max_consecutive must be >= 1")
        if self.failure_prob + 3 * self.other_prob > 1.0:
            raise ValueError("noise probabilities sum above 1")
        object.__setattr__(self, "enabled_kinds", frozenset(kinds))
        object.__setattr__(self, "permanent_failures", frozenset(self.permanent_failures))

    @classmethod
    def at_level(cls, level: int, **kw) -> "NoiseProfile":
        return cls(instruction_level=level, tool_level=level, **kw)

    @property
    def tool_noise_kinds(self) -> tuple[str, ...]:
        return tuple(k for k in TOOL_KINDS if k in self.enabled_kinds)

    def to_dict(self) -> dict:
        return {
            "instruction_level": self.instruction_level,
            "tool_level": self.tool_level,
            "enabled_kinds": sorted(self.enabled_kinds),
            "failure_prob": self.failure_prob,
            "other_prob": self.other_prob,
            "max_consecutive": self.max_consecutive,
            "permanent_failures": sorted(self.permanent_failures),
            "max_level": self.max_level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseProfile":
        d = dict(d)
        if d.get("enabled_kinds") is not None:
            d["enabled_kinds"] = frozenset(d["enabled_kinds"])
        d["permanent_failures"] = frozenset(d.get("permanent_failures", ()))
        return cls(**d)


def kind_rates(level: int, kinds=None, failure_prob: float = FAILURE_PROB, other_prob: float = OTHER_PROB,
               max_level: int = MAX_LEVEL) -> dict[str, float]:
    """Per-kind probabilities at ``level``; every rate scales linearly up to its full value at ``max_level``."""
    kinds = tool_kinds(level) if kinds is None else [k for k in TOOL_KINDS if k in kinds]
    scale = min(level, max_level) / max_level
    return {k: (failure_prob if k == TOOL_FAILURE else other_prob) * scale for k in kinds}


def apply_tool_noise(result: ToolResult, kind: str | None, rng: random.Random) -> ToolResult:
    if kind is None:
        return result
    if kind == TOOL_FAILURE:
        return ToolResult(TRANSIENT_FAILURE, {"retryable": True}, [], noise=kind)
    if kind == PARTIAL_RESULT:
        payload = {k: v for k, v in result.payload.items() if k != "id"}
        return ToolResult(result.status, payload, list(result.effects), noise=kind)
    if kind == INCONSISTENT_RESPONSE:
        payload = dict(result.payload)
        payload["id"] = payload["id"] + rng.randint(1, 1000)
        return ToolResult(result.status, payload, list(result.effects), noise=kind)
    if kind == LATENCY_SPIKE:
        return ToolResult(result.status, dict(result.payload), list(result.effects), noise=kind)
    raise ValueError(f"unknown tool noise kind {kind!r}")


def draw_tool_noise(level: int, rng: random.Random, kinds=None, **rates) -> str | None:
    """Draw at most one noise kind; kinds are mutually exclusive."""
    if level <= 0:
        return None
    u = rng.random()
    acc = 0.0
    for k, p in kind_rates(level, kinds, **rates).items():
        acc += p
        if u < acc:
            return k
    return None


def inject_tool_noise(result: ToolResult, level: int, rng: random.Random, kinds=None, **rates) -> ToolResult:
    """Possibly replace an ok result by a noisy observation. Level 0 and failed results pass through."""
    if level <= 0 or not result.ok:
        return result
    return apply_tool_noise(result, draw_tool_noise(level, rng, kinds, **rates), rng)


def _call_key(call: ToolCall) -> tuple:
    return call.tool, tuple(sorted((k, repr(v)) for k, v in call.args.items()))


class NoisyExecutor:
    """Runs tool calls through the interpreter and the noise model.

    A transient failure discards the state change. After ``max_consecutive``
    noisy answers to the same call, the next identical call is answered
    cleanly. ``adversary`` forces one kind on every call the bound allows.
    """

    def __init__(self, profile: NoiseProfile, rng: random.Random, adversary: str | None = None):
        self.profile = profile
        self.rng = rng
        self.adversary = adversary
        self._last_key = None
        self._streak = 0

    def _kind(self, key) -> str | None:
        p = self.profile
        if key == self._last_key and self._streak >= p.max_consecutive:
            return None
        if self.adversary is not None:
            return self.adversary if self.adversary in p.enabled_kinds else None
        return draw_tool_noise(p.tool_level, self.rng, p.tool_noise_kinds, failure_prob=p.failure_prob,
                               other_prob=p.other_prob, max_level=p.max_level)

    def __call__(self, db, call: ToolCall, graph) -> tuple[ToolResult, object]:
        if call.tool in self.profile.permanent_failures:
            return ToolResult(TRANSIENT_FAILURE, {"retryable": True}, [], noise=TOOL_FAILURE), db
        result, new_db = execute_tool(db, call, graph)
        key = _call_key(call)
        kind = self._kind(key) if result.ok else None
        if kind is None or kind == LATENCY_SPIKE:
            self._last_key, self._streak = key, 0
        else:
            self._streak = self._streak + 1 if key == self._last_key else 1
            self._last_key = key
        noisy = apply_tool_noise(result, kind, self.rng)
        if kind == TOOL_FAILURE:
            return noisy, db
        return noisy, new_db


def inject_instruction_noise(task, level: int, rng: random.Random, graph=None):
    """Apply instruction noise kinds up to ``level``; the rubric is never touched.

    Obfuscation moves ``level`` explicit facts into the withheld set,
    distractor preferences name unrelated tools, and reordering shuffles the
    order in which steps are described.
    """
    from .tasks import render_description

    if level < 0:
        raise ValueError("level must be >= 0")
    if level == 0:
        return task
    kinds = instruction_kinds(level)
    profile = task.user_profile
    out = task
    if CONSTRAINT_OBFUSCATION in kinds:
        explicit = sorted(task.explicit_facts)
        moved = rng.sample(explicit, min(level, len(explicit)))
        profile = replace(profile, withheld=profile.withheld | frozenset(moved))
        out = replace(out, user_profile=profile)
    if DISTRACTOR_PREFERENCE in kinds and graph is not None:
        used = {s.tool for s in task.plan}
        pool = sorted(t for t in graph.tools if t not in used)
        if pool:
            out = replace(out, distractors=tuple(rng.sample(pool, min(level - 1, len(pool)))))
    if REORDERING in kinds:
        order = list(range(len(task.plan)))
        rng.shuffle(order)
        out = replace(out, step_order=tuple(order))
    if graph is not None:
        out = replace(out, description=render_description(out, graph))
    return out


def verify_solvability(env, task, profile: NoiseProfile, retry_budget: int) -> bool:
    """Check that a perfect, retrying agent completes the task under worst-case noise draws.

    One adversarial replay per enabled tool-noise kind forces that kind on
    every call the consecutive bound allows; a further replay draws noise at
    the maximal rate.
    """
    from .context import ContextPolicy
    from .runtime import EpisodeLimits, ScriptedSolver, run_episode

    if retry_budget < profile.max_consecutive:
        raise ValueError("retry budget below the consecutive-noise bound")
    solver = ScriptedSolver(skill=1.0, noise_handling=1.0, clarification_rate=1.0, retry_budget=retry_budget)
    n = len(task.plan) + len(task.facts)
    limits = EpisodeLimits(max_turns=4 * n * (retry_budget + 1) + 8, max_tokens=10 ** 9)
    policy = ContextPolicy(kind="summary", summary_threshold_tokens=10 ** 8)
    adversaries = list(profile.tool_noise_kinds) or [None]
    for adv in adversaries:
        _, report = run_episode(env, task, solver, profile, policy, limits, random.Random(0), adversary=adv)
        if report.reward != 1:
            return False
    return True


@dataclass
class CurriculumState:
    current_level: int = 0
    promotion_threshold: float = 0.1
    history: list = field(default_factory=list)
    max_level: int = MAX_LEVEL

    def to_dict(self) -> dict:
        return {
            "current_level": self.current_level,
            "promotion_threshold": self.promotion_threshold,
            "history": [list(h) for h in self.history],
            "max_level": self.max_level,
        }


def robustness_gap(clean_pass: float, noisy_pass: float) -> float:
    return clean_pass - noisy_pass


def curriculum_step(state: CurriculumState, clean_pass: float, noisy_pass: float) -> CurriculumState:
    """Record the robustness gap at the current level and promote when the gap is within the threshold."""
    for v in (clean_pass, noisy_pass):
        if not 0.0 <= v <= 1.0:
            raise ValueError("pass rates must be in [0, 1]")
    gap = robustness_gap(clean_pass, noisy_pass)
    history = state.history + [(state.current_level, gap)]
    level = state.current_level
    if gap <= state.promotion_threshold:
        level = min(level + 1, state.max_level)
    return CurriculumState(level, state.promotion_threshold, history, state.max_level)


def emit_profile(state: CurriculumState, env, task, retry_budget: int = 1, **kw) -> NoiseProfile:
    """The profile for the current curriculum level, checked for solvability before it is handed out."""
    profile = NoiseProfile.at_level(state.current_level, max_level=state.max_level, **kw)
    if not verify_solvability(env, task, profile, retry_budget):
        raise RuntimeError(f"level {state.current_level} profile breaks solvability")
    return profile
