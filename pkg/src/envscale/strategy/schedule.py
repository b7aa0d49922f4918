"""Curriculum ordering and the stagnation trigger for self-verification."""

from __future__ import annotations

from collections.abc import Hashable, Iterable, Sequence

import numpy as np

from ..errors import CyclicOrder


def tier_ranks(tiers: Iterable[Hashable], precedence: Iterable[tuple[Hashable, Hashable]] = ()) -> dict:
    """Rank capability tiers so that every ``(before, after)`` pair keeps its order.

    Uses Kahn's algorithm with first-appearance order among ready tiers.
    """
    order = list(dict.fromkeys(tiers))
    edges = list(precedence)
    for a, b in edges:
        for t in (a, b):
            if t not in order:
                order.append(t)
    indeg = {t: 0 for t in order}
    succ: dict = {t: [] for t in order}
    for a, b in set(edges):
        succ[a].append(b)
        indeg[b] += 1
    pos = {t: i for i, t in enumerate(order)}
    ready = sorted((t for t in order if indeg[t] == 0), key=pos.get)
    ranks = {}
    while ready:
        t = ready.pop(0)
        ranks[t] = len(ranks)
        for b in succ[t]:
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
                ready.sort(key=pos.get)
    if len(ranks) != len(order):
        raise CyclicOrder("capability tiers contain a cycle")
    return ranks


def curriculum_order(
    tasks: Sequence[tuple[float, Hashable]], precedence: Iterable[tuple[Hashable, Hashable]] = ()
) -> list[int]:
    """Indices of ``(difficulty, tier)`` tasks: prerequisite tiers first, then easier tasks first. Stable."""
    ranks = tier_ranks((t for _, t in tasks), precedence)
    return sorted(range(len(tasks)), key=lambda i: (ranks[tasks[i][1]], tasks[i][0]))


def windowed_slope(series: Sequence[float], window: int) -> float:
    y = np.asarray(series[-window:], dtype=float)
    x = np.arange(len(y), dtype=float)
    x -= x.mean()
    return float((x * (y - y.mean())).sum() / (x * x).sum())


def self_verification_trigger(reward_history: Sequence[float], window: int, slope_eps: float) -> bool:
    """Fire when the least-squares slope of the last ``window`` rewards falls below ``slope_eps``.

    Returns False until a full window is available.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    if len(reward_history) < window:
        return False
    return windowed_slope(reward_history, window) < slope_eps


def first_trigger(reward_history: Sequence[float], window: int, slope_eps: float) -> int | None:
    """Index of the first point at which the trigger fires, or None."""
    for t in range(window, len(reward_history) + 1):
        if self_verification_trigger(reward_history[:t], window, slope_eps):
            return t - 1
    return None


def verified_reward(task_reward: float, verifier_correct: bool, weight: float = 0.0) -> float:
    """Task reward plus a configurable weight on whether the model's self-check was right."""
    return task_reward + weight * float(verifier_correct)
