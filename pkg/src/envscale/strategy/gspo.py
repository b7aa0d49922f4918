"""Sequence-level clipped policy objective with group-normalized advantages."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

ADV_EPS = 1e-8


@dataclass(frozen=True)
class TrajectoryGroup:
    """Rollouts of one prompt: rewards and summed log-likelihoods under the old and new policy."""

    rewards: tuple[float, ...]
    old_logp: tuple[float, ...]
    new_logp: tuple[float, ...]
    token_counts: tuple[int, ...]

    def __post_init__(self):
        n = len(self.rewards)
        if not (len(self.old_logp) == len(self.new_logp) == len(self.token_counts) == n):
            raise ValueError("group fields must have equal length")
        if n < 2:
            raise ValueError("a group needs at least 2 trajectories")
        if min(self.token_counts) < 1:
            raise ValueError("token counts must be >= 1")

    def __len__(self) -> int:
        return len(self.rewards)


def sequence_importance_ratio(new_logp_sum: float, old_logp_sum: float, token_count: int) -> float:
    """Length-normalized likelihood ratio ``exp((new - old) / T)``."""
    if token_count < 1:
        raise ValueError("token_count must be >= 1")
    if not (math.isfinite(new_logp_sum) and math.isfinite(old_logp_sum)):
        raise ValueError("log-likelihoods must be finite")
    return math.exp((new_logp_sum - old_logp_sum) / token_count)


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """``(r - mean) / max(std, 1e-8)`` with the population standard deviation."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("need at least 2 rewards")
    mean = r.mean()
    std = r.std()
    return (r - mean) / max(std, ADV_EPS)


def clipped_term(s: float, adv: float, epsilon: float) -> float:
    return min(s * adv, min(max(s, 1.0 - epsilon), 1.0 + epsilon) * adv)


def gspo_objective(groups: Sequence[TrajectoryGroup], epsilon: float) -> float:
    """Mean over groups of the mean clipped surrogate within each group."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must be in (0, 1)")
    if not groups:
        return 0.0
    per_group = []
    for g in groups:
        adv = group_advantages(g.rewards)
        terms = [
            clipped_term(sequence_importance_ratio(n, o, t), a, epsilon)
            for n, o, t, a in zip(g.new_logp, g.old_logp, g.token_counts, adv)
        ]
        per_group.append(sum(terms) / len(terms))
    return float(sum(per_group) / len(per_group))
