"""Task values, rollout budget allocation and oversampling."""

from __future__ import annotations

import heapq
import math
from collections.abc import Sequence
from dataclasses import dataclass

from ..errors import InfeasibleBudget


@dataclass
class TaskValueState:
    task_id: str
    pass_rate: float = 0.0
    attempts: int = 0
    value: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.pass_rate <= 1.0:
            raise ValueError("pass rate must be in [0, 1]")

    def update(self, rewards: Sequence[float], decay: float = 0.0) -> "TaskValueState":
        """Fold a batch of binary rewards into the running pass rate (plain average when ``decay`` is 0)."""
        if not rewards:
            return self
        batch = sum(rewards) / len(rewards)
        n = self.attempts + len(rewards)
        if decay > 0:
            p = (1 - decay) * self.pass_rate + decay * batch if self.attempts else batch
        else:
            p = (self.pass_rate * self.attempts + sum(rewards)) / n
        return TaskValueState(self.task_id, min(1.0, max(0.0, p)), n, self.value)


@dataclass(frozen=True)
class ValueWeights:
    warmup_bonus: float = 0.5
    warmup_attempts: int = 4


def task_value(state: TaskValueState, weights: ValueWeights = ValueWeights()) -> float:
    """``4p(1-p)``, peaking for tasks solved half the time, plus a bonus while a task is barely sampled."""
    p = state.pass_rate
    v = 4.0 * p * (1.0 - p)
    if state.attempts < weights.warmup_attempts:
        v += weights.warmup_bonus
    return v


def harmonic(n: int) -> float:
    return sum(1.0 / k for k in range(1, n + 1))


def allocation_utility(values: Sequence[float], alloc: Sequence[int]) -> float:
    return sum(v * harmonic(n) for v, n in zip(values, alloc))


def allocate_budget(values: Sequence[float], total_rollouts: int, per_task_min: int, per_task_max: int) -> list[int]:
    """Greedy max-heap allocation; the k-th rollout of task i is worth ``v_i / k``.

    Marginal values are diminishing, so the greedy result maximizes
    ``sum(v_i * H(n_i))`` subject to the bounds. Ties go to the lower index.
    """
    n = len(values)
    if per_task_min < 0 or per_task_max < per_task_min:
        raise InfeasibleBudget("per-task bounds are inconsistent")
    if not n * per_task_min <= total_rollouts <= n * per_task_max:
        raise InfeasibleBudget(f"total {total_rollouts} outside [{n * per_task_min}, {n * per_task_max}]")
    alloc = [per_task_min] * n
    heap = [(-values[i] / (per_task_min + 1), i) for i in range(n) if per_task_min < per_task_max]
    heapq.heapify(heap)
    for _ in range(total_rollouts - n * per_task_min):
        _, i = heapq.heappop(heap)
        alloc[i] += 1
        if alloc[i] < per_task_max:
            heapq.heappush(heap, (-values[i] / (alloc[i] + 1), i))
    return alloc


def oversampling_coefficient(pass_rate: float, k_max: int) -> int:
    """Number of duplicate groups for a task: ``clamp(ceil(k_max * (1 - p)), 1, k_max)``."""
    if not 0.0 <= pass_rate <= 1.0:
        raise ValueError("pass rate must be in [0, 1]")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    # round away float noise such as 4 * (1 - 0.75) = 1.0000000000000002
    raw = round(k_max * (1.0 - pass_rate), 9)
    return max(1, min(k_max, math.ceil(raw)))
