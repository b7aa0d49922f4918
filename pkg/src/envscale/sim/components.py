"""Scheduling building blocks used by the rollout simulator.

Each piece is usable on its own: staleness admission, the request load ratio,
two-phase request caps, chunked prefill-to-decode KV transfer, watermark
driven KV swapping and smooth weighted round-robin dispatch.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field


@dataclass
class SampleQueueState:
    pending: list = field(default_factory=list)
    current_version: int = 0
    admitted: int = 0
    rejected: int = 0


def staleness_admit(queue: SampleQueueState | None, sample_version: int, current_version: int, max_lag: int) -> bool:
    """Admit a sample iff it is at most ``max_lag`` policy versions behind the trainer."""
    if sample_version < 0 or current_version < 0:
        raise ValueError("versions must be nonnegative")
    ok = current_version - sample_version <= max_lag
    if queue is not None:
        if ok:
            queue.admitted += 1
        else:
            queue.rejected += 1
    return ok


def request_load_ratio(trace: Sequence[Sequence[tuple[float, int]]], capacity: float, t_end: float | None = None,
                       t_start: float = 0.0) -> float:
    """Time-weighted mean of ``active / capacity`` over all devices, clamped to [0, 1].

    ``trace[d]`` is device d's step function as ``(time, active requests)``
    change points; the count holds until the next change point. The window is
    ``[t_start, t_end]``, with ``t_end`` defaulting to the last change point.
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    if not trace:
        return 0.0
    if t_end is None:
        t_end = max((pts[-1][0] for pts in trace if pts), default=t_start)
    span = t_end - t_start
    if span <= 0:
        return 0.0
    total = 0.0
    for pts in trace:
        for i, (t, n) in enumerate(pts):
            nxt = pts[i + 1][0] if i + 1 < len(pts) else t_end
            a, b = max(t, t_start), min(nxt, t_end)
            if b > a:
                total += (b - a) * min(n / capacity, 1.0)
    return min(1.0, max(0.0, total / (span * len(trace))))


def two_phase_caps(sim_time: float, first_balance_time: float | None, initial_cap: int = 8, steady_cap: int = 4) -> int:
    """Per-device request cap: ``initial_cap`` before the first load-balancing event, ``steady_cap`` from it on."""
    if initial_cap <= 0 or steady_cap <= 0:
        raise ValueError("caps must be positive")
    if first_balance_time is not None and sim_time >= first_balance_time:
        return steady_cap
    return initial_cap


@dataclass(frozen=True)
class TransferTimeline:
    compute: tuple[tuple[float, float], ...]
    transfer: tuple[tuple[float, float], ...]
    decode_start: float
    overlap_ratio: float

    @property
    def end(self) -> float:
        return self.transfer[-1][1] if self.transfer else 0.0


def pd_transfer_schedule(
    prompt_tokens: int,
    chunk_size: int,
    link_rate: float,
    decode_start_policy: str = "last-chunk",
    compute_rate: float = math.inf,
    start: float = 0.0,
) -> TransferTimeline:
    """Chunked prefill with KV transfer of chunk i overlapping the compute of chunk i+1.

    Rates are tokens per unit time. The overlap ratio is the share of transfer
    time that runs while prefill compute is still in progress. With
    ``"first-chunk"`` decoding may start once the first chunk has arrived,
    otherwise it waits for the last one.
    """
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    if link_rate <= 0 or compute_rate <= 0:
        raise ValueError("rates must be positive")
    if decode_start_policy not in ("last-chunk", "first-chunk"):
        raise ValueError(f"unknown decode start policy {decode_start_policy!r}")
    sizes = [chunk_size] * (prompt_tokens // chunk_size)
    if prompt_tokens % chunk_size:
        sizes.append(prompt_tokens % chunk_size)
    compute, transfer = [], []
    t_c = t_l = start
    for s in sizes:
        c_end = t_c + s / compute_rate
        compute.append((t_c, c_end))
        t_c = c_end
        l_start = max(c_end, t_l)
        t_l = l_start + s / link_rate
        transfer.append((l_start, t_l))
    compute_end = t_c
    total = sum(b - a for a, b in transfer)
    overlapped = sum(max(0.0, min(b, compute_end) - a) for a, b in transfer)
    ratio = overlapped / total if total > 0 else 0.0
    if not transfer:
        ds = start
    elif decode_start_policy == "first-chunk":
        ds = transfer[0][1]
    else:
        ds = transfer[-1][1]
    return TransferTimeline(tuple(compute), tuple(transfer), ds, ratio)


@dataclass(frozen=True)
class SwapAction:
    context: object
    blocks: int
    cost: float
    # "swap-out" keeps a host copy; "drop" means the context must be recomputed later
    kind: str = "swap-out"


class KVCache:
    """Per-device KV block pool. Idle contexts are kept in least-recently-used order."""

    def __init__(self, capacity_blocks: int):
        if capacity_blocks <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity_blocks
        self.active: dict = {}
        self.idle: OrderedDict = OrderedDict()

    @property
    def used(self) -> int:
        return sum(self.active.values()) + sum(self.idle.values())

    def usage(self, pending_blocks: int = 0) -> float:
        return (self.used + pending_blocks) / self.capacity

    def holds(self, ctx) -> bool:
        return ctx in self.active or ctx in self.idle

    def activate(self, ctx, blocks: int) -> None:
        self.idle.pop(ctx, None)
        self.active[ctx] = blocks

    def park(self, ctx) -> None:
        """Mark an active context idle (most recently used)."""
        self.idle[ctx] = self.active.pop(ctx)
        self.idle.move_to_end(ctx)

    def free(self, ctx) -> None:
        self.active.pop(ctx, None)
        self.idle.pop(ctx, None)


def kv_swap_step(cache: KVCache, watermark: float, pending_blocks: int, swap_cost: float,
                 swap_enabled: bool = True) -> list[SwapAction]:
    """Evict least-recently-used idle contexts while usage (counting ``pending_blocks``) is at or above the watermark.

    Evicted contexts go to the host store at ``swap_cost`` per block, or are
    dropped when swapping is disabled. Active contexts are never evicted, so
    usage can stay above the watermark if only active contexts remain.
    """
    if not 0.0 < watermark <= 1.0:
        raise ValueError("watermark must be in (0, 1]")
    actions = []
    while cache.idle and cache.usage(pending_blocks) >= watermark:
        ctx, blocks = cache.idle.popitem(last=False)
        if swap_enabled:
            actions.append(SwapAction(ctx, blocks, blocks * swap_cost, "swap-out"))
        else:
            actions.append(SwapAction(ctx, blocks, 0.0, "drop"))
    return actions


class SmoothWRR:
    """Smooth weighted round-robin: each pick adds every weight to its credit and charges the winner the total.

    A domain that has waited ``ceil(total / min weight) - 1`` picks is served
    next regardless of credit, which caps every inter-service gap at that
    bound. Credits still charge the same way, so each full cycle of ``total``
    picks serves every domain exactly its weight (integer weights).
    """

    def __init__(self, ratios: Mapping[str, float]):
        if not ratios or min(ratios.values()) <= 0:
            raise ValueError("ratios must be positive")
        self.names = list(ratios)
        self.weights = [float(ratios[n]) for n in self.names]
        self.total = sum(self.weights)
        self.credit = [0.0] * len(self.names)
        self.gap_bound = math.ceil(self.total / min(self.weights))
        self.wait = [0] * len(self.names)

    def next(self) -> str:
        best = 0
        for i, w in enumerate(self.weights):
            self.credit[i] += w
            if self.credit[i] > self.credit[best]:
                best = i
        urgent = [i for i, k in enumerate(self.wait) if k + 1 >= self.gap_bound]
        if urgent:
            best = max(urgent, key=lambda i: (self.credit[i], -i))
        self.credit[best] -= self.total
        for i in range(len(self.wait)):
            self.wait[i] = 0 if i == best else self.wait[i] + 1
        return self.names[best]


def domain_oversample_dispatch(domains: Sequence[str], ratios: Mapping[str, float], state: SmoothWRR | None = None
                               ) -> tuple[str, SmoothWRR]:
    """Next domain to roll out and the updated scheduler state."""
    if state is None:
        state = SmoothWRR({d: ratios[d] for d in domains})
    return state.next(), state
