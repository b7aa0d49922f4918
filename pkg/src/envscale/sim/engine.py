"""Discrete-event simulator of synchronous and streaming asynchronous rollout.

Generation devices serve decode requests with processor sharing: every
request on a device advances one token per decode step and a step slows down
as more requests share the device. Between turns a sample's KV context stays
resident on its device until memory pressure evicts it, either to the host
(swap) or for good (recompute at the next turn).

``sync`` runs one batch at a time with a barrier after every turn and after
generation. ``async`` dispatches per sample: a sample moves on as soon as its
own step finishes and the trainer consumes whatever batch is ready, subject
to staleness admission.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field

from ..errors import CapacityInfeasible, InfeasibleConfig
from .components import (
    KVCache,
    SampleQueueState,
    SmoothWRR,
    kv_swap_step,
    pd_transfer_schedule,
    request_load_ratio,
    staleness_admit,
    two_phase_caps,
)
from .config import ClusterConfig, SampleSpec, SimMetrics, WorkloadModel, sample_workload

SYNC = "sync"
ASYNC = "async"


@dataclass
class _Device:
    id: int
    cache: KVCache
    group: int
    elastic: bool = False
    slots: int = 0
    decoding: dict = field(default_factory=dict)
    last: float = 0.0
    epoch: int = 0
    queue: deque = field(default_factory=deque)
    trace: list = field(default_factory=list)


@dataclass
class _Sample:
    spec: SampleSpec
    version: int = 0
    turn: int = 0
    device: int | None = None
    ctx_tokens: int = 0
    # where the KV context lives between turns: None (nothing yet), "device", "host", "dropped"
    kv: str | None = None
    started: float = 0.0
    done: bool = False
    # bumped on preemption so a pending prefill completion is ignored
    attempt: int = 0
    # tokens added to the context by the current turn's prefill
    turn_new: int = 0


class Simulator:
    def __init__(self, cluster: ClusterConfig, workload: WorkloadModel, mode: str, seed: int, log: bool = False):
        if mode not in (SYNC, ASYNC):
            raise InfeasibleConfig(f"unknown mode {mode!r}")
        cluster.validate()
        workload.validate()
        self.c = cluster
        self.w = workload
        self.mode = mode
        self.log_enabled = log
        self.events: list[dict] = []
        mix = workload.domain_mix or (1.0,) * workload.num_domains
        self.dispatch = SmoothWRR(dict(zip(workload.domains, mix)))
        domains = [self.dispatch.next() for _ in range(workload.num_samples)]
        self.specs = sample_workload(workload, seed, domains)
        self._check_capacity()

        n_dev = cluster.gen_devices + (cluster.elastic_devices if mode == ASYNC else 0)
        self.devices = [
            _Device(i, KVCache(cluster.kv_blocks_per_device), i % cluster.num_groups, elastic=i >= cluster.gen_devices)
            for i in range(n_dev)
        ]
        for d in self.devices:
            d.trace.append((0.0, 0))
        self.samples: dict[int, _Sample] = {}
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.version = 0
        self.first_balance = cluster.first_balance_time
        self.queue = SampleQueueState()
        self.env_free = cluster.env_workers
        self.env_wait: deque = deque()
        self.prefill_free = [0.0] * (cluster.pd.prefill_devices if cluster.pd else 0)
        self.training = False
        self.train_pending = False
        self.generated = 0
        self.trained = 0
        self.train_steps = 0
        self.staleness: list[int] = []
        self.recomputes = 0
        self.swaps_out = 0
        self.swaps_in = 0
        self.xfer_total = 0.0
        self.xfer_overlap = 0.0
        self.per_domain: dict[str, int] = {}
        self.last_train_end = 0.0
        # sync bookkeeping
        self.batch: list[int] = []
        self.pending_phase = 0

    # ---- infrastructure

    def _blocks(self, tokens: int) -> int:
        return math.ceil(tokens / self.c.block_tokens)

    def _check_capacity(self) -> None:
        cap = self.c.kv_blocks_per_device
        peaks = sorted((self._blocks(s.peak_tokens) for s in self.specs), reverse=True)
        if peaks and peaks[0] > cap:
            raise CapacityInfeasible(f"a sample needs {peaks[0]} KV blocks, a device holds {cap}")
        if not self.c.swap_enabled and not self.c.model_recompute:
            concurrent = self.c.batch_size if self.mode == SYNC else self.c.outstanding_limit
            demand = sum(peaks[:concurrent])
            if demand > cap * self.c.gen_devices:
                raise CapacityInfeasible(f"resident KV demand {demand} blocks exceeds {cap * self.c.gen_devices}")

    def _push(self, t: float, kind: str, *data) -> None:
        heapq.heappush(self.heap, (t, self.seq, kind, data))
        self.seq += 1

    def _log(self, entity: str, event: str, **payload) -> None:
        if self.log_enabled:
            self.events.append({"t": round(self.now, 9), "entity": entity, "event": event, "payload": payload})

    def _cap(self) -> int:
        return two_phase_caps(self.now, self.first_balance, self.c.initial_capacity, self.c.device_capacity)

    def _trace(self, d: _Device) -> None:
        if d.trace[-1][0] == self.now:
            d.trace[-1] = (self.now, d.slots)
        else:
            d.trace.append((self.now, d.slots))

    def _step_time(self, n: int) -> float:
        return self.c.decode_time_per_token * (1.0 + self.c.decode_slowdown * max(0, n - 1))

    def _advance(self, d: _Device) -> None:
        if d.decoding:
            done = (self.now - d.last) / self._step_time(len(d.decoding))
            for k in d.decoding:
                d.decoding[k] -= done
        d.last = self.now

    def _reschedule(self, d: _Device) -> None:
        d.epoch += 1
        if d.decoding:
            m = max(0.0, min(d.decoding.values()))
            self._push(self.now + m * self._step_time(len(d.decoding)), "decode", d.id, d.epoch)

    # ---- generation

    def _start_sample(self, idx: int) -> None:
        spec = self.specs[idx]
        s = _Sample(spec, version=self.version, started=self.now)
        self.samples[idx] = s
        self.generated += 1
        self._log(f"sample{idx}", "start", version=self.version, domain=spec.domain)
        self._request(s)

    def _usable(self, d: _Device) -> bool:
        return not d.elastic or not (self.training or self.train_pending)

    def _route(self, s: _Sample) -> _Device:
        if s.device is not None and self._usable(self.devices[s.device]):
            return self.devices[s.device]
        group = s.spec.index % self.c.num_groups
        cands = [d for d in self.devices if d.group == group and self._usable(d)]
        return min(cands, key=lambda d: (d.slots + len(d.queue), d.id))

    def _request(self, s: _Sample) -> None:
        d = self._route(s)
        if s.device is not None and s.device != d.id and s.kv == "device":
            # context cannot follow the sample to another device
            self._evict_one(self.devices[s.device], s.spec.index)
        s.device = d.id
        d.queue.append(s.spec.index)
        self._log(f"sample{s.spec.index}", "request", turn=s.turn, device=d.id)
        self._admit(d)

    def _evict_one(self, d: _Device, idx: int) -> None:
        blocks = d.cache.idle.pop(idx)
        s = self.samples[idx]
        if self.c.swap_enabled:
            s.kv = "host"
            self.swaps_out += 1
        else:
            s.kv = "dropped"
        self._log(f"dev{d.id}", "evict", sample=idx, blocks=blocks, kind="swap-out" if self.c.swap_enabled else "drop")

    def _admit(self, d: _Device) -> None:
        while d.queue and d.slots < self._cap() and self._usable(d):
            idx = d.queue[0]
            s = self.samples[idx]
            spec = s.spec
            new = spec.prompt_tokens if s.turn == 0 else spec.obs_tokens[s.turn - 1]
            need = self._blocks(s.ctx_tokens + new + spec.decode_tokens[s.turn])
            resident = d.cache.idle.get(idx, 0) if s.kv == "device" else 0
            if resident:
                d.cache.activate(idx, resident)
            for a in kv_swap_step(d.cache, self.c.swap_watermark, need - resident, self.c.swap_cost, self.c.swap_enabled):
                victim = self.samples[a.context]
                if a.kind == "swap-out":
                    victim.kv = "host"
                    self.swaps_out += 1
                else:
                    victim.kv = "dropped"
                self._log(f"dev{d.id}", "evict", sample=a.context, blocks=a.blocks, kind=a.kind)
            if d.cache.used - resident + need > d.cache.capacity:
                if resident:
                    d.cache.park(idx)
                break
            d.queue.popleft()
            d.cache.activate(idx, need)
            d.slots += 1
            self._trace(d)
            self._begin_prefill(d, s, new)

    def _begin_prefill(self, d: _Device, s: _Sample, new: int) -> None:
        tokens = new
        delay = 0.0
        if s.kv == "dropped":
            tokens = s.ctx_tokens + new
            self.recomputes += 1
            self._log(f"sample{s.spec.index}", "recompute", tokens=tokens)
        elif s.kv == "host":
            blocks = self._blocks(s.ctx_tokens)
            delay = blocks * self.c.swap_cost
            self.swaps_in += 1
            self._log(f"sample{s.spec.index}", "swap-in", blocks=blocks)
        s.kv = "device"
        s.ctx_tokens += new
        s.turn_new = new
        pd = self.c.pd
        if pd is None:
            end = self.now + delay + tokens * self.c.prefill_time_per_token
        else:
            k = min(range(len(self.prefill_free)), key=lambda i: (self.prefill_free[i], i))
            start = max(self.now, self.prefill_free[k])
            tl = pd_transfer_schedule(tokens, pd.chunk_size, pd.link_rate, pd.decode_start_policy,
                                      compute_rate=1.0 / self.c.prefill_time_per_token, start=start)
            self.prefill_free[k] = tl.compute[-1][1] if tl.compute else start
            total = sum(b - a for a, b in tl.transfer)
            self.xfer_total += total
            self.xfer_overlap += tl.overlap_ratio * total
            end = max(tl.decode_start, self.now) + delay
        self._push(end, "prefill", d.id, s.spec.index, s.attempt)

    def _on_prefill(self, dev: int, idx: int, attempt: int) -> None:
        d = self.devices[dev]
        s = self.samples[idx]
        if attempt != s.attempt:
            return
        self._advance(d)
        d.decoding[idx] = float(s.spec.decode_tokens[s.turn])
        self._log(f"sample{idx}", "decode-start", turn=s.turn, device=dev)
        self._reschedule(d)

    def _on_decode(self, dev: int, epoch: int) -> None:
        d = self.devices[dev]
        if epoch != d.epoch:
            return
        self._advance(d)
        finished = sorted(k for k, r in d.decoding.items() if r <= 1e-9 * max(1.0, self.samples[k].spec.decode_tokens[self.samples[k].turn]))
        for idx in finished:
            del d.decoding[idx]
        self._reschedule(d)
        for idx in finished:
            s = self.samples[idx]
            s.ctx_tokens += s.spec.decode_tokens[s.turn]
            d.slots -= 1
            d.cache.park(idx)
            self._log(f"sample{idx}", "decode-end", turn=s.turn, device=dev)
            if self.mode == ASYNC:
                self._env_request(idx)
            else:
                self.pending_phase -= 1
        self._trace(d)
        self._admit(d)
        if d.elastic and self.train_pending:
            self._maybe_start_training()
        if self.mode == SYNC and self.pending_phase == 0 and finished:
            self._sync_env_phase()

    # ---- environment

    def _env_request(self, idx: int) -> None:
        if self.env_free > 0:
            self.env_free -= 1
            s = self.samples[idx]
            self._push(self.now + s.spec.env_latency[s.turn], "env", idx)
        else:
            self.env_wait.append(idx)

    def _on_env(self, idx: int) -> None:
        self.env_free += 1
        if self.env_wait:
            self._env_request(self.env_wait.popleft())
        s = self.samples[idx]
        self._log(f"sample{idx}", "env-end", turn=s.turn)
        s.turn += 1
        if self.mode == SYNC:
            self.pending_phase -= 1
            if self.pending_phase == 0:
                self._sync_next_turn()
            return
        if s.turn < s.spec.turns:
            self._request(s)
        else:
            self._finish(s)

    def _finish(self, s: _Sample) -> None:
        s.done = True
        if s.device is not None:
            self.devices[s.device].cache.free(s.spec.index)
            self._admit(self.devices[s.device])
        self._log(f"sample{s.spec.index}", "finish")
        self.queue.pending.append(s.spec.index)
        if self.mode == ASYNC:
            self._trainer()

    # ---- trainer

    def _outstanding(self) -> int:
        return self.generated - self.trained - self.queue.rejected

    def _fill(self) -> None:
        while self.generated < len(self.specs) and self._outstanding() < self.c.outstanding_limit:
            self._start_sample(self.generated)

    def _trainer(self) -> None:
        if self.training or self.train_pending:
            return
        keep = []
        for idx in self.queue.pending:
            s = self.samples[idx]
            if self.version - s.version > self.c.max_version_lag:
                staleness_admit(self.queue, s.version, self.version, self.c.max_version_lag)
                self._log(f"sample{idx}", "reject-stale", version=s.version, trainer=self.version)
            else:
                keep.append(idx)
        self.queue.pending = keep
        if self.queue.rejected:
            self._fill()
        exhausted = self.generated == len(self.specs) and self._outstanding() == len(self.queue.pending)
        if len(self.queue.pending) >= self.c.batch_size or (exhausted and self.queue.pending):
            self.train_pending = True
            self._maybe_start_training()

    def _maybe_start_training(self) -> None:
        # lent devices go back to the trainer first; their requests restart the turn elsewhere
        for d in self.devices:
            if d.elastic:
                self._reclaim(d)
        self.train_pending = False
        self.training = True
        batch = self.queue.pending[: self.c.batch_size]
        self.queue.pending = self.queue.pending[self.c.batch_size:]
        for idx in batch:
            s = self.samples[idx]
            staleness_admit(self.queue, s.version, self.version, self.c.max_version_lag)
            self.staleness.append(self.version - s.version)
            self.per_domain[s.spec.domain] = self.per_domain.get(s.spec.domain, 0) + 1
        self._log("trainer", "train-start", version=self.version, samples=batch)
        self._push(self.now + self.c.train_time, "train", len(batch))

    def _reclaim(self, d: _Device) -> None:
        self._advance(d)
        moved = []
        for idx in sorted(k for k in d.cache.active):
            s = self.samples[idx]
            d.decoding.pop(idx, None)
            d.cache.active.pop(idx)
            d.slots -= 1
            s.attempt += 1
            s.ctx_tokens -= s.turn_new
            s.kv = "host" if self.c.swap_enabled and s.ctx_tokens else ("dropped" if s.ctx_tokens else None)
            if s.kv == "host":
                self.swaps_out += 1
            self._log(f"sample{idx}", "preempt", turn=s.turn, device=d.id)
            moved.append(s)
        for idx in list(d.cache.idle):
            self._evict_one(d, idx)
        while d.queue:
            moved.append(self.samples[d.queue.popleft()])
        d.epoch += 1
        self._trace(d)
        for s in moved:
            self._request(s)

    def _on_train(self, n: int) -> None:
        self.training = False
        self.version += 1
        self.trained += n
        self.train_steps += 1
        self.last_train_end = self.now
        if self.first_balance is None:
            self.first_balance = self.now
        self._log("trainer", "train-end", version=self.version)
        if self.mode == ASYNC:
            self._fill()
            for d in self.devices:
                self._admit(d)
            self._trainer()
        else:
            self._sync_next_batch()

    # ---- sync orchestration

    def _sync_next_batch(self) -> None:
        start = self.generated
        end = min(len(self.specs), start + self.c.batch_size)
        self.batch = list(range(start, end))
        if not self.batch:
            return
        self.pending_phase = len(self.batch)
        for idx in self.batch:
            self._start_sample(idx)

    def _sync_env_phase(self) -> None:
        active = [i for i in self.batch if not self.samples[i].done and self.samples[i].turn < self.samples[i].spec.turns]
        self.pending_phase = len(active)
        for idx in active:
            self._env_request(idx)

    def _sync_next_turn(self) -> None:
        active = []
        for idx in self.batch:
            s = self.samples[idx]
            if s.done:
                continue
            if s.turn < s.spec.turns:
                active.append(idx)
            else:
                self._finish(s)
        if active:
            self.pending_phase = len(active)
            for idx in active:
                self._request(self.samples[idx])
        else:
            self.queue.pending = [i for i in self.queue.pending]
            self.train_pending = True
            self._maybe_start_training()

    # ---- main loop

    def run(self) -> SimMetrics:
        if self.mode == SYNC:
            self._sync_next_batch()
        else:
            self._fill()
        handlers = {
            "prefill": self._on_prefill,
            "decode": self._on_decode,
            "env": self._on_env,
            "train": self._on_train,
        }
        while self.heap:
            t, _, kind, data = heapq.heappop(self.heap)
            if t < self.now - 1e-12:
                raise RuntimeError("event scheduled in the past")
            self.now = max(self.now, t)
            handlers[kind](*data)
        return self._metrics()

    def _metrics(self) -> SimMetrics:
        makespan = self.last_train_end
        gen = [d for d in self.devices if not d.elastic]
        ratio = request_load_ratio([d.trace for d in gen], self.c.device_capacity, t_end=makespan) if makespan > 0 else 0.0
        in_flight = sum(1 for s in self.samples.values() if not s.done) + len(self.queue.pending)
        st = self.staleness
        return SimMetrics(
            mode=self.mode,
            makespan=makespan,
            samples_per_sec=self.trained / makespan if makespan > 0 else 0.0,
            request_load_ratio=ratio,
            mean_staleness=sum(st) / len(st) if st else 0.0,
            max_staleness=max(st, default=0),
            per_domain=dict(sorted(self.per_domain.items())),
            kv_recomputations=self.recomputes,
            swaps_out=self.swaps_out,
            swaps_in=self.swaps_in,
            transfer_overlap_ratio=self.xfer_overlap / self.xfer_total if self.xfer_total > 0 else 0.0,
            generated=self.generated,
            trained=self.trained,
            rejected_stale=self.queue.rejected,
            in_flight=in_flight,
            train_steps=self.train_steps,
            events=self.seq,
            staleness=list(st),
        )

    def event_log_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)


def run_simulation(cluster: ClusterConfig, workload: WorkloadModel, mode: str, seed: int, log: bool = False):
    """Run one simulation. Returns the metrics, plus the simulator when ``log`` is set (for its event log)."""
    sim = Simulator(cluster, workload, mode, seed, log)
    m = sim.run()
    return (m, sim) if log else m
