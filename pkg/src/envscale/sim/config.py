"""Cluster and workload configuration for the rollout simulator."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InfeasibleConfig


@dataclass(frozen=True)
class PDConfig:
    """Prefill/decode disaggregation. ``prefill_devices`` run prefill and ship KV to decode devices in chunks."""

    prefill_devices: int = 2
    chunk_size: int = 256
    link_rate: float = 50_000.0
    decode_start_policy: str = "last-chunk"


@dataclass(frozen=True)
class ClusterConfig:
    gen_devices: int = 8
    env_workers: int = 64
    device_capacity: int = 4
    initial_capacity: int = 8
    # time of the first load-balancing event; None means the first trainer update
    first_balance_time: float | None = None
    kv_blocks_per_device: int = 4096
    block_tokens: int = 16
    swap_enabled: bool = True
    swap_watermark: float = 0.9
    swap_cost: float = 1e-4
    # allow dropped contexts to be recomputed instead of rejecting over-capacity workloads
    model_recompute: bool = True
    pd: PDConfig | None = None
    max_version_lag: int = 1
    batch_size: int = 64
    train_time: float = 20.0
    # trainer devices lent to generation while the trainer waits for samples
    elastic_devices: int = 0
    num_groups: int = 1
    prefill_time_per_token: float = 2e-5
    decode_time_per_token: float = 0.02
    # relative slowdown per extra concurrent request on a device
    decode_slowdown: float = 0.05
    # async: samples started but not yet trained, as a multiple of batch_size
    max_outstanding_batches: int | None = None

    def validate(self) -> None:
        for name in ("gen_devices", "env_workers", "device_capacity", "initial_capacity", "kv_blocks_per_device",
                     "block_tokens", "batch_size", "num_groups"):
            if getattr(self, name) <= 0:
                raise InfeasibleConfig(f"{name} must be positive")
        if not 0.0 < self.swap_watermark <= 1.0:
            raise InfeasibleConfig("swap watermark must be in (0, 1]")
        if self.max_version_lag < 0 or self.elastic_devices < 0:
            raise InfeasibleConfig("lag and elastic devices must be nonnegative")
        if self.num_groups > self.gen_devices:
            raise InfeasibleConfig("more groups than devices")
        if self.pd is not None and (self.pd.prefill_devices <= 0 or self.pd.chunk_size <= 0 or self.pd.link_rate <= 0):
            raise InfeasibleConfig("prefill/decode settings must be positive")

    @property
    def outstanding_limit(self) -> int:
        k = self.max_outstanding_batches if self.max_outstanding_batches is not None else self.max_version_lag + 1
        return self.batch_size * max(1, k)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        d = dict(d)
        if d.get("pd") is not None:
            d["pd"] = PDConfig(**d["pd"])
        return cls(**d)


@dataclass(frozen=True)
class WorkloadModel:
    num_samples: int = 512
    prompt_tokens: float = 1024.0
    prompt_sigma: float = 0.3
    turns_min: int = 1
    turns_max: int = 4
    decode_tokens: float = 400.0
    decode_sigma: float = 1.2
    max_decode_tokens: int = 16_384
    obs_tokens: float = 200.0
    env_latency: float = 1.0
    env_sigma: float = 1.0
    num_domains: int = 1
    domain_mix: tuple[float, ...] | None = None
    # per-domain multiplier on decode length
    domain_scale: tuple[float, ...] | None = None

    def validate(self) -> None:
        if self.num_samples < 0:
            raise InfeasibleConfig("num_samples must be >= 0")
        if min(self.prompt_tokens, self.decode_tokens, self.env_latency) <= 0 or self.obs_tokens < 0:
            raise InfeasibleConfig("workload sizes must be positive")
        if min(self.prompt_sigma, self.decode_sigma, self.env_sigma) < 0:
            raise InfeasibleConfig("sigmas must be nonnegative")
        if not 1 <= self.turns_min <= self.turns_max:
            raise InfeasibleConfig("bad turn range")
        if self.num_domains < 1:
            raise InfeasibleConfig("need at least one domain")
        for v in (self.domain_mix, self.domain_scale):
            if v is not None and (len(v) != self.num_domains or min(v) <= 0):
                raise InfeasibleConfig("per-domain settings must be positive, one per domain")
        for x in (self.prompt_tokens, self.decode_tokens, self.obs_tokens, self.env_latency):
            if not math.isfinite(x):
                raise InfeasibleConfig("workload parameters must be finite")

    @property
    def domains(self) -> list[str]:
        return [f"d{i}" for i in range(self.num_domains)]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("domain_mix", "domain_scale"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadModel":
        d = dict(d)
        for k in ("domain_mix", "domain_scale"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class SampleSpec:
    index: int
    domain: str
    prompt_tokens: int
    decode_tokens: tuple[int, ...]
    obs_tokens: tuple[int, ...]
    env_latency: tuple[float, ...]

    @property
    def turns(self) -> int:
        return len(self.decode_tokens)

    @property
    def peak_tokens(self) -> int:
        return self.prompt_tokens + sum(self.decode_tokens) + sum(self.obs_tokens[:-1])


def _lognormal(rng: np.random.Generator, median: float, sigma: float) -> float:
    return float(median) if sigma == 0 else float(median * math.exp(sigma * rng.standard_normal()))


def sample_workload(workload: WorkloadModel, seed: int, domains: list[str] | None = None) -> list[SampleSpec]:
    """Draw per-sample turn structure. Sample i only depends on (seed, i), never on the run mode."""
    workload.validate()
    domains = domains or [workload.domains[0]] * workload.num_samples
    scale = dict(zip(workload.domains, workload.domain_scale or [1.0] * workload.num_domains))
    out = []
    for i in range(workload.num_samples):
        rng = np.random.default_rng([seed, i])
        turns = int(rng.integers(workload.turns_min, workload.turns_max + 1))
        prompt = max(1, round(_lognormal(rng, workload.prompt_tokens, workload.prompt_sigma)))
        s = scale[domains[i]]
        dec, obs, lat = [], [], []
        for _ in range(turns):
            dec.append(int(min(workload.max_decode_tokens, max(1, round(s * _lognormal(rng, workload.decode_tokens, workload.decode_sigma))))))
            obs.append(max(0, round(workload.obs_tokens)))
            lat.append(_lognormal(rng, workload.env_latency, workload.env_sigma))
        out.append(SampleSpec(i, domains[i], prompt, tuple(dec), tuple(obs), tuple(lat)))
    return out


@dataclass
class SimMetrics:
    mode: str
    makespan: float
    samples_per_sec: float
    request_load_ratio: float
    mean_staleness: float
    max_staleness: int
    per_domain: dict
    kv_recomputations: int
    swaps_out: int
    swaps_in: int
    transfer_overlap_ratio: float
    generated: int
    trained: int
    rejected_stale: int
    in_flight: int
    train_steps: int
    events: int = 0
    staleness: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("staleness")
        return d
