from .components import (
    KVCache,
    SampleQueueState,
    SmoothWRR,
    SwapAction,
    TransferTimeline,
    domain_oversample_dispatch,
    kv_swap_step,
    pd_transfer_schedule,
    request_load_ratio,
    staleness_admit,
    two_phase_caps,
)
from .config import ClusterConfig, PDConfig, SampleSpec, SimMetrics, WorkloadModel, sample_workload
from .engine import ASYNC, SYNC, Simulator, run_simulation

__all__ = [
    "ASYNC",
    "SYNC",
    "ClusterConfig",
    "KVCache",
    "PDConfig",
    "SampleQueueState",
    "SampleSpec",
    "SimMetrics",
    "Simulator",
    "SmoothWRR",
    "SwapAction",
    "TransferTimeline",
    "WorkloadModel",
    "domain_oversample_dispatch",
    "kv_swap_step",
    "pd_transfer_schedule",
    "request_load_ratio",
    "run_simulation",
    "sample_workload",
    "staleness_admit",
    "two_phase_caps",
]
