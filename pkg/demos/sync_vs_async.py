"""Synchronous vs. asynchronous rollout on a long-tailed workload, then a few knobs turned."""

from envscale.sim import ClusterConfig, PDConfig, WorkloadModel, run_simulation

w = WorkloadModel()  # 512 samples, log-normal decode tail
cl = ClusterConfig()  # 8 generation devices

for seed in range(3):
    s = run_simulation(cl, w, "sync", seed)
    a = run_simulation(cl, w, "async", seed)
    print(f"seed {seed}: sync {s.makespan:8.1f}s  async {a.makespan:8.1f}s  "
          f"throughput x{a.samples_per_sec / s.samples_per_sec:.2f}  "
          f"load {s.request_load_ratio:.2f} -> {a.request_load_ratio:.2f}")

print("\nversion lag vs. rejected samples (async)")
for lag in (0, 1, 2, 4):
    m = run_simulation(ClusterConfig(max_version_lag=lag), w, "async", 0)
    print(f"  lag {lag}: makespan {m.makespan:8.1f}  rejected {m.rejected_stale:4d}  mean staleness {m.mean_staleness:.2f}")

print("\nsmall KV pools: swapping vs. dropping")
tight = WorkloadModel(num_samples=64, prompt_tokens=4000, prompt_sigma=0, decode_tokens=500, decode_sigma=0.5,
                      turns_min=3, turns_max=5, obs_tokens=800)
for swap in (True, False):
    m = run_simulation(ClusterConfig(gen_devices=2, batch_size=16, kv_blocks_per_device=1500, swap_enabled=swap),
                       tight, "async", 1)
    print(f"  swap={swap}: recomputations {m.kv_recomputations}, swaps out {m.swaps_out}, makespan {m.makespan:.1f}")

m = run_simulation(ClusterConfig(pd=PDConfig(prefill_devices=2, link_rate=20_000)), w, "async", 0)
print(f"\nprefill/decode split: transfer overlap {m.transfer_overlap_ratio:.3f}, makespan {m.makespan:.1f}")
