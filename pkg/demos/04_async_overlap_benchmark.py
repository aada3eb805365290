#!/usr/bin/env python3
"""Hiding the guidance broadcast inside compute: sync vs async executors.

Each predict call sleeps 20 ms (simulating heavy model inference) and the
guidance broadcast costs 2 ms (simulated transfer). The synchronous
executor pays the transfer every iteration; the asynchronous one applies
the previous iteration's message, so consumers never block on the current
broadcast and the transfer disappears from the critical path.

Determinism is structural: the async run applies message k-1 at iteration
k by construction, so identical seeds give bit-identical latents no matter
how threads are scheduled.
"""
from asgdiff.engine import PipelineConfig, benchmark
from asgdiff.guidance import GuidanceConfig

cfg = PipelineConfig(
    base_hw=(8, 8),
    target_hw=(16, 16),   # 4 interleaved patches for stage 1
    steps=50,
    ratio=0.5,
    seed=5,
    workers=4,
    delay_ms=20.0,
    comm_ms=2.0,
    guidance=GuidanceConfig(w=2.0, mask_mode="attention"),
    predictor={"kind": "gaussian"},
)

print("running sequential, sync, async on identical work (this takes ~7s)...\n")
result = benchmark(cfg)
print(result.table())

rows = {r["mode"]: r for r in result.rows}
print(f"\nasync applies guidance from the previous iteration, so its consumers")
print(f"waited {rows['async']['consumer_wait_ms']:.3f} ms/iteration vs "
      f"{rows['sync']['consumer_wait_ms']:.3f} ms for sync "
      f"(the 2 ms broadcast, now hidden inside the 20 ms compute).")

stale = result.reports["async"].staleness
print(f"\nstaleness log (first 5 of {len(stale)} entries):")
for entry in stale[:5]:
    print(f"  iteration {entry['iteration']:>2} patch {entry['patch']} "
          f"used message {entry['used']}")
