#!/usr/bin/env python3
"""How the stage split r = T1/(T1+T2) trades global structure for texture.

Too little structure stage and the patches never agree on one layout
(high cross-patch disagreement at the merge point). Too much and the
detail stage has no room to smooth the merged canvas: neighboring pixels
come from different patches whose residual noise never reconciles, which
shows up as checkerboard energy (adjacent-pixel differences) in the
output. A balanced split keeps both ends healthy.
"""
import dataclasses

import numpy as np

from asgdiff.engine import PipelineConfig, boundary_structures, build_run_predictor, run_pipeline, run_stage1
from asgdiff.guidance import GuidanceConfig
from asgdiff.metrics import structure_disagreement
from asgdiff.schedule import make_schedule


def checkerboard_energy(x: np.ndarray) -> float:
    """Mean |adjacent-pixel difference| relative to the value spread."""
    d = (np.abs(np.diff(x, axis=1)).mean() + np.abs(np.diff(x, axis=2)).mean()) / 2
    return float(d / (x.std() + 1e-9))


base = PipelineConfig(
    base_hw=(16, 16),
    target_hw=(32, 32),
    steps=20,
    seed=4,
    executor="sync",
    guidance=GuidanceConfig(w=2.0, mask_mode="attention"),
    predictor={"kind": "gmm"},
)
sched = make_schedule(base.train_steps, base.beta_start, base.beta_end)

print("ratio   structure-disagreement   checkerboard-energy")
for r in (0.1, 0.3, 0.5, 0.7, 0.9, 1.0):
    cfg = dataclasses.replace(base, ratio=r)
    predictor = build_run_predictor(cfg, sched)
    boundary, _ = run_stage1(cfg, predictor, "sync", sched=sched)
    d = structure_disagreement(boundary_structures(cfg, predictor, boundary, sched))
    final, _ = run_pipeline(cfg)
    print(f"{r:5.1f} {d:>22.5f} {checkerboard_energy(final):>21.3f}")

print(
    "\ncheckerboard energy climbs with r: the longer the interleaved stage,"
    "\nthe less room the tile stage has to smooth the merge, and at r=1 the"
    "\noutput is the raw merge of patches whose residual noise never"
    "\nreconciles. (At very low r the disagreement column is deceptively"
    "\nsmall: at that noise level the patches' structure predictions are"
    "\nstill mostly the prior mean -- nothing has been decided yet, which is"
    "\nexactly why low ratios produce chaotic layouts.)"
)
