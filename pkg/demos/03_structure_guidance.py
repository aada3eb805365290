#!/usr/bin/env python3
"""Why structure guidance exists: cross-patch consistency on a mixture prior.

Without guidance, the four interleaved patches each commit to whichever
mixture mode their own noise favors, so the assembled image mixes
incompatible structures (the repetition/inconsistency failure). Blending
every patch's prediction toward patch 0's (weighted by the attention mask)
makes them all commit to the same mode.
"""
import dataclasses

import numpy as np

from asgdiff.engine import PipelineConfig, boundary_structures, build_run_predictor, run_stage1
from asgdiff.guidance import GuidanceConfig
from asgdiff.metrics import structure_disagreement
from asgdiff.patching import interleave_split
from asgdiff.schedule import make_schedule

base = PipelineConfig(
    base_hw=(16, 16),
    target_hw=(32, 32),
    steps=20,
    ratio=0.5,
    seed=3,
    executor="sync",
    predictor={"kind": "gmm"},  # four spatially distinct modes
)
sched = make_schedule(base.train_steps, base.beta_start, base.beta_end)

print("guidance  mask       structure-disagreement   latent-dispersion")
for w, mask in [(0.0, "off"), (2.0, "off"), (2.0, "one"), (2.0, "attention")]:
    cfg = dataclasses.replace(base, guidance=GuidanceConfig(w=w, mask_mode=mask))
    predictor = build_run_predictor(cfg, sched)
    boundary, _ = run_stage1(cfg, predictor, "sync", sched=sched)
    d_struct = structure_disagreement(boundary_structures(cfg, predictor, boundary, sched))
    d_latent = structure_disagreement(interleave_split(boundary, cfg.upscale))
    print(f"w={w:<6} {mask:<10} {d_struct:>20.5f} {d_latent:>19.3f}")

print(
    "\nwith w=2 the predicted structures agree to ~1e-3 while the raw latents"
    "\nstill carry their (deliberately different) residual noise -- consistency"
    "\nis a property of the committed structure, not of the noisy latents"
)

# what the mask looks like: per-pixel responsibility of the dominant mode
cfg = dataclasses.replace(base, guidance=GuidanceConfig(w=2.0, mask_mode="attention"))
predictor = build_run_predictor(cfg, sched)
patch0 = interleave_split(np.asarray(boundary), cfg.upscale).patches[0]
att = predictor.predict(patch0, 500).attention
print(f"\nattention heatmap over patch 0: shape {att.shape}, "
      f"range [{att.min():.2f}, {att.max():.2f}], mean {att.mean():.2f}")
