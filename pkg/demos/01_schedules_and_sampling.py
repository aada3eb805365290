#!/usr/bin/env python3
"""Forward noising, reverse DDIM sampling, and the analytic predictor.

Walks the core loop end-to-end on a single latent: build a linear-beta
schedule, noise a clean tensor to a chosen level, invert the step exactly,
then run the full 50-step reverse chain with the closed-form Gaussian
predictor and compare the sample statistics against the prior.
"""
import numpy as np

from asgdiff.predictors import OraclePredictor, build_predictor
from asgdiff.schedule import (
    ddim_timesteps,
    forward_diffuse,
    make_schedule,
    predict_x0,
    reverse_sample,
)
from asgdiff.tensor import RngState, randn, stats

sched = make_schedule(1000, 1e-4, 0.02)
print(f"schedule: T={sched.num_steps}, alpha_bar_1={sched.alpha_bar[0]:.6f}, "
      f"alpha_bar_T={sched.alpha_bar[-1]:.3e}")

# --- forward / inverse -------------------------------------------------
x0 = randn((1, 8, 8), RngState(1))
eps = randn((1, 8, 8), RngState(2))
t = 600
x_t = forward_diffuse(x0, t, eps, sched)
x0_back = predict_x0(x_t, eps, t, sched)
rel = np.linalg.norm(x0_back - x0) / np.linalg.norm(x0)
print(f"forward to t={t} then invert with the true eps: relative error {rel:.2e}")

# --- perfect-oracle trajectory -----------------------------------------
ts = ddim_timesteps(1000, 50)
oracle = OraclePredictor(x0, sched)
x_T = forward_diffuse(x0, 1000, randn((1, 8, 8), RngState(3)), sched)
landed = reverse_sample(x_T, oracle, sched, ts)
print(f"50-step deterministic chain with a perfect eps-oracle lands on x0 "
      f"within {np.abs(landed - x0).max():.2e}")

# --- sampling from a known prior ---------------------------------------
mu, sigma0 = 0.5, 3.0
pred = build_predictor({"kind": "gaussian", "mu": mu, "sigma0": sigma0}, (1, 8, 8), sched)
rng = RngState(10)
nrng = RngState(11)
ab_T = sched.alpha_bar_at(1000)
std_T = float(np.sqrt(ab_T * sigma0**2 + 1 - ab_T))
samples = []
for _ in range(400):
    start = (std_T * randn((1, 8, 8), nrng) + np.float32(np.sqrt(ab_T) * mu)).astype(np.float32)
    samples.append(reverse_sample(start, pred, sched, ts))
stack = np.stack(samples)
print(f"400 samples from N({mu}, {sigma0}^2) prior: "
      f"mean {stack.mean():.3f} (target {mu}), var {stack.var(axis=0).mean():.3f} "
      f"(target {sigma0**2}, deterministic 50-step chains run a few % narrow)")

single = samples[0]
print("one sample stats (mean, var, min, max):", tuple(round(v, 3) for v in stats(single)))
