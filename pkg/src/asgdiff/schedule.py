"""Noise schedules and the forward/reverse diffusion step rules.

The cumulative signal coefficient alpha_bar_t drives both directions:

    forward:  x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
    reverse:  deterministic (eta=0) or stochastic (eta>0) steps along a
              decreasing timestep subsequence, with alpha_bar_0 == 1 so the
              final step returns the predicted x0 exactly.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import RngState, validate_latent

DEFAULT_TRAIN_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variance increments beta_t and cumulative alpha_bar_t, t = 1..T."""

    num_steps: int
    beta: np.ndarray       # float64, beta[t-1] is beta_t
    alpha_bar: np.ndarray  # float64, alpha_bar[t-1] is alpha_bar_t

    def __post_init__(self) -> None:
        T = self.num_steps
        if self.beta.shape != (T,) or self.alpha_bar.shape != (T,):
            raise ValueError("schedule arrays must have length num_steps")
        ab = self.alpha_bar
        if not (np.all(ab > 0.0) and np.all(ab < 1.0)):
            raise ValueError("alpha_bar must lie strictly inside (0, 1)")
        if not np.all(np.diff(ab) < 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        # independent product re-check, 1e-6 relative
        prod = 1.0
        for t in range(T):
            prod *= 1.0 - float(self.beta[t])
            if abs(prod - float(ab[t])) > 1e-6 * abs(prod):
                raise ValueError(f"alpha_bar[{t + 1}] inconsistent with product of (1 - beta)")
        self.beta.flags.writeable = False
        self.alpha_bar.flags.writeable = False

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t for t in 0..T, with the alpha_bar_0 = 1 convention."""
        if not 0 <= t <= self.num_steps:
            raise ValueError(f"step {t} outside 0..{self.num_steps}")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(
    T: int = DEFAULT_TRAIN_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear beta ramp over T steps; alpha_bar_t = prod_{s<=t} (1 - beta_s)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(num_steps=T, beta=beta, alpha_bar=alpha_bar)


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise x0 to level t: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    validate_latent(x0, "x0")
    validate_latent(eps, "eps")
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {x0.shape} vs eps {eps.shape}")
    if not 1 <= t <= sched.num_steps:
        raise ValueError(f"step {t} outside 1..{sched.num_steps}")
    ab = sched.alpha_bar_at(t)
    out = np.sqrt(ab) * x0.astype(np.float64) + np.sqrt(1.0 - ab) * eps.astype(np.float64)
    out = out.astype(np.float32)
    out.flags.writeable = False
    return out


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Invert the forward map: x0_pred = (x_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)."""
    ab = sched.alpha_bar_at(t)
    x0 = (x_t.astype(np.float64) - np.sqrt(1.0 - ab) * eps_hat.astype(np.float64)) / np.sqrt(ab)
    x0 = x0.astype(np.float32)
    x0.flags.writeable = False
    return x0


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
    rng: RngState | None = None,
    x0_clip: float | None = None,
) -> np.ndarray:
    """One reverse step from level t to level t_prev (t_prev = 0 ends the chain).

    With eta = 0 the step is deterministic; at t_prev = 0 it returns the
    predicted x0 exactly. eta > 0 adds the DDPM-style variance term and
    draws z from rng. x0_clip, when set, clamps the predicted x0 to
    [-x0_clip, x0_clip] before re-noising (the usual clip-sample guard);
    it never engages while the prediction stays inside that range.
    """
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"x_t {x_t.shape} vs eps_hat {eps_hat.shape}")
    if not 0 <= t_prev < t <= sched.num_steps:
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must be in [0, 1], got {eta}")

    ab_t = sched.alpha_bar_at(t)
    ab_p = sched.alpha_bar_at(t_prev)

    x64 = x_t.astype(np.float64)
    e64 = eps_hat.astype(np.float64)
    x0_pred = (x64 - np.sqrt(1.0 - ab_t) * e64) / np.sqrt(ab_t)
    if x0_clip is not None:
        x0_pred = np.clip(x0_pred, -x0_clip, x0_clip)

    sigma = eta * np.sqrt((1.0 - ab_p) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_p)
    out = np.sqrt(ab_p) * x0_pred + np.sqrt(max(1.0 - ab_p - sigma**2, 0.0)) * e64
    if sigma > 0.0:
        if rng is None:
            raise ValueError("eta > 0 requires an rng for the noise draw")
        z = rng._gen.standard_normal(size=x_t.shape, dtype=np.float32)
        out = out + sigma * z.astype(np.float64)
    out = out.astype(np.float32)
    out.flags.writeable = False
    return out


def ddim_timesteps(T: int, S: int) -> list[int]:
    """Decreasing subsequence of S timesteps, uniform over 1..T, starting at T.

    The reverse pass visits ts[0] > ts[1] > ... > ts[S-1] and finishes with
    a step to level 0.
    """
    if not 1 <= S <= T:
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    ts = sorted({max(1, round(T * i / S)) for i in range(1, S + 1)}, reverse=True)
    if len(ts) != S:
        raise ValueError(f"T={T} cannot be subsampled to {S} distinct steps")
    return ts


def reverse_sample(
    x_T: np.ndarray,
    predictor,
    sched: NoiseSchedule,
    timesteps: list[int],
    eta: float = 0.0,
    rng: RngState | None = None,
    cond: str | None = None,
) -> np.ndarray:
    """Run the full reverse chain over `timesteps` (plus the final step to 0)."""
    x = x_T
    chain = list(timesteps) + [0]
    for t, t_prev in zip(chain[:-1], chain[1:]):
        eps_hat = predictor.predict(x, t, cond).eps_hat
        x = ddim_step(x, eps_hat, t, t_prev, sched, eta=eta, rng=rng)
    return x


def schedule_csv(sched: NoiseSchedule) -> str:
    """CSV dump (t, beta_t, alpha_bar_t) for inspection."""
    buf = io.StringIO()
    buf.write("t,beta_t,alpha_bar_t\n")
    for t in range(1, sched.num_steps + 1):
        buf.write(f"{t},{sched.beta[t - 1]:.10g},{sched.alpha_bar[t - 1]:.10g}\n")
    return buf.getvalue()
