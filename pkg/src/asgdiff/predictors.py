"""Noise-prediction backends: analytic closed-form oracles and CFG combination.

Every backend implements ``predict(x_t, t, cond) -> PredictOutput``. The
analytic backends know the generative prior in closed form, so the whole
sampling stack can be verified end-to-end without a neural model. The
``Condition`` token is an opaque string selecting which prior a backend
uses, which lets classifier-free guidance be exercised with two genuinely
different predictions.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import PredictorError, ShapeError
from .schedule import NoiseSchedule
from .tensor import validate_latent

# alpha_bar above this is treated as the signal-dominant limit: eps_hat = 0
# instead of a catastrophically cancelled division.
SIGNAL_DOMINANT_LIMIT = 1.0 - 1e-12


@dataclass(frozen=True)
class PredictOutput:
    """eps_hat plus an optional nonnegative attention heatmap of shape (1, h, w)."""

    eps_hat: np.ndarray
    attention: np.ndarray | None = None


def _frozen32(a: np.ndarray) -> np.ndarray:
    out = a.astype(np.float32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GaussianPrior:
    """x0 ~ N(mu, sigma0^2 I); sigma0 = 0 is the delta prior at mu."""

    mu: np.ndarray
    sigma0: float

    def __post_init__(self) -> None:
        validate_latent(self.mu, "mu")
        if self.sigma0 < 0.0:
            raise ValueError(f"sigma0 must be >= 0, got {self.sigma0}")


@dataclass(frozen=True)
class GmmPrior:
    """Isotropic mixture: components (weight, mu_k, sigma_k), weights summing to 1."""

    components: tuple[tuple[float, np.ndarray, float], ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixture needs at least one component")
        total = 0.0
        shape = self.components[0][1].shape
        for w, mu, sigma in self.components:
            if w <= 0.0:
                raise ValueError("mixture weights must be positive")
            if sigma < 0.0:
                raise ValueError("component sigma must be >= 0")
            validate_latent(mu, "component mu")
            if mu.shape != shape:
                raise ShapeError("all component means must share one shape")
            total += w
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1 within 1e-9, got {total}")


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: eps_uncond + w * (eps_cond - eps_uncond)."""
    if eps_uncond.shape != eps_cond.shape:
        raise ShapeError(f"shape mismatch: {eps_uncond.shape} vs {eps_cond.shape}")
    if w == 0.0:
        return eps_uncond
    if w == 1.0:
        return eps_cond
    return _frozen32(eps_uncond + np.float32(w) * (eps_cond - eps_uncond))


def analytic_gaussian_eps(
    x_t: np.ndarray, t: int, prior: GaussianPrior, sched: NoiseSchedule
) -> np.ndarray:
    """Exact eps-prediction for a Gaussian prior.

    E[x0|x_t] = mu + (sqrt(ab) sigma0^2 / (ab sigma0^2 + 1 - ab)) (x_t - sqrt(ab) mu)
    eps_hat   = (x_t - sqrt(ab) E[x0|x_t]) / sqrt(1 - ab)
    """
    validate_latent(x_t, "x_t")
    if x_t.shape != prior.mu.shape:
        raise ShapeError(f"x_t {x_t.shape} vs mu {prior.mu.shape}")
    ab = sched.alpha_bar_at(t)
    if ab >= SIGNAL_DOMINANT_LIMIT:
        return _frozen32(np.zeros_like(x_t))
    sab = np.sqrt(ab)
    gain = sab * prior.sigma0**2 / (ab * prior.sigma0**2 + 1.0 - ab)
    x64 = x_t.astype(np.float64)
    mu64 = prior.mu.astype(np.float64)
    x0_mean = mu64 + gain * (x64 - sab * mu64)
    eps = (x64 - sab * x0_mean) / np.sqrt(1.0 - ab)
    return _frozen32(eps)


class NoisePredictor:
    """Backend interface; subclasses override predict()."""

    def predict(self, x_t: np.ndarray, t: int, cond: str | None = None) -> PredictOutput:
        raise NotImplementedError

    def clone_for_worker(self, worker_id: int) -> "NoisePredictor":
        """Per-worker instance for backends that hold a connection; default is shared."""
        return self


def predict(
    x_t: np.ndarray, t: int, cond: str | None, predictor: NoisePredictor
) -> PredictOutput:
    """Run a backend and enforce the output contract (shape, finiteness)."""
    out = predictor.predict(x_t, t, cond)
    if out.eps_hat.shape != x_t.shape:
        raise PredictorError(
            f"backend returned eps of shape {out.eps_hat.shape}, input was {x_t.shape}"
        )
    if not np.isfinite(out.eps_hat).all():
        raise PredictorError("backend returned non-finite eps values")
    att = out.attention
    if att is not None:
        if att.shape != (1,) + x_t.shape[1:]:
            raise PredictorError(f"attention shape {att.shape} does not match (1, h, w)")
        if not np.isfinite(att).all() or (att < 0).any():
            raise PredictorError("attention must be nonnegative and finite")
    return out


class ConstantPredictor(NoisePredictor):
    """eps_hat is a constant fill value regardless of the input."""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def predict(self, x_t, t, cond=None):
        eps = np.full(x_t.shape, self.value, dtype=np.float32)
        eps.flags.writeable = False
        return PredictOutput(eps_hat=eps)


def _select_prior(priors: dict, cond: str | None):
    try:
        return priors[cond]
    except KeyError:
        raise PredictorError(f"no prior registered for condition {cond!r}") from None


class AnalyticGaussianPredictor(NoisePredictor):
    """Closed-form predictor for Gaussian priors, one per condition token.

    `priors` maps condition tokens to GaussianPrior; the None key is the
    unconditional prior. Attention is all-ones (a single Gaussian carries
    no spatial saliency).
    """

    def __init__(self, priors: dict[str | None, GaussianPrior], sched: NoiseSchedule):
        if None not in priors:
            raise ValueError("priors must include the unconditional (None) entry")
        self.priors = dict(priors)
        self.sched = sched

    def predict(self, x_t, t, cond=None):
        prior = _select_prior(self.priors, cond)
        eps = analytic_gaussian_eps(x_t, t, prior, self.sched)
        att = np.ones((1,) + x_t.shape[1:], dtype=np.float32)
        att.flags.writeable = False
        return PredictOutput(eps_hat=eps, attention=att)


class GmmPredictor(NoisePredictor):
    """Closed-form predictor for isotropic Gaussian mixtures.

    eps_hat uses exact posterior responsibilities over whole-tensor
    components; the attention heatmap is the per-pixel responsibility of
    the globally dominant component, so guidance masks concentrate where
    that mode's evidence is strongest.
    """

    def __init__(self, priors: dict[str | None, GmmPrior], sched: NoiseSchedule):
        if None not in priors:
            raise ValueError("priors must include the unconditional (None) entry")
        self.priors = dict(priors)
        self.sched = sched

    def predict(self, x_t, t, cond=None):
        validate_latent(x_t, "x_t")
        prior = _select_prior(self.priors, cond)
        ab = self.sched.alpha_bar_at(t)
        x64 = x_t.astype(np.float64)
        if ab >= SIGNAL_DOMINANT_LIMIT:
            eps = np.zeros_like(x_t)
            eps.flags.writeable = False
            att = np.ones((1,) + x_t.shape[1:], dtype=np.float32)
            att.flags.writeable = False
            return PredictOutput(eps_hat=_frozen32(eps), attention=att)
        sab = np.sqrt(ab)

        n = x_t.size
        ks = prior.components
        # global log-responsibilities: log w_k + log N(x_t; sqrt(ab) mu_k, s2_k I)
        log_r = np.empty(len(ks))
        resid = []
        s2s = []
        for i, (w, mu, sigma) in enumerate(ks):
            s2 = ab * sigma**2 + (1.0 - ab)
            d = x64 - sab * mu.astype(np.float64)
            log_r[i] = np.log(w) - 0.5 * n * np.log(2.0 * np.pi * s2) - float((d * d).sum()) / (2.0 * s2)
            resid.append(d)
            s2s.append(s2)
        log_r -= log_r.max()
        r = np.exp(log_r)
        r /= r.sum()

        x0_mean = np.zeros_like(x64)
        for i, (w, mu, sigma) in enumerate(ks):
            gain = sab * sigma**2 / s2s[i]
            x0_mean += r[i] * (mu.astype(np.float64) + gain * resid[i])
        eps = (x64 - sab * x0_mean) / np.sqrt(1.0 - ab)

        # per-pixel responsibility of the dominant mode (channels pooled per pixel)
        k_star = int(np.argmax(r))
        log_rp = np.empty((len(ks),) + x_t.shape[1:])
        c = x_t.shape[0]
        for i, (w, mu, sigma) in enumerate(ks):
            s2 = s2s[i]
            sq = (resid[i] ** 2).sum(axis=0)
            log_rp[i] = np.log(w) - 0.5 * c * np.log(2.0 * np.pi * s2) - sq / (2.0 * s2)
        log_rp -= log_rp.max(axis=0, keepdims=True)
        rp = np.exp(log_rp)
        rp /= rp.sum(axis=0, keepdims=True)
        att = rp[k_star][np.newaxis, :, :]

        return PredictOutput(eps_hat=_frozen32(eps), attention=_frozen32(att))


class CfgPredictor(NoisePredictor):
    """Classifier-free guidance wrapper: two backend calls combined per Eq.-style
    extrapolation from the unconditional toward the conditional prediction."""

    def __init__(self, inner: NoisePredictor, cond: str, guidance_scale: float):
        self.inner = inner
        self.cond = cond
        self.guidance_scale = float(guidance_scale)

    def predict(self, x_t, t, cond=None):
        token = cond if cond is not None else self.cond
        uncond = self.inner.predict(x_t, t, None)
        conded = self.inner.predict(x_t, t, token)
        eps = cfg_combine(uncond.eps_hat, conded.eps_hat, self.guidance_scale)
        return PredictOutput(eps_hat=eps, attention=conded.attention)

    def clone_for_worker(self, worker_id):
        inner = self.inner.clone_for_worker(worker_id)
        if inner is self.inner:
            return self
        return CfgPredictor(inner, self.cond, self.guidance_scale)


class DelayedPredictor(NoisePredictor):
    """Sleeps a fixed duration inside predict() to simulate heavy model inference."""

    def __init__(self, inner: NoisePredictor, delay_ms: float):
        if delay_ms < 0:
            raise ValueError("delay_ms must be >= 0")
        self.inner = inner
        self.delay_ms = float(delay_ms)

    def predict(self, x_t, t, cond=None):
        if self.delay_ms > 0:
            time.sleep(self.delay_ms / 1000.0)
        return self.inner.predict(x_t, t, cond)

    def clone_for_worker(self, worker_id):
        inner = self.inner.clone_for_worker(worker_id)
        if inner is self.inner:
            return self
        return DelayedPredictor(inner, self.delay_ms)


class OraclePredictor(NoisePredictor):
    """Perfect eps-oracle for a known clean latent; exact trajectory tests only."""

    def __init__(self, x0: np.ndarray, sched: NoiseSchedule):
        validate_latent(x0, "x0")
        self.x0 = x0
        self.sched = sched

    def predict(self, x_t, t, cond=None):
        ab = self.sched.alpha_bar_at(t)
        eps = (x_t.astype(np.float64) - np.sqrt(ab) * self.x0.astype(np.float64)) / np.sqrt(
            1.0 - ab
        )
        return PredictOutput(eps_hat=_frozen32(eps))


def corner_bump_means(
    shape: tuple[int, int, int], k: int, amplitude: float
) -> list[np.ndarray]:
    """k spatially distinct Gaussian-bump mean tensors, for mixture defaults."""
    c, h, w = shape
    centers = [
        (0.25, 0.25), (0.75, 0.75), (0.25, 0.75), (0.75, 0.25),
        (0.5, 0.5), (0.5, 0.25), (0.25, 0.5), (0.75, 0.5),
    ]
    if k > len(centers):
        raise ValueError(f"at most {len(centers)} mixture components supported")
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    means = []
    for cy, cx in centers[:k]:
        bump = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.15**2)))
        mu = np.broadcast_to(amplitude * bump, (c, h, w)).astype(np.float32).copy()
        mu.flags.writeable = False
        means.append(mu)
    return means


def build_predictor(spec: dict, shape: tuple[int, int, int], sched: NoiseSchedule) -> NoisePredictor:
    """Construct a backend from a config mapping (kind plus kind-specific keys)."""
    kind = spec.get("kind", "gaussian")
    cfg_w = spec.get("cfg_w")
    token = spec.get("cond", "cond")
    if kind == "constant":
        base: NoisePredictor = ConstantPredictor(float(spec.get("value", 0.0)))
    elif kind == "gaussian":
        mu = np.full(shape, float(spec.get("mu", 0.0)), dtype=np.float32)
        mu.flags.writeable = False
        priors: dict[str | None, GaussianPrior] = {
            None: GaussianPrior(mu=mu, sigma0=float(spec.get("sigma0", 1.0)))
        }
        if cfg_w is not None:
            cmu = np.full(shape, float(spec.get("cond_mu", 1.0)), dtype=np.float32)
            cmu.flags.writeable = False
            priors[token] = GaussianPrior(
                mu=cmu, sigma0=float(spec.get("cond_sigma0", spec.get("sigma0", 1.0)))
            )
        base = AnalyticGaussianPredictor(priors, sched)
    elif kind == "gmm":
        k = int(spec.get("components", 4))
        amplitude = float(spec.get("amplitude", 3.0))
        sigma = float(spec.get("sigma0", 0.25))
        means = corner_bump_means(shape, k, amplitude)
        comps = tuple((1.0 / k, mu, sigma) for mu in means)
        gpriors: dict[str | None, GmmPrior] = {None: GmmPrior(comps)}
        if cfg_w is not None:
            # conditional prior concentrates on the first mode
            gpriors[token] = GmmPrior(((1.0, means[0], sigma),))
        base = GmmPredictor(gpriors, sched)
    elif kind.startswith("remote:"):
        from .remote import RemotePredictor

        base = RemotePredictor.for_address(kind.split(":", 1)[1])
    else:
        raise ValueError(f"unknown predictor kind {kind!r}")

    if cfg_w is not None:
        base = CfgPredictor(base, token, float(cfg_w))
    return base
