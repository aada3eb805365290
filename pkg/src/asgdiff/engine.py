"""Two-stage patch-parallel sampling pipeline and its executors.

Stage 1 denoises interleaved LR patches with structure guidance: patch 0
broadcasts its prediction (plus mask) each iteration and every other patch
blends toward it. Stage 2 merges, re-splits into spatial tiles, and
refines with per-iteration overlap-averaged fusion.

Three executors run the same per-patch math:

  sequential     one thread of control, fresh guidance; reference output
  sync           one thread per worker; consumers block for the current
                 iteration's message
  async          consumers apply the previous iteration's message (k-1),
                 so the broadcast latency is hidden inside compute; the
                 first iteration blocks for the fresh message

Staleness is structural (fixed at one iteration), never racy: for a fixed
seed and mode the final latent is bit-reproducible across runs, machine
core counts, and worker counts.
"""
from __future__ import annotations

import dataclasses
import io
import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RunError, ShapeError
from .guidance import GuidanceConfig, GuidanceMessage, apply_guidance, load_mask, normalize_attention
from .patching import (
    PatchSet,
    extract_tiles,
    interleave_merge,
    interleave_split,
    pixel_interaction,
    spatial_fuse,
    spatial_split,
)
from .predictors import DelayedPredictor, NoisePredictor, build_predictor, predict
from .schedule import NoiseSchedule, ddim_step, ddim_timesteps, make_schedule, predict_x0
from .tensor import RngState, asgt_digest, derive_seed, randn

log = logging.getLogger("asgdiff.engine")

EXECUTOR_MODES = ("sequential", "sync", "async")

# seed-derivation domains: stage-1 patch i uses index i directly
_STAGE2_DOMAIN = 1 << 32
_PIXEL_DOMAIN = 2 << 32


@dataclass(frozen=True)
class PipelineConfig:
    """Full description of one run; everything downstream derives from it."""

    base_hw: tuple[int, int] = (32, 32)
    target_hw: tuple[int, int] = (64, 64)
    channels: int = 1
    steps: int = 50
    ratio: float = 0.5
    seed: int = 0
    executor: str = "sequential"
    workers: int = 4
    eta: float = 0.0
    delay_ms: float = 0.0
    comm_ms: float = 0.0
    pixel_interaction: bool = False
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    predictor: dict = field(default_factory=lambda: {"kind": "gaussian"})
    stage2_overlap: int = 0
    stage2_window: str = "uniform"
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # clamp on the step rule's predicted x0; keeps overshooting guidance
    # (w > 1) bounded the way saturating real denoisers are; None disables
    x0_clip: float | None = 8.0

    def __post_init__(self) -> None:
        aliases = {"parallel-sync": "sync", "parallel-async": "async"}
        object.__setattr__(self, "executor", aliases.get(self.executor, self.executor))
        object.__setattr__(self, "base_hw", tuple(int(d) for d in self.base_hw))
        object.__setattr__(self, "target_hw", tuple(int(d) for d in self.target_hw))
        if self.executor not in EXECUTOR_MODES:
            raise ConfigError(f"executor: must be one of {EXECUTOR_MODES}, got {self.executor!r}")
        bh, bw = self.base_hw
        th, tw = self.target_hw
        if bh < 1 or bw < 1:
            raise ConfigError(f"base_hw: dims must be >= 1, got {self.base_hw}")
        if th % bh or tw % bw:
            raise ConfigError(f"target_hw: {self.target_hw} must be integer multiples of {self.base_hw}")
        if th // bh != tw // bw:
            raise ConfigError("target_hw: upscale factor must match on both axes")
        if self.channels < 1:
            raise ConfigError(f"channels: must be >= 1, got {self.channels}")
        if self.steps < 1:
            raise ConfigError(f"steps: must be >= 1, got {self.steps}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"ratio: must be in [0, 1], got {self.ratio}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta: must be in [0, 1], got {self.eta}")
        if self.delay_ms < 0 or self.comm_ms < 0:
            raise ConfigError("delay_ms/comm_ms: must be >= 0")
        if not 0 <= self.stage2_overlap < min(bh, bw):
            raise ConfigError(f"stage2_overlap: must be in [0, min(base_hw)), got {self.stage2_overlap}")
        if self.stage2_window not in ("uniform", "gaussian"):
            raise ConfigError(f"stage2_window: unknown window {self.stage2_window!r}")
        if self.x0_clip is not None and self.x0_clip <= 0:
            raise ConfigError(f"x0_clip: must be positive or null, got {self.x0_clip}")

    @property
    def upscale(self) -> int:
        return self.target_hw[0] // self.base_hw[0]

    @property
    def t1(self) -> int:
        return round(self.ratio * self.steps)

    @property
    def t2(self) -> int:
        return self.steps - self.t1

    @property
    def base_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.base_hw[0], self.base_hw[1])

    @property
    def target_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.target_hw[0], self.target_hw[1])

    def step_pairs(self) -> list[tuple[int, int, int]]:
        """(k, t, t_prev) for the whole run; stage 1 is k = 1..t1."""
        ts = ddim_timesteps(self.train_steps, self.steps)
        chain = ts + [0]
        return [(k, chain[k - 1], chain[k]) for k in range(1, self.steps + 1)]


@dataclass
class TimingRow:
    stage: int
    iteration: int
    worker: int
    patch: int
    compute_ms: float
    wait_ms: float
    comm_ms: float


@dataclass
class RunReport:
    """Timings, staleness log, and final-latent checksum for one run."""

    mode: str
    seed: int
    t1: int
    t2: int
    wall_ms: float = 0.0
    stage1_ms: float = 0.0
    stage2_ms: float = 0.0
    timings: list[TimingRow] = field(default_factory=list)
    staleness: list[dict] = field(default_factory=list)
    checksum: str | None = None
    metrics: list[dict] = field(default_factory=list)

    def consumer_wait_ms(self) -> float:
        """Mean blocked time per guidance application (stage-1 consumer rows)."""
        waits = [r.wait_ms for r in self.timings if r.stage == 1 and r.patch != 0]
        return float(np.mean(waits)) if waits else 0.0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def timing_csv(self) -> str:
        buf = io.StringIO()
        buf.write("mode,iteration,worker,compute_ms,wait_ms\n")
        for r in self.timings:
            buf.write(f"{self.mode},{r.iteration},{r.worker},{r.compute_ms:.3f},{r.wait_ms:.3f}\n")
        return buf.getvalue()


class _Aborted(Exception):
    """Internal: another worker failed; unwind quietly."""


_POISON = object()


class _Channel:
    """Single-producer broadcast with a modeled delivery latency.

    Each worker owns a FIFO; a message becomes readable immediately but is
    only considered delivered comm_s after the send (self-delivery is
    immediate). Receipt order is the send order, which is what makes the
    one-step-stale protocol structural rather than racy.
    """

    def __init__(self, n_workers: int, comm_s: float, fail_event: threading.Event):
        self.queues = [queue.SimpleQueue() for _ in range(n_workers)]
        self.comm_s = comm_s
        self.fail_event = fail_event

    def broadcast(self, sender: int, msg: GuidanceMessage) -> None:
        now = time.perf_counter()
        for wid, q in enumerate(self.queues):
            ready = now if wid == sender else now + self.comm_s
            q.put((msg, ready))

    def poison(self) -> None:
        for q in self.queues:
            q.put(_POISON)

    def receive_until(
        self, wid: int, need: int, last: GuidanceMessage | None
    ) -> tuple[GuidanceMessage, float, float]:
        """Block until the message with iteration == need is held.

        Returns (message, wait_ms, comm_ms). Messages are consumed in send
        order, so this pulls each message at most once per worker.
        """
        t0 = time.perf_counter()
        pulled = 0
        while last is None or last.iteration < need:
            if self.fail_event.is_set():
                raise _Aborted()
            try:
                item = self.queues[wid].get(timeout=0.05)
            except queue.Empty:
                continue
            if item is _POISON:
                raise _Aborted()
            msg, ready = item
            dt = ready - time.perf_counter()
            if dt > 0:
                time.sleep(dt)
            last = msg
            pulled += 1
        if last.iteration != need:
            raise RunError(f"broadcast channel out of order: have {last.iteration}, need {need}")
        wait_ms = (time.perf_counter() - t0) * 1e3
        return last, wait_ms, pulled * self.comm_s * 1e3


@dataclass
class _StageSpec:
    """Everything one stage's executor needs, shared by all three modes."""

    stage: int
    values: list[np.ndarray]            # patch-indexed latents, owner-writes only
    rngs: list[RngState]
    pairs: list[tuple[int, int, int]]   # (k, t, t_prev)
    sched: NoiseSchedule
    eta: float
    guidance: GuidanceConfig
    guided: bool                        # apply guidance to patches > 0 this stage
    fixed_mask: np.ndarray | None
    barrier_action: object | None       # callable(values) run once per iteration after steps
    comm_s: float = 0.0
    x0_clip: float | None = None


def _build_message(k: int, out, gcfg: GuidanceConfig, fixed_mask) -> GuidanceMessage:
    if gcfg.mask_mode == "off":
        mask = None
    elif gcfg.mask_mode == "one":
        mask = np.ones((1,) + out.eps_hat.shape[1:], dtype=np.float32)
        mask.flags.writeable = False
    elif gcfg.mask_mode == "attention":
        if out.attention is None:
            mask = np.ones((1,) + out.eps_hat.shape[1:], dtype=np.float32)
            mask.flags.writeable = False
        else:
            mask = normalize_attention(out.attention)
    else:  # "file"
        mask = fixed_mask
    return GuidanceMessage(iteration=k, eps0=out.eps_hat, mask=mask)


def _process_patch(
    spec: _StageSpec, i: int, k: int, t: int, t_prev: int,
    predictor: NoisePredictor, msg: GuidanceMessage | None,
) -> GuidanceMessage | None:
    """Predict, guide (patches > 0), and step patch i in place. Returns the
    fresh message when i is the producer."""
    out = predict(spec.values[i], t, None, predictor)
    produced = None
    eps = out.eps_hat
    if i == 0:
        if spec.guided:
            produced = _build_message(k, out, spec.guidance, spec.fixed_mask)
    elif spec.guided:
        eps = apply_guidance(msg, eps, spec.guidance.w)
    spec.values[i] = ddim_step(
        spec.values[i], eps, t, t_prev, spec.sched, spec.eta, spec.rngs[i], x0_clip=spec.x0_clip
    )
    return produced


def _run_stage_sequential(spec: _StageSpec, predictor: NoisePredictor, report: RunReport) -> None:
    n = len(spec.values)
    for k, t, t_prev in spec.pairs:
        msg = None
        for i in range(n):
            t0 = time.perf_counter()
            try:
                produced = _process_patch(spec, i, k, t, t_prev, predictor, msg)
            except Exception as e:
                raise RunError(f"worker 0 failed at iteration {k} (patch {i}): {e}") from e
            if produced is not None:
                msg = produced
            report.timings.append(TimingRow(
                stage=spec.stage, iteration=k, worker=0, patch=i,
                compute_ms=(time.perf_counter() - t0) * 1e3, wait_ms=0.0, comm_ms=0.0,
            ))
        if spec.barrier_action is not None:
            spec.barrier_action(spec.values)


def _run_stage_parallel(
    spec: _StageSpec, predictor: NoisePredictor, report: RunReport,
    mode: str, n_workers: int,
) -> None:
    n = len(spec.values)
    W = min(n_workers, n)
    owned = [[i for i in range(n) if i % W == wid] for wid in range(W)]
    fail_event = threading.Event()
    failures: list[tuple[int, int, BaseException]] = []
    fail_lock = threading.Lock()
    chan = _Channel(W, spec.comm_s, fail_event) if spec.guided else None
    rows_per_worker: list[list[TimingRow]] = [[] for _ in range(W)]
    stale_per_worker: list[list[dict]] = [[] for _ in range(W)]

    barrier = None
    if spec.barrier_action is not None:
        def _action():
            spec.barrier_action(spec.values)
        barrier = threading.Barrier(W, action=_action)

    predictors = [predictor if wid == 0 else predictor.clone_for_worker(wid) for wid in range(W)]

    def worker_loop(wid: int) -> None:
        last_msg: GuidanceMessage | None = None
        current_k = 0
        try:
            for k, t, t_prev in spec.pairs:
                current_k = k
                for i in owned[wid]:
                    t0 = time.perf_counter()
                    wait_ms = comm_ms = 0.0
                    out = predict(spec.values[i], t, None, predictors[wid])
                    eps = out.eps_hat
                    if i == 0 and spec.guided:
                        chan.broadcast(wid, _build_message(k, out, spec.guidance, spec.fixed_mask))
                        if mode == "sync" and spec.comm_s > 0:
                            # synchronous broadcast is a collective: the producer
                            # blocks until delivery completes, so the transfer
                            # latency lands on the critical path every iteration
                            time.sleep(spec.comm_s)
                            wait_ms = spec.comm_s * 1e3
                            comm_ms = wait_ms
                    elif i != 0 and spec.guided:
                        need = k if (mode == "sync" or k == spec.pairs[0][0]) else k - 1
                        last_msg, wait_ms, comm_ms = chan.receive_until(wid, need, last_msg)
                        eps = apply_guidance(last_msg, eps, spec.guidance.w)
                        stale_per_worker[wid].append(
                            {"stage": spec.stage, "iteration": k, "patch": i, "used": need}
                        )
                    spec.values[i] = ddim_step(
                        spec.values[i], eps, t, t_prev, spec.sched, spec.eta, spec.rngs[i],
                        x0_clip=spec.x0_clip,
                    )
                    total_ms = (time.perf_counter() - t0) * 1e3
                    rows_per_worker[wid].append(TimingRow(
                        stage=spec.stage, iteration=k, worker=wid, patch=i,
                        compute_ms=total_ms - wait_ms, wait_ms=wait_ms, comm_ms=comm_ms,
                    ))
                if barrier is not None:
                    barrier.wait()
        except (_Aborted, threading.BrokenBarrierError):
            return
        except BaseException as e:
            with fail_lock:
                failures.append((wid, current_k, e))
            fail_event.set()
            if chan is not None:
                chan.poison()
            if barrier is not None:
                barrier.abort()
            return

    threads = [threading.Thread(target=worker_loop, args=(wid,), name=f"asg-w{wid}") for wid in range(W)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()

    if failures:
        wid, k, exc = failures[0]
        raise RunError(f"worker {wid} failed at iteration {k}: {exc}") from exc

    for wid in range(W):
        report.timings.extend(rows_per_worker[wid])
        report.staleness.extend(stale_per_worker[wid])


def _dispatch(spec: _StageSpec, predictor, report: RunReport, cfg: PipelineConfig, executor: str) -> None:
    spec.comm_s = cfg.comm_ms / 1e3
    spec.x0_clip = cfg.x0_clip
    if executor == "sequential":
        _run_stage_sequential(spec, predictor, report)
    else:
        _run_stage_parallel(spec, predictor, report, executor, cfg.workers)


def _load_fixed_mask(cfg: PipelineConfig):
    if cfg.guidance.mask_mode != "file":
        return None
    mask = load_mask(cfg.guidance.mask_path)
    if mask.shape != (1,) + cfg.base_hw:
        raise ConfigError(
            f"guidance.mask_path: mask shape {mask.shape} does not match base (1, {cfg.base_hw[0]}, {cfg.base_hw[1]})"
        )
    return mask


def _make_report(cfg: PipelineConfig, executor: str) -> RunReport:
    return RunReport(mode=executor, seed=cfg.seed, t1=cfg.t1, t2=cfg.t2)


def run_stage1(
    cfg: PipelineConfig,
    predictor: NoisePredictor,
    executor: str | None = None,
    initial: np.ndarray | None = None,
    sched: NoiseSchedule | None = None,
    report: RunReport | None = None,
) -> tuple[np.ndarray, RunReport]:
    """Structure-building stage over interleaved patches; returns the merged
    HR latent at the stage boundary plus the (partial) run report."""
    executor = executor or cfg.executor
    sched = sched or make_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end)
    report = report or _make_report(cfg, executor)
    s = cfg.upscale
    hr0 = initial if initial is not None else randn(cfg.target_shape, RngState(cfg.seed))
    if cfg.t1 == 0:
        return hr0, report

    ps = interleave_split(hr0, s)
    values = list(ps.patches)
    rngs = [RngState(derive_seed(cfg.seed, i)) for i in range(len(values))]
    pairs = cfg.step_pairs()[: cfg.t1]

    barrier_action = None
    if cfg.pixel_interaction:
        pi_rng = RngState(derive_seed(cfg.seed, _PIXEL_DOMAIN))

        def barrier_action(vals, _ps=ps, _rng=pi_rng):
            shuffled = pixel_interaction(
                PatchSet(mode="interleaved", patches=tuple(vals), placement=_ps.placement,
                         hr_shape=_ps.hr_shape, stride=_ps.stride, tile_hw=_ps.tile_hw),
                _rng,
            )
            vals[:] = list(shuffled.patches)

    spec = _StageSpec(
        stage=1, values=values, rngs=rngs, pairs=pairs, sched=sched, eta=cfg.eta,
        guidance=cfg.guidance, guided=cfg.guidance.enabled and len(values) > 1,
        fixed_mask=_load_fixed_mask(cfg), barrier_action=barrier_action,
    )
    t0 = time.perf_counter()
    _dispatch(spec, predictor, report, cfg, executor)
    report.stage1_ms = (time.perf_counter() - t0) * 1e3
    return interleave_merge(ps, spec.values), report


def run_stage2(
    cfg: PipelineConfig,
    predictor: NoisePredictor,
    executor: str | None = None,
    hr_latent: np.ndarray | None = None,
    sched: NoiseSchedule | None = None,
    report: RunReport | None = None,
) -> np.ndarray:
    """Detail-refinement stage: spatial tiles stepped then overlap-fused into
    the HR canvas every iteration."""
    executor = executor or cfg.executor
    if hr_latent is None:
        raise ShapeError("run_stage2 needs the stage-boundary HR latent")
    sched = sched or make_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end)
    report = report or _make_report(cfg, executor)
    if cfg.t2 == 0:
        return hr_latent

    geom = spatial_split(hr_latent, cfg.base_hw[0], cfg.base_hw[1], cfg.stage2_overlap)
    values = list(geom.patches)
    rngs = [RngState(derive_seed(cfg.seed, _STAGE2_DOMAIN + j)) for j in range(len(values))]
    pairs = cfg.step_pairs()[cfg.t1 :]
    canvas = [hr_latent]

    def fuse_action(vals):
        canvas[0] = spatial_fuse(geom, vals, window=cfg.stage2_window)
        vals[:] = extract_tiles(geom, canvas[0])

    spec = _StageSpec(
        stage=2, values=values, rngs=rngs, pairs=pairs, sched=sched, eta=cfg.eta,
        guidance=cfg.guidance,
        guided=cfg.guidance.enabled and cfg.guidance.stage2_guidance and len(values) > 1,
        fixed_mask=_load_fixed_mask(cfg), barrier_action=fuse_action,
    )
    t0 = time.perf_counter()
    _dispatch(spec, predictor, report, cfg, executor)
    report.stage2_ms = (time.perf_counter() - t0) * 1e3
    return canvas[0]


def build_run_predictor(cfg: PipelineConfig, sched: NoiseSchedule) -> NoisePredictor:
    """Backend from the config's predictor spec, with the injected inference delay."""
    base = build_predictor(cfg.predictor, cfg.base_shape, sched)
    if cfg.delay_ms > 0:
        base = DelayedPredictor(base, cfg.delay_ms)
    return base


def boundary_structures(
    cfg: PipelineConfig,
    predictor: NoisePredictor,
    boundary: np.ndarray,
    sched: NoiseSchedule,
) -> list[np.ndarray]:
    """Each interleaved patch's predicted clean structure at the stage boundary.

    This is the object cross-patch consistency is about: the latents still
    carry (deliberately different) residual noise, while the predicted x0
    exposes which structure each patch has committed to.
    """
    ps = interleave_split(boundary, cfg.upscale)
    if cfg.t1 == 0:
        return list(ps.patches)
    t_b = cfg.step_pairs()[cfg.t1 - 1][2]
    if t_b == 0:
        return list(ps.patches)
    structures = []
    for patch in ps.patches:
        eps = predict(patch, t_b, None, predictor).eps_hat
        x0 = predict_x0(patch, eps, t_b, sched)
        if cfg.x0_clip is not None:
            x0 = np.clip(x0, -cfg.x0_clip, cfg.x0_clip)
        structures.append(x0)
    return structures


def run_pipeline(cfg: PipelineConfig) -> tuple[np.ndarray, RunReport]:
    """Run both stages on a shared step schedule; returns the final latent
    and the full run report."""
    sched = make_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end)
    predictor = build_run_predictor(cfg, sched)
    report = _make_report(cfg, cfg.executor)
    t0 = time.perf_counter()
    boundary, report = run_stage1(cfg, predictor, cfg.executor, sched=sched, report=report)
    final = run_stage2(cfg, predictor, cfg.executor, boundary, sched=sched, report=report)
    report.wall_ms = (time.perf_counter() - t0) * 1e3
    report.checksum = asgt_digest(final)
    log.debug("run done: mode=%s wall=%.1fms checksum=%s", cfg.executor, report.wall_ms, report.checksum)
    return final, report


@dataclass
class BenchmarkResult:
    rows: list[dict]
    reports: dict[str, RunReport]

    def table(self) -> str:
        lines = [f"{'mode':<12} {'wall_ms':>10} {'speedup_vs_sequential':>22} {'consumer_wait_ms':>17}"]
        for r in self.rows:
            speed = f"{r['speedup_vs_sequential']:.2f}" if r["speedup_vs_sequential"] else "-"
            lines.append(
                f"{r['mode']:<12} {r['wall_ms']:>10.1f} {speed:>22} {r['consumer_wait_ms']:>17.3f}"
            )
        return "\n".join(lines)

    def csv(self) -> str:
        buf = io.StringIO()
        buf.write("mode,wall_ms,speedup_vs_sequential,consumer_wait_ms,checksum\n")
        for r in self.rows:
            buf.write(
                f"{r['mode']},{r['wall_ms']:.3f},{r['speedup_vs_sequential']:.4f},"
                f"{r['consumer_wait_ms']:.4f},{r['checksum']}\n"
            )
        return buf.getvalue()


def benchmark(cfg: PipelineConfig, modes: list[str] | None = None) -> BenchmarkResult:
    """Run the identical workload under each executor mode and compare."""
    modes = list(modes) if modes else list(EXECUTOR_MODES)
    reports: dict[str, RunReport] = {}
    rows: list[dict] = []
    seq_wall = None
    for mode in modes:
        mode_cfg = dataclasses.replace(cfg, executor=mode)
        _, rep = run_pipeline(mode_cfg)
        reports[mode] = rep
        if mode == "sequential":
            seq_wall = rep.wall_ms
    for mode in modes:
        rep = reports[mode]
        speedup = (seq_wall / rep.wall_ms) if (seq_wall and rep.wall_ms > 0) else 0.0
        rows.append({
            "mode": mode,
            "wall_ms": rep.wall_ms,
            "speedup_vs_sequential": speedup,
            "consumer_wait_ms": rep.consumer_wait_ms(),
            "checksum": rep.checksum,
        })
    return BenchmarkResult(rows=rows, reports=reports)
