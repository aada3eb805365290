"""Patch-parallel diffusion sampling with asynchronous structure guidance.

A numpy-backed engine that denoises a high-resolution latent as parallel
low-resolution patches: stage 1 builds a globally consistent structure by
blending every patch's noise prediction toward patch 0's (optionally
weighted by an attention mask), stage 2 refines spatial tiles with
overlap-averaged fusion. The guidance broadcast can run synchronously or
one iteration stale, which hides the communication latency inside compute.
"""

from .engine import (
    BenchmarkResult,
    PipelineConfig,
    RunReport,
    benchmark,
    run_pipeline,
    run_stage1,
    run_stage2,
)
from .errors import (
    ConfigError,
    PredictorError,
    RemoteProtocolError,
    RemoteShapeError,
    RemoteTimeoutError,
    RunError,
    ShapeError,
    VersionMismatchError,
)
from .guidance import (
    GuidanceConfig,
    GuidanceMessage,
    build_async_term,
    masked_structure_guidance,
    normalize_attention,
    structure_guidance,
)
from .metrics import MetricReport, distribution_check, seam_discontinuity, structure_disagreement
from .patching import (
    PatchSet,
    interleave_merge,
    interleave_split,
    pixel_interaction,
    spatial_fuse,
    spatial_split,
)
from .predictors import (
    AnalyticGaussianPredictor,
    CfgPredictor,
    ConstantPredictor,
    GaussianPrior,
    GmmPredictor,
    GmmPrior,
    NoisePredictor,
    OraclePredictor,
    PredictOutput,
    analytic_gaussian_eps,
    cfg_combine,
    predict,
)
from .remote import RemotePredictor
from .schedule import (
    NoiseSchedule,
    ddim_step,
    ddim_timesteps,
    forward_diffuse,
    make_schedule,
    predict_x0,
    reverse_sample,
)
from .tensor import RngState, axpy_like, derive_seed, randn, read_asgt, stats, write_asgt

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
