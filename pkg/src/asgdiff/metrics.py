"""Quantitative checks: distribution match, cross-patch disagreement, seam quality.

Population (biased) variance convention throughout, matching tensor.stats.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .patching import PatchSet
from .predictors import GaussianPrior


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    baseline: float | None = None
    passed: bool | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.name}: value must be finite, got {self.value}")

    def to_dict(self) -> dict:
        d = {"name": self.name, "value": self.value}
        if self.baseline is not None:
            d["baseline"] = self.baseline
        if self.passed is not None:
            d["pass"] = self.passed
        d.update(self.extra)
        return d


def distribution_check(
    samples: list[np.ndarray], target: GaussianPrior, tolerance: float | None = None
) -> MetricReport:
    """Compare per-coordinate sample moments against a Gaussian prior.

    The headline value is the max over coordinates of |mean - mu|; the
    report also carries the coordinate-averaged deviations and the variance
    errors (both aggregations), which are the statistically tighter checks
    for moderate sample counts.
    """
    if len(samples) < 2:
        raise ShapeError("distribution check needs at least 2 samples")
    stack = np.stack(samples).astype(np.float64)
    mu = target.mu.astype(np.float64)
    mean_err = np.abs(stack.mean(axis=0) - mu)
    var_err = np.abs(stack.var(axis=0) - target.sigma0**2)
    value = float(mean_err.max())
    passed = None
    if tolerance is not None:
        passed = bool(value <= tolerance and float(var_err.max()) <= tolerance)
    return MetricReport(
        name="distribution_check",
        value=value,
        passed=passed,
        extra={
            "mean_err_max": float(mean_err.max()),
            "mean_err_avg": float(mean_err.mean()),
            "var_err_max": float(var_err.max()),
            "var_err_avg": float(var_err.mean()),
            "n_samples": len(samples),
        },
    )


def structure_disagreement(patches: list[np.ndarray] | PatchSet) -> float:
    """Mean over pixel locations of the variance across patches at that location.

    Zero iff all patches are equal; invariant to adding a common constant;
    invariant to patch ordering.
    """
    if isinstance(patches, PatchSet):
        if patches.mode != "interleaved":
            raise ShapeError("structure disagreement is defined on interleaved patches")
        values = patches.patches
    else:
        values = tuple(patches)
    if len(values) < 2:
        raise ShapeError("need at least 2 patches")
    shape = values[0].shape
    for v in values:
        if v.shape != shape:
            raise ShapeError("all patches must share one shape")
    stack = np.stack(values).astype(np.float64)
    return float(stack.var(axis=0).mean())


def _seam_lines(offsets: list[int], tile: int, size: int) -> set[int]:
    """Boundary coordinates b such that the pair (b-1, b) crosses a tile edge."""
    lines: set[int] = set()
    for o in offsets:
        if o > 0:
            lines.add(o)
        if o + tile < size:
            lines.add(o + tile)
    return lines


def seam_discontinuity(hr: np.ndarray, tile_geometry: PatchSet) -> float:
    """Gradient magnitude across tile boundaries relative to the interior.

    Ratio of mean |finite difference| over seam-crossing adjacent pixel
    pairs to the same mean over all other pairs. 1.0 by convention when the
    image is constant (0/0); inf when only the seams carry gradient.
    Scale-invariant by construction.
    """
    if tile_geometry.mode != "spatial":
        raise ShapeError("seam metric needs a spatial tile geometry")
    if hr.shape != tile_geometry.hr_shape:
        raise ShapeError(f"image {hr.shape} does not match geometry {tile_geometry.hr_shape}")
    c, h, w = hr.shape
    ph, pw = tile_geometry.tile_hw
    ys = sorted({oy for oy, _ in tile_geometry.placement})
    xs = sorted({ox for _, ox in tile_geometry.placement})
    seam_y = _seam_lines(ys, ph, h)
    seam_x = _seam_lines(xs, pw, w)

    x64 = hr.astype(np.float64)
    dy = np.abs(np.diff(x64, axis=1))  # pair (y-1, y) lives at index y-1
    dx = np.abs(np.diff(x64, axis=2))

    seam_vals, interior_vals = [], []
    ymask = np.zeros(h - 1, dtype=bool)
    for b in seam_y:
        ymask[b - 1] = True
    xmask = np.zeros(w - 1, dtype=bool)
    for b in seam_x:
        xmask[b - 1] = True
    seam_vals.append(dy[:, ymask, :].ravel())
    interior_vals.append(dy[:, ~ymask, :].ravel())
    seam_vals.append(dx[:, :, xmask].ravel())
    interior_vals.append(dx[:, :, ~xmask].ravel())
    seam_all = np.concatenate(seam_vals)
    interior_all = np.concatenate(interior_vals)

    seam_mean = float(seam_all.mean()) if seam_all.size else 0.0
    interior_mean = float(interior_all.mean()) if interior_all.size else 0.0
    if interior_mean == 0.0:
        return 1.0 if seam_mean == 0.0 else float("inf")
    return seam_mean / interior_mean
