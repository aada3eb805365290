"""Exact, invertible decompositions of an HR latent into LR patches.

Two schemes: interleaved stride-s sub-sampling (stage 1; each patch of an
i.i.d. Gaussian latent is itself i.i.d. Gaussian) and overlapping spatial
tiles with weighted fusion (stage 2). Plus the pixel-interaction baseline
that permutes co-located pixels across interleaved patches.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import RngState, read_asgt, validate_latent, write_asgt


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PatchSet:
    """LR patches plus the exact metadata needed to rebuild the HR latent.

    mode "interleaved": s*s patches, patch (a, b) holds hr[c, a::s, b::s],
    index a*s + b. mode "spatial": tiles at `placement` offsets (oy, ox),
    uniform or Gaussian-window fusion on overlap.
    """

    mode: str
    patches: tuple[np.ndarray, ...]
    placement: tuple[tuple[int, int], ...]
    hr_shape: tuple[int, int, int]
    stride: int = 1            # interleaved sub-sampling factor s
    overlap: int = 0           # spatial mode only
    tile_hw: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self) -> None:
        if self.mode not in ("interleaved", "spatial"):
            raise ValueError(f"unknown patch mode {self.mode!r}")


def interleave_split(hr: np.ndarray, s: int) -> PatchSet:
    """s*s patches by stride-s sub-sampling; patch index 0 is offset (0, 0)."""
    validate_latent(hr, "hr")
    if s < 1:
        raise ShapeError(f"stride must be >= 1, got {s}")
    c, h, w = hr.shape
    if h % s or w % s:
        raise ShapeError(f"spatial dims ({h}, {w}) must be divisible by s={s}")
    patches = []
    placement = []
    for a in range(s):
        for b in range(s):
            patches.append(_frozen(hr[:, a::s, b::s]))
            placement.append((a, b))
    return PatchSet(
        mode="interleaved",
        patches=tuple(patches),
        placement=tuple(placement),
        hr_shape=(c, h, w),
        stride=s,
        tile_hw=(h // s, w // s),
    )


def interleave_merge(ps: PatchSet, values: list[np.ndarray] | None = None) -> np.ndarray:
    """Exact inverse of interleave_split (bitwise)."""
    if ps.mode != "interleaved":
        raise ShapeError(f"expected interleaved patch set, got {ps.mode!r}")
    vals = ps.patches if values is None else values
    s = ps.stride
    if len(vals) != s * s:
        raise ShapeError(f"interleaved set needs {s * s} patches, got {len(vals)}")
    out = np.empty(ps.hr_shape, dtype=np.float32)
    for (a, b), patch in zip(ps.placement, vals):
        if patch.shape != (ps.hr_shape[0],) + ps.tile_hw:
            raise ShapeError(f"patch at ({a},{b}) has shape {patch.shape}")
        out[:, a::s, b::s] = patch
    out.flags.writeable = False
    return out


def _tile_offsets(size: int, tile: int, stride: int) -> list[int]:
    offs = list(range(0, size - tile + 1, stride))
    if offs[-1] != size - tile:
        offs.append(size - tile)  # clamp the last tile to the border
    return offs


def spatial_split(hr: np.ndarray, ph: int, pw: int, overlap: int = 0) -> PatchSet:
    """Tiles of (ph, pw) placed at stride (ph - overlap, pw - overlap), border-clamped."""
    validate_latent(hr, "hr")
    c, h, w = hr.shape
    if not (1 <= ph <= h and 1 <= pw <= w):
        raise ShapeError(f"tile ({ph}, {pw}) must fit inside ({h}, {w})")
    if not 0 <= overlap < min(ph, pw):
        raise ShapeError(f"overlap {overlap} must be in [0, min(ph, pw))")
    ys = _tile_offsets(h, ph, ph - overlap)
    xs = _tile_offsets(w, pw, pw - overlap)
    patches = []
    placement = []
    for oy in ys:
        for ox in xs:
            patches.append(_frozen(hr[:, oy : oy + ph, ox : ox + pw]))
            placement.append((oy, ox))
    return PatchSet(
        mode="spatial",
        patches=tuple(patches),
        placement=tuple(placement),
        hr_shape=(c, h, w),
        overlap=overlap,
        tile_hw=(ph, pw),
    )


def _gaussian_window(ph: int, pw: int) -> np.ndarray:
    ys = np.linspace(-1.0, 1.0, ph)
    xs = np.linspace(-1.0, 1.0, pw)
    gy = np.exp(-(ys**2) / (2 * 0.5**2))
    gx = np.exp(-(xs**2) / (2 * 0.5**2))
    return np.outer(gy, gx)


def spatial_fuse(
    ps: PatchSet, values: list[np.ndarray] | None = None, window: str = "uniform"
) -> np.ndarray:
    """Per-pixel weighted average of all covering tiles (uniform weights by default)."""
    if ps.mode != "spatial":
        raise ShapeError(f"expected spatial patch set, got {ps.mode!r}")
    vals = ps.patches if values is None else values
    if len(vals) != len(ps.placement):
        raise ShapeError(f"need {len(ps.placement)} tiles, got {len(vals)}")
    ph, pw = ps.tile_hw
    if window == "uniform":
        wmap = np.ones((ph, pw), dtype=np.float64)
    elif window == "gaussian":
        wmap = _gaussian_window(ph, pw)
    else:
        raise ValueError(f"unknown fusion window {window!r}")
    acc = np.zeros(ps.hr_shape, dtype=np.float64)
    weight = np.zeros(ps.hr_shape[1:], dtype=np.float64)
    for (oy, ox), tile in zip(ps.placement, vals):
        if tile.shape != (ps.hr_shape[0], ph, pw):
            raise ShapeError(f"tile at ({oy},{ox}) has shape {tile.shape}")
        acc[:, oy : oy + ph, ox : ox + pw] += wmap * tile.astype(np.float64)
        weight[oy : oy + ph, ox : ox + pw] += wmap
    out = (acc / weight).astype(np.float32)
    out.flags.writeable = False
    return out


def extract_tiles(ps: PatchSet, hr: np.ndarray) -> list[np.ndarray]:
    """Re-read the tiles of a spatial patch set from a (fused) HR canvas."""
    if ps.mode != "spatial":
        raise ShapeError(f"expected spatial patch set, got {ps.mode!r}")
    if hr.shape != ps.hr_shape:
        raise ShapeError(f"canvas {hr.shape} does not match {ps.hr_shape}")
    ph, pw = ps.tile_hw
    return [_frozen(hr[:, oy : oy + ph, ox : ox + pw]) for oy, ox in ps.placement]


def pixel_interaction(ps: PatchSet, rng: RngState) -> PatchSet:
    """Randomly permute, per LR pixel location, the pixel vectors across patches.

    One permutation per spatial site, applied to every channel, so the
    multiset of values at each (c, y, x) location is exactly preserved.
    """
    if ps.mode != "interleaved":
        raise ShapeError(f"pixel interaction needs interleaved patches, got {ps.mode!r}")
    n = len(ps.patches)
    if n == 1:
        return ps
    c, lh, lw = ps.patches[0].shape
    stack = np.stack(ps.patches)  # (n, c, lh, lw)
    keys = rng._gen.random(size=(n, lh, lw))
    order = np.argsort(keys, axis=0)  # independent permutation per site
    shuffled = np.take_along_axis(stack, order[:, np.newaxis, :, :], axis=0)
    patches = tuple(_frozen(shuffled[i]) for i in range(n))
    return PatchSet(
        mode="interleaved",
        patches=patches,
        placement=ps.placement,
        hr_shape=ps.hr_shape,
        stride=ps.stride,
        tile_hw=ps.tile_hw,
    )


def dump_patchset(ps: PatchSet, directory) -> None:
    """Write patches as ASGT files plus a JSON manifest, for debugging."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "mode": ps.mode,
        "hr_shape": list(ps.hr_shape),
        "stride": ps.stride,
        "overlap": ps.overlap,
        "tile_hw": list(ps.tile_hw),
        "placement": [list(p) for p in ps.placement],
        "files": [],
    }
    for i, patch in enumerate(ps.patches):
        name = f"patch_{i:03d}.asgt"
        write_asgt(os.path.join(directory, name), patch)
        manifest["files"].append(name)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_patchset(directory) -> PatchSet:
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    patches = tuple(read_asgt(os.path.join(directory, n)) for n in manifest["files"])
    return PatchSet(
        mode=manifest["mode"],
        patches=patches,
        placement=tuple(tuple(p) for p in manifest["placement"]),
        hr_shape=tuple(manifest["hr_shape"]),
        stride=manifest["stride"],
        overlap=manifest["overlap"],
        tile_hw=tuple(manifest["tile_hw"]),
    )
