"""Aggregation of per-layer cross-attention maps into one heatmap."""
from __future__ import annotations

import numpy as np


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D map with bilinear interpolation (align-corners-false)."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    img = img.astype(np.float64)
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def aggregate_attention(maps: list[np.ndarray], out_hw: tuple[int, int]) -> np.ndarray:
    """Mean of per-layer (or per-head) maps, resized to the latent's spatial dims.

    Accepts 2-D maps of any resolution; each is resized before averaging.
    Output is (1, h, w), nonnegative, float32. Normalization to [0, 1] is
    the client's business, not the bridge's.
    """
    if not maps:
        raise ValueError("attention aggregation needs at least one map")
    out_h, out_w = out_hw
    acc = np.zeros((out_h, out_w), dtype=np.float64)
    for m in maps:
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"attention maps must be 2-D, got shape {m.shape}")
        if (m < 0).any() or not np.isfinite(m).all():
            raise ValueError("attention maps must be nonnegative and finite")
        acc += bilinear_resize(m, out_h, out_w)
    out = (acc / len(maps))[np.newaxis].astype(np.float32)
    return out
