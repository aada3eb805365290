"""Zero-dependency image export for visual inspection of latents."""
from __future__ import annotations

import numpy as np

from .tensor import validate_latent


def _channel_to_u8(ch: np.ndarray) -> np.ndarray:
    lo = float(ch.min())
    hi = float(ch.max())
    if hi == lo:
        return np.zeros(ch.shape, dtype=np.uint8)
    return np.clip(np.rint((ch - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, x: np.ndarray) -> str:
    """Write an 8-bit netpbm visualization, each channel min-max mapped.

    Single-channel latents become grayscale PGM (P5); otherwise PPM (P6)
    from the first three channels, repeating the last one when fewer exist.
    Returns the path actually written (extension follows the format).
    """
    validate_latent(x)
    c, h, w = x.shape
    path = str(path)
    if c == 1:
        if not path.endswith(".pgm"):
            path = path.rsplit(".", 1)[0] + ".pgm"
        body = _channel_to_u8(x[0])
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode())
            f.write(body.tobytes())
        return path
    if not path.endswith(".ppm"):
        path = path.rsplit(".", 1)[0] + ".ppm"
    chans = [_channel_to_u8(x[min(i, c - 1)]) for i in range(3)]
    rgb = np.stack(chans, axis=-1)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())
    return path
