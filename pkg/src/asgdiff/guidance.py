"""Structure guidance, attention-mask weighting, and the asynchronous guidance term.

A designated producer patch (index 0) broadcasts its noise prediction each
iteration; other patches blend toward it, optionally weighted by a [0, 1]
attention mask so high-attention (object) regions receive the guidance and
the background is left alone. The asynchronous variant applies the
previous iteration's message so consumers never wait for the current one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import read_asgt


def _frozen32(a: np.ndarray) -> np.ndarray:
    out = a.astype(np.float32)
    out.flags.writeable = False
    return out


def normalize_attention(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize a nonnegative heatmap to [0, 1].

    A constant map carries no spatial signal, so it degenerates to all-ones
    (plain unmasked guidance) rather than suppressing guidance entirely.
    """
    if raw.ndim != 3 or raw.shape[0] != 1:
        raise ShapeError(f"heatmap must have shape (1, h, w), got {raw.shape}")
    if not np.isfinite(raw).all():
        raise ShapeError("heatmap contains non-finite values")
    if (raw < 0).any():
        raise ShapeError("heatmap contains negative values")
    lo = float(raw.min())
    hi = float(raw.max())
    if hi == lo:
        return _frozen32(np.ones_like(raw))
    return _frozen32((raw - lo) / (hi - lo))


def validate_mask(mask: np.ndarray) -> np.ndarray:
    if mask.ndim != 3 or mask.shape[0] != 1:
        raise ShapeError(f"mask must have shape (1, h, w), got {mask.shape}")
    if not np.isfinite(mask).all() or (mask < 0).any() or (mask > 1).any():
        raise ShapeError("mask values must be finite and inside [0, 1]")
    return mask


def load_mask(path) -> np.ndarray:
    return validate_mask(read_asgt(path))


@dataclass(frozen=True)
class GuidanceConfig:
    """Stage-1 guidance strength and mask policy.

    mask_mode: "off" (unmasked), "one" (constant all-ones mask),
    "attention" (producer's normalized attention heatmap), or "file"
    (fixed mask loaded from mask_path).
    """

    w: float = 2.0
    mask_mode: str = "off"
    mask_path: str | None = None
    stage2_guidance: bool = False

    def __post_init__(self) -> None:
        if self.w < 0:
            raise ValueError(f"guidance scale must be >= 0, got {self.w}")
        if self.mask_mode not in ("off", "one", "attention", "file"):
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        if self.mask_mode == "file" and not self.mask_path:
            raise ValueError("mask_mode 'file' requires mask_path")

    @property
    def enabled(self) -> bool:
        return self.w > 0.0


@dataclass(frozen=True)
class GuidanceMessage:
    """The producer patch's prediction for one iteration, plus its mask.

    Exactly one message per iteration; iteration indices are strictly
    increasing on the broadcast channel. mask is None in unmasked mode.
    """

    iteration: int
    eps0: np.ndarray
    mask: np.ndarray | None = None


def structure_guidance(eps_i: np.ndarray, eps0: np.ndarray, w: float) -> np.ndarray:
    """Blend a patch prediction toward the producer's: eps_i + w * (eps0 - eps_i)."""
    if eps_i.shape != eps0.shape:
        raise ShapeError(f"shape mismatch: {eps_i.shape} vs {eps0.shape}")
    if w == 0.0:
        return eps_i
    return _frozen32(eps_i + np.float32(w) * (eps0 - eps_i))


def masked_structure_guidance(
    eps_i: np.ndarray, eps0: np.ndarray, w: float, mask: np.ndarray
) -> np.ndarray:
    """Mask-weighted blend: eps_i + w * M * (eps0 - eps_i), M broadcast over channels."""
    if eps_i.shape != eps0.shape:
        raise ShapeError(f"shape mismatch: {eps_i.shape} vs {eps0.shape}")
    if mask.shape != (1,) + eps_i.shape[1:]:
        raise ShapeError(f"mask {mask.shape} does not fit eps {eps_i.shape}")
    if w == 0.0:
        return eps_i
    return _frozen32(eps_i + np.float32(w) * mask * (eps0 - eps_i))


def build_async_term(msg: GuidanceMessage, eps_i: np.ndarray, w: float) -> np.ndarray:
    """Guidance term G = w * M * (msg.eps0 - eps_i); the caller applies eps_i + G."""
    if msg.eps0.shape != eps_i.shape:
        raise ShapeError(f"message eps {msg.eps0.shape} vs eps_i {eps_i.shape}")
    diff = msg.eps0 - eps_i
    if msg.mask is not None:
        if msg.mask.shape != (1,) + eps_i.shape[1:]:
            raise ShapeError(f"mask {msg.mask.shape} does not fit eps {eps_i.shape}")
        diff = msg.mask * diff
    return _frozen32(np.float32(w) * diff)


def apply_guidance(msg: GuidanceMessage, eps_i: np.ndarray, w: float) -> np.ndarray:
    """Apply a guidance message to a patch prediction (masked when the message
    carries a mask, plain otherwise)."""
    if w == 0.0:
        return eps_i
    if msg.mask is None:
        return structure_guidance(eps_i, msg.eps0, w)
    return masked_structure_guidance(eps_i, msg.eps0, w, msg.mask)
