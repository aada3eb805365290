"""Dense float32 latent tensors, seeded Gaussian sampling, and the ASGT file format.

A latent is a rank-3 ``numpy.ndarray`` of shape (channels, height, width),
dtype float32, row-major. Arrays returned by this module are marked
read-only so they can be shared freely between workers.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

RNG_ALGORITHM = "philox4x64-v1"

_MASK64 = (1 << 64) - 1

ASGT_MAGIC = b"ASGT"


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-stream seed: seed XOR a 64-bit integer hash of the stream index."""
    return (seed & _MASK64) ^ _splitmix64(index & _MASK64)


@dataclass
class RngState:
    """Deterministic Gaussian sample stream. Single-owner; never share between workers.

    Identical seed plus identical call sequence yields an identical stream,
    independent of platform and of how many workers the run uses.
    """

    seed: int
    algorithm: str = RNG_ALGORITHM
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}")
        self._gen = np.random.Generator(np.random.Philox(key=self.seed & _MASK64))

    def child(self, index: int) -> "RngState":
        """Independently seeded stream for a numbered sub-task (e.g. a patch)."""
        return RngState(derive_seed(self.seed, index))


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def validate_latent(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Check the latent contract: rank 3, float32, all values finite."""
    if not isinstance(x, np.ndarray) or x.ndim != 3:
        raise ShapeError(f"{name}: expected rank-3 array, got {getattr(x, 'shape', None)}")
    if x.dtype != np.float32:
        raise ShapeError(f"{name}: expected float32, got {x.dtype}")
    if not np.isfinite(x).all():
        raise ShapeError(f"{name}: contains non-finite values")
    return x


def randn(shape: tuple[int, int, int], rng: RngState) -> np.ndarray:
    """I.i.d. standard-normal latent of the given (c, h, w) shape; advances rng."""
    if len(shape) != 3 or any(int(d) < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: all dims must be >= 1")
    out = rng._gen.standard_normal(size=tuple(int(d) for d in shape), dtype=np.float32)
    return _freeze(out)


def axpy_like(a: float, x: np.ndarray, b: float, y: np.ndarray) -> np.ndarray:
    """Elementwise a*x + b*y. Exact passthrough of the selected input for a,b in {0,1}."""
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if a == 1.0 and b == 0.0:
        return x
    if a == 0.0 and b == 1.0:
        return y
    out = (a * x.astype(np.float64) + b * y.astype(np.float64)).astype(np.float32)
    return _freeze(out)


def stats(x: np.ndarray) -> tuple[float, float, float, float]:
    """(mean, population variance, min, max) over all elements.

    Sums use math.fsum, so the result is independent of element order:
    permuting values across patches leaves mean and variance bit-identical.
    """
    if x.size == 0:
        raise ShapeError("stats: empty tensor")
    flat = x.astype(np.float64).ravel()
    n = flat.size
    mean = math.fsum(flat) / n
    var = math.fsum((flat - mean) ** 2) / n
    return mean, var, float(x.min()), float(x.max())


# --- ASGT raw tensor file format -------------------------------------------
# magic "ASGT", three unsigned 32-bit little-endian dims (c, h, w), then
# c*h*w little-endian float32 values in row-major (c, h, w) order.

def asgt_bytes(x: np.ndarray) -> bytes:
    validate_latent(x)
    c, h, w = x.shape
    header = ASGT_MAGIC + struct.pack("<III", c, h, w)
    return header + np.ascontiguousarray(x, dtype="<f4").tobytes()


def parse_asgt(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != ASGT_MAGIC:
        raise ShapeError("not an ASGT payload (bad magic or truncated header)")
    c, h, w = struct.unpack("<III", data[4:16])
    if min(c, h, w) < 1:
        raise ShapeError(f"ASGT dims must all be >= 1, got ({c},{h},{w})")
    n = c * h * w
    if len(data) != 16 + 4 * n:
        raise ShapeError(f"ASGT payload size mismatch: dims ({c},{h},{w}) need {4 * n} bytes")
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(c, h, w)
    return _freeze(arr.astype(np.float32))


def write_asgt(path, x: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(asgt_bytes(x))


def read_asgt(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_asgt(f.read())


def asgt_digest(x: np.ndarray) -> str:
    """sha256 of the ASGT serialization; the run report's latent checksum."""
    return hashlib.sha256(asgt_bytes(x)).hexdigest()
