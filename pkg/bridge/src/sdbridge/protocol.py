"""Server-side framing for the eps-prediction wire protocol, version 1.

Frame = 4-byte unsigned little-endian header length, a JSON header
(compact, sorted keys), then an optional raw float32 payload. The byte
layout is the contract with the sampling engine; nothing here depends on
the engine's code.
"""
from __future__ import annotations

import json
import struct

import numpy as np

PROTOCOL_VERSION = 1

_LEN = struct.Struct("<I")


class FrameError(Exception):
    """Recoverable protocol violation on one frame; the connection survives."""


class ConnectionClosed(Exception):
    """Peer went away; the connection loop should end quietly."""


def read_exact(reader, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = reader.read(remaining)
        if not chunk:
            raise ConnectionClosed(f"{remaining} bytes missing")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_frame(reader) -> dict:
    """Read one header; raises FrameError on malformed JSON (frame consumed)."""
    try:
        (n,) = _LEN.unpack(read_exact(reader, 4))
    except ConnectionClosed:
        raise
    raw = read_exact(reader, n)
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FrameError(f"header is not valid JSON: {e}") from None
    if not isinstance(header, dict):
        raise FrameError("header must be a JSON object")
    return header


def send_frame(writer, header: dict, payload: bytes = b"") -> None:
    data = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    writer.write(_LEN.pack(len(data)))
    writer.write(data)
    if payload:
        writer.write(payload)
    writer.flush()


def hello_ack() -> dict:
    return {"ok": True, "version": PROTOCOL_VERSION}


def error_response(message: str) -> dict:
    return {"ok": False, "shape": None, "attention_shape": None, "error": message}


def ok_response(eps: np.ndarray, attention: np.ndarray | None) -> tuple[dict, bytes]:
    payload = np.ascontiguousarray(eps, dtype="<f4").tobytes()
    att_shape = None
    if attention is not None:
        att_shape = [int(d) for d in attention.shape]
        payload += np.ascontiguousarray(attention, dtype="<f4").tobytes()
    header = {
        "ok": True,
        "shape": [int(d) for d in eps.shape],
        "attention_shape": att_shape,
        "error": None,
    }
    return header, payload


def decode_latent(header: dict, payload: bytes) -> np.ndarray:
    shape = header.get("shape")
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(d, int) and d > 0 for d in shape)):
        raise FrameError(f"bad shape field: {shape!r}")
    n = shape[0] * shape[1] * shape[2]
    if len(payload) != 4 * n:
        raise FrameError(f"payload of {len(payload)} bytes does not match shape {shape}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
