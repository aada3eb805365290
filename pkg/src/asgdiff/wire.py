"""Length-prefixed framing for the eps-prediction wire protocol.

Frame layout: 4-byte unsigned little-endian header length, the JSON header,
then an optional raw payload of 32-bit little-endian floats. The header
carries enough information (payload_bytes on requests, shapes on responses)
to size the payload, so frames can be streamed over any byte channel:
a TCP socket or a pipe pair.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import RemoteProtocolError

PROTOCOL_VERSION = 1

_LEN = struct.Struct("<I")


def read_exact(reader, n: int) -> bytes:
    """Read exactly n bytes or raise on EOF."""
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = reader.read(remaining)
        if not chunk:
            raise RemoteProtocolError(f"stream closed mid-frame ({remaining} bytes missing)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(writer, header: dict, payload: bytes = b"") -> None:
    data = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    writer.write(_LEN.pack(len(data)))
    writer.write(data)
    if payload:
        writer.write(payload)
    writer.flush()


def recv_header(reader) -> dict:
    (n,) = _LEN.unpack(read_exact(reader, 4))
    raw = read_exact(reader, n)
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as e:
        raise RemoteProtocolError(f"frame header is not valid JSON: {e}") from None
    if not isinstance(header, dict):
        raise RemoteProtocolError("frame header must be a JSON object")
    return header


def frame_bytes(header: dict, payload: bytes = b"") -> bytes:
    data = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    return _LEN.pack(len(data)) + data + payload


def tensor_payload(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x, dtype="<f4").tobytes()


def tensor_from_payload(data: bytes, shape) -> np.ndarray:
    shape = tuple(int(d) for d in shape)
    n = int(np.prod(shape))
    if len(data) != 4 * n:
        raise RemoteProtocolError(f"payload of {len(data)} bytes does not match shape {shape}")
    arr = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    arr.flags.writeable = False
    return arr


def hello_header() -> dict:
    return {"op": "hello", "version": PROTOCOL_VERSION}


def hello_ack_header() -> dict:
    return {"ok": True, "version": PROTOCOL_VERSION}


def predict_request(
    x_t: np.ndarray, t: int, cond: str | None, want_attention: bool
) -> tuple[dict, bytes]:
    payload = tensor_payload(x_t)
    header = {
        "op": "predict",
        "t": int(t),
        "cond": cond,
        "shape": [int(d) for d in x_t.shape],
        "payload_bytes": len(payload),
        "want_attention": bool(want_attention),
    }
    return header, payload


def predict_response(eps: np.ndarray, attention: np.ndarray | None) -> tuple[dict, bytes]:
    payload = tensor_payload(eps)
    att_shape = None
    if attention is not None:
        att_shape = [int(d) for d in attention.shape]
        payload += tensor_payload(attention)
    header = {
        "ok": True,
        "shape": [int(d) for d in eps.shape],
        "attention_shape": att_shape,
        "error": None,
    }
    return header, payload


def error_response(message: str) -> dict:
    return {"ok": False, "shape": None, "attention_shape": None, "error": message}


def response_payload_bytes(header: dict) -> int:
    """Payload size implied by a response header (eps floats then attention floats)."""
    if not header.get("ok", False) or header.get("shape") is None:
        return 0
    n = int(np.prod(header["shape"]))
    att = header.get("attention_shape")
    if att is not None:
        n += int(np.prod(att))
    return 4 * n
