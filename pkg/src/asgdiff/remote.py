"""Client side of the eps-prediction wire protocol.

One live connection per worker: a RemotePredictor is single-owner, and the
engine obtains extra connections via clone_for_worker when it runs more
than one worker against a TCP backend.
"""
from __future__ import annotations

import socket

import numpy as np

from . import wire
from .errors import (
    PredictorError,
    RemoteProtocolError,
    RemoteShapeError,
    RemoteTimeoutError,
    VersionMismatchError,
)
from .predictors import NoisePredictor, PredictOutput


class RemotePredictor(NoisePredictor):
    """Talks to a predictor server over a byte stream (TCP socket or pipe pair)."""

    def __init__(self, reader, writer, *, address: tuple[str, int] | None = None,
                 timeout: float | None = None, want_attention: bool = True,
                 sock: socket.socket | None = None):
        self._reader = reader
        self._writer = writer
        self._address = address
        self._timeout = timeout
        self._sock = sock
        self.want_attention = want_attention
        self._handshake()

    @classmethod
    def connect_tcp(cls, host: str, port: int, timeout: float = 10.0,
                    want_attention: bool = True) -> "RemotePredictor":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(timeout)
        return cls(
            sock.makefile("rb"), sock.makefile("wb"),
            address=(host, port), timeout=timeout,
            want_attention=want_attention, sock=sock,
        )

    @classmethod
    def for_address(cls, addr: str, timeout: float = 10.0) -> "RemotePredictor":
        """addr is "host:port"."""
        host, _, port = addr.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"remote address must be host:port, got {addr!r}")
        return cls.connect_tcp(host, int(port), timeout=timeout)

    def _handshake(self) -> None:
        try:
            wire.send_frame(self._writer, wire.hello_header())
            ack = wire.recv_header(self._reader)
        except (socket.timeout, TimeoutError):
            raise RemoteTimeoutError("timed out waiting for handshake") from None
        if not ack.get("ok", False):
            raise RemoteProtocolError(f"handshake rejected: {ack.get('error')}")
        if ack.get("version") != wire.PROTOCOL_VERSION:
            raise VersionMismatchError(
                f"server speaks version {ack.get('version')}, client needs {wire.PROTOCOL_VERSION}"
            )

    def predict(self, x_t: np.ndarray, t: int, cond: str | None = None) -> PredictOutput:
        header, payload = wire.predict_request(x_t, t, cond, self.want_attention)
        try:
            wire.send_frame(self._writer, header, payload)
            resp = wire.recv_header(self._reader)
            body = wire.read_exact(self._reader, wire.response_payload_bytes(resp))
        except (socket.timeout, TimeoutError):
            raise RemoteTimeoutError(f"timed out waiting for prediction at t={t}") from None
        if not resp.get("ok", False):
            raise PredictorError(f"remote predictor error: {resp.get('error')}")
        shape = tuple(resp.get("shape") or ())
        if shape != x_t.shape:
            raise RemoteShapeError(f"response shape {shape} does not match request {x_t.shape}")
        n_eps = 4 * int(np.prod(shape))
        eps = wire.tensor_from_payload(body[:n_eps], shape)
        attention = None
        att_shape = resp.get("attention_shape")
        if att_shape is not None:
            attention = wire.tensor_from_payload(body[n_eps:], att_shape)
        return PredictOutput(eps_hat=eps, attention=attention)

    def clone_for_worker(self, worker_id: int) -> "RemotePredictor":
        if self._address is None:
            raise PredictorError("cannot open extra connections for a pipe-backed predictor")
        host, port = self._address
        return RemotePredictor.connect_tcp(
            host, port, timeout=self._timeout or 10.0, want_attention=self.want_attention
        )

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                stream.close()
            except OSError:
                pass
        if self._sock is not None:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
