"""Conformance of the echo-mode bridge against the frozen wire fixtures.

The golden byte files define the interface contract with the sampling
engine's client; the stdio test replays them through a real subprocess
byte-for-byte.
"""
import io
import json
import socket
import struct
import subprocess
import sys

import numpy as np
import pytest

from sdbridge import protocol
from sdbridge.backends import EchoBackend
from sdbridge.server import BridgeConfig, build_backend, serve_connection


def frame(header: dict, payload: bytes = b"") -> bytes:
    data = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    return struct.pack("<I", len(data)) + data + payload


def run_connection(incoming: bytes) -> bytes:
    """Feed bytes through an in-process echo connection; returns the replies."""
    out = io.BytesIO()
    serve_connection(io.BytesIO(incoming), out, EchoBackend())
    return out.getvalue()


class TestGoldenConformance:
    def test_stdio_subprocess_round_trip_byte_for_byte(self, datadir):
        request = (datadir / "golden_hello.bin").read_bytes() + (
            datadir / "golden_predict_request.bin"
        ).read_bytes()
        expected = (datadir / "golden_hello_ack.bin").read_bytes() + (
            datadir / "golden_echo_response.bin"
        ).read_bytes()
        proc = subprocess.run(
            [sys.executable, "-m", "sdbridge", "--echo"],
            input=request,
            stdout=subprocess.PIPE,
            timeout=30,
        )
        assert proc.returncode == 0
        assert proc.stdout == expected

    def test_in_process_round_trip(self, datadir):
        request = (datadir / "golden_hello.bin").read_bytes() + (
            datadir / "golden_predict_request.bin"
        ).read_bytes()
        expected = (datadir / "golden_hello_ack.bin").read_bytes() + (
            datadir / "golden_echo_response.bin"
        ).read_bytes()
        assert run_connection(request) == expected


class TestMalformedFrames:
    def read_responses(self, raw: bytes) -> list[dict]:
        buf = io.BytesIO(raw)
        out = []
        while True:
            head = buf.read(4)
            if not head:
                return out
            (n,) = struct.unpack("<I", head)
            header = json.loads(buf.read(n))
            out.append(header)
            if header.get("ok") and header.get("shape"):
                total = int(np.prod(header["shape"]))
                if header.get("attention_shape"):
                    total += int(np.prod(header["attention_shape"]))
                buf.read(4 * total)

    def test_garbage_header_then_connection_still_alive(self):
        garbage = struct.pack("<I", 7) + b"not{json"[:7]
        replies = self.read_responses(run_connection(garbage + frame({"op": "hello", "version": 1})))
        assert replies[0]["ok"] is False and replies[0]["error"]
        assert replies[1] == {"ok": True, "version": 1}

    def test_payload_shape_mismatch_names_payload(self):
        x = np.zeros((1, 2, 2), dtype="<f4").tobytes()
        header = {
            "op": "predict", "t": 5, "cond": None,
            "shape": [1, 4, 4],       # disagrees with payload_bytes
            "payload_bytes": len(x), "want_attention": False,
        }
        replies = self.read_responses(
            run_connection(frame(header, x) + frame({"op": "hello", "version": 1}))
        )
        assert replies[0]["ok"] is False and "payload" in replies[0]["error"]
        assert replies[1] == {"ok": True, "version": 1}

    def test_unknown_op_kept_alive(self):
        replies = self.read_responses(
            run_connection(frame({"op": "train"}) + frame({"op": "hello", "version": 1}))
        )
        assert replies[0]["ok"] is False and "train" in replies[0]["error"]
        assert replies[1]["ok"] is True

    def test_missing_t_rejected(self):
        x = np.zeros((1, 2, 2), dtype="<f4").tobytes()
        header = {
            "op": "predict", "cond": None, "shape": [1, 2, 2],
            "payload_bytes": len(x), "want_attention": False,
        }
        replies = self.read_responses(run_connection(frame(header, x)))
        assert replies[0]["ok"] is False and "t " in replies[0]["error"] + " "


class TestEchoSemantics:
    def test_prediction_is_request_bitwise(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 8, 8)).astype(np.float32)
        header = {
            "op": "predict", "t": 9, "cond": "prompt", "shape": [4, 8, 8],
            "payload_bytes": x.nbytes, "want_attention": False,
        }
        raw = run_connection(frame(header, x.tobytes()))
        buf = io.BytesIO(raw)
        resp = protocol.recv_frame(buf)
        assert resp["ok"] is True and resp["attention_shape"] is None
        body = buf.read()
        assert body == x.tobytes()

    def test_attention_on_request(self):
        x = np.zeros((2, 4, 6), dtype=np.float32)
        header = {
            "op": "predict", "t": 1, "cond": None, "shape": [2, 4, 6],
            "payload_bytes": x.nbytes, "want_attention": True,
        }
        raw = run_connection(frame(header, x.tobytes()))
        buf = io.BytesIO(raw)
        resp = protocol.recv_frame(buf)
        assert resp["attention_shape"] == [1, 4, 6]
        body = buf.read()
        att = np.frombuffer(body[x.nbytes :], dtype="<f4").reshape(1, 4, 6)
        assert np.all(att == 1.0)


class TestTcpServer:
    def test_listen_handshake_predict(self):
        proc = subprocess.Popen(
            [sys.executable, "-m", "sdbridge", "--echo", "--listen", "127.0.0.1:0"],
            stdout=subprocess.PIPE,
        )
        try:
            line = proc.stdout.readline().decode()
            port = int(line.strip().rsplit(":", 1)[1])
            with socket.create_connection(("127.0.0.1", port), timeout=10) as sock:
                r, w = sock.makefile("rb"), sock.makefile("wb")
                w.write(frame({"op": "hello", "version": 1}))
                w.flush()
                assert protocol.recv_frame(r) == {"ok": True, "version": 1}
                x = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
                w.write(frame({
                    "op": "predict", "t": 3, "cond": None, "shape": [2, 2, 2],
                    "payload_bytes": x.nbytes, "want_attention": False,
                }, x.tobytes()))
                w.flush()
                resp = protocol.recv_frame(r)
                assert resp["ok"] is True
                assert protocol.read_exact(r, 4 * 8) == x.tobytes()
        finally:
            proc.kill()
            proc.wait(timeout=10)


def test_build_backend_requires_mode():
    with pytest.raises(ValueError):
        build_backend(BridgeConfig())
