import io
import json
import struct

import numpy as np
import pytest

from sdbridge import protocol


def frame(header: dict, payload: bytes = b"") -> bytes:
    data = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    return struct.pack("<I", len(data)) + data + payload


class TestFraming:
    def test_recv_parses_header(self):
        buf = io.BytesIO(frame({"op": "hello", "version": 1}))
        assert protocol.recv_frame(buf) == {"op": "hello", "version": 1}

    def test_send_layout_matches_golden_ack(self, datadir):
        buf = io.BytesIO()
        protocol.send_frame(buf, protocol.hello_ack())
        assert buf.getvalue() == (datadir / "golden_hello_ack.bin").read_bytes()

    def test_malformed_json_is_frame_error(self):
        raw = struct.pack("<I", 3) + b"{{{"
        with pytest.raises(protocol.FrameError):
            protocol.recv_frame(io.BytesIO(raw))

    def test_eof_is_connection_closed(self):
        with pytest.raises(protocol.ConnectionClosed):
            protocol.recv_frame(io.BytesIO(b""))

    def test_header_must_be_object(self):
        raw = struct.pack("<I", 2) + b"[]"
        with pytest.raises(protocol.FrameError):
            protocol.recv_frame(io.BytesIO(raw))


class TestDecodeLatent:
    def test_roundtrip(self):
        x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        got = protocol.decode_latent({"shape": [2, 3, 4]}, x.tobytes())
        assert np.array_equal(got, x)

    def test_payload_size_mismatch(self):
        with pytest.raises(protocol.FrameError):
            protocol.decode_latent({"shape": [1, 2, 2]}, b"\x00" * 12)

    @pytest.mark.parametrize("shape", [None, [1, 2], [0, 2, 2], ["a", 2, 2]])
    def test_bad_shape_field(self, shape):
        with pytest.raises(protocol.FrameError):
            protocol.decode_latent({"shape": shape}, b"")


def test_ok_response_carries_attention():
    eps = np.zeros((1, 2, 2), dtype=np.float32)
    att = np.ones((1, 2, 2), dtype=np.float32)
    header, payload = protocol.ok_response(eps, att)
    assert header["shape"] == [1, 2, 2]
    assert header["attention_shape"] == [1, 2, 2]
    assert len(payload) == 4 * 8
