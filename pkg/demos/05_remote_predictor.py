#!/usr/bin/env python3
"""Driving the engine against an eps-prediction server over the wire protocol.

Spins up a loopback echo server (the same framing a real model bridge
speaks: 4-byte length, JSON header, raw float32 payload), connects the
remote-predictor client, runs a predict round-trip, then drives a short
pipeline where every eps comes over the socket.

To run against the standalone bridge instead:
    python -m sdbridge --echo --listen 127.0.0.1:9999   (bridge/ package)
    asgdiff generate --predictor remote:127.0.0.1:9999 --out out/
"""
import socket
import threading

import numpy as np

from asgdiff import wire
from asgdiff.engine import PipelineConfig, run_pipeline
from asgdiff.remote import RemotePredictor
from asgdiff.tensor import RngState, randn


def serve_connection(conn):
    r, w = conn.makefile("rb"), conn.makefile("wb")
    try:
        while True:
            header = wire.recv_header(r)
            if header.get("op") == "hello":
                wire.send_frame(w, wire.hello_ack_header())
                continue
            body = wire.read_exact(r, header["payload_bytes"])
            x = wire.tensor_from_payload(body, header["shape"])
            att = np.ones((1,) + x.shape[1:], dtype=np.float32) if header["want_attention"] else None
            rh, rp = wire.predict_response(x, att)
            wire.send_frame(w, rh, rp)
    except Exception:
        conn.close()


def echo_server(sock):
    # one connection per engine worker, so serve each in its own thread
    while True:
        try:
            conn, _ = sock.accept()
        except OSError:
            return
        threading.Thread(target=serve_connection, args=(conn,), daemon=True).start()


sock = socket.socket()
sock.bind(("127.0.0.1", 0))
sock.listen(4)
port = sock.getsockname()[1]
threading.Thread(target=echo_server, args=(sock,), daemon=True).start()
print(f"echo server listening on 127.0.0.1:{port}")

with RemotePredictor.connect_tcp("127.0.0.1", port) as client:
    x = randn((4, 8, 8), RngState(1))
    out = client.predict(x, 17, "a prompt token")
    print(f"round-trip of a {x.shape} tensor: bitwise identical = "
          f"{np.array_equal(out.eps_hat, x)}, attention shape = {out.attention.shape}")

cfg = PipelineConfig(
    base_hw=(8, 8),
    target_hw=(16, 16),
    steps=6,
    seed=2,
    executor="async",
    workers=4,
    predictor={"kind": f"remote:127.0.0.1:{port}"},
)
final, report = run_pipeline(cfg)
print(f"pipeline over the wire: final latent {final.shape}, checksum {report.checksum[:16]}..., "
      f"{len(report.timings)} timed steps (one connection per worker)")
sock.close()
