"""The bridge server: answers hello and predict frames over stdio or TCP.

Requests on a connection run strictly in order, and the backend executes
one prediction at a time across all connections (a single model cannot run
concurrent inferences). The TCP listener still accepts connections
concurrently, because the sampling engine opens one connection per worker
and must be able to handshake them all. Malformed frames get an ok=false
response and the connection stays open; only a closed peer ends its loop.
"""
from __future__ import annotations

import argparse
import logging
import socket
import sys
import threading
from dataclasses import dataclass

from . import protocol
from .backends import DiffusersBackend, EchoBackend

log = logging.getLogger("sdbridge")


@dataclass(frozen=True)
class BridgeConfig:
    echo: bool = False
    model_id: str | None = None
    device: str = "cuda"
    attention_source: str = "up"   # "up" (upsampling blocks) or "all"
    guidance_scale: float = 7.5
    listen: str | None = None      # "host:port", else stdio


def build_backend(config: BridgeConfig):
    if config.echo:
        return EchoBackend()
    if not config.model_id:
        raise ValueError("either --echo or --model is required")
    return DiffusersBackend(
        config.model_id,
        device=config.device,
        attention_source=config.attention_source,
        guidance_scale=config.guidance_scale,
    )


def _handle_predict(header: dict, reader, backend):
    declared = header.get("payload_bytes")
    if not isinstance(declared, int) or declared < 0:
        raise protocol.FrameError("payload_bytes missing or invalid")
    payload = protocol.read_exact(reader, declared)
    try:
        latent = protocol.decode_latent(header, payload)
    except protocol.FrameError as e:
        raise protocol.FrameError(f"payload: {e}") from None
    t = header.get("t")
    if not isinstance(t, int) or t < 0:
        raise protocol.FrameError("t missing or invalid")
    cond = header.get("cond")
    want_attention = bool(header.get("want_attention", False))
    eps, attention = backend.predict(latent, t, cond, want_attention)
    return protocol.ok_response(eps, attention)


def serve_connection(reader, writer, backend, backend_lock=None) -> None:
    lock = backend_lock or threading.Lock()
    while True:
        try:
            header = protocol.recv_frame(reader)
        except protocol.ConnectionClosed:
            return
        except protocol.FrameError as e:
            protocol.send_frame(writer, protocol.error_response(str(e)))
            continue
        op = header.get("op")
        if op == "hello":
            protocol.send_frame(writer, protocol.hello_ack())
            continue
        if op != "predict":
            protocol.send_frame(writer, protocol.error_response(f"unknown op {op!r}"))
            continue
        try:
            with lock:
                resp_header, resp_payload = _handle_predict(header, reader, backend)
        except protocol.ConnectionClosed:
            return
        except protocol.FrameError as e:
            protocol.send_frame(writer, protocol.error_response(str(e)))
            continue
        except Exception as e:
            log.exception("backend failure")
            protocol.send_frame(writer, protocol.error_response(f"backend: {e}"))
            continue
        protocol.send_frame(writer, resp_header, resp_payload)


def serve(config: BridgeConfig) -> None:
    backend = build_backend(config)
    if config.listen is None:
        log.info("serving on stdio, backend=%s", backend.name)
        serve_connection(sys.stdin.buffer, sys.stdout.buffer, backend)
        return
    host, _, port = config.listen.rpartition(":")
    sock = socket.socket()
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host or "127.0.0.1", int(port)))
    sock.listen(8)
    log.info("listening on %s, backend=%s", config.listen, backend.name)
    print(f"listening on {sock.getsockname()[0]}:{sock.getsockname()[1]}", flush=True)
    backend_lock = threading.Lock()

    def _serve_one(conn, peer):
        log.info("connection from %s", peer)
        try:
            serve_connection(conn.makefile("rb"), conn.makefile("wb"), backend, backend_lock)
        finally:
            conn.close()
            log.info("connection %s closed", peer)

    try:
        while True:
            conn, peer = sock.accept()
            threading.Thread(target=_serve_one, args=(conn, peer), daemon=True).start()
    finally:
        sock.close()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sdbridge",
        description="Noise-prediction server speaking the asgdiff wire protocol",
    )
    parser.add_argument("--echo", action="store_true", help="model bypass: reply with the request tensor")
    parser.add_argument("--model", help="pretrained pipeline id (diffusers)")
    parser.add_argument("--device", default="cuda")
    parser.add_argument("--attention", choices=["up", "all"], default="up",
                        help="which U-Net blocks feed the attention heatmap")
    parser.add_argument("--cfg-scale", type=float, default=7.5, dest="cfg_scale")
    parser.add_argument("--listen", help="host:port for TCP; default is stdio")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="sdbridge %(levelname)s %(message)s",
    )
    config = BridgeConfig(
        echo=args.echo,
        model_id=args.model,
        device=args.device,
        attention_source=args.attention,
        guidance_scale=args.cfg_scale,
        listen=args.listen,
    )
    try:
        serve(config)
    except KeyboardInterrupt:
        pass
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
