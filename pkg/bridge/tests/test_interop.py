"""Live interop: the sampling engine's own client against the echo bridge.

Skipped when the engine package is not installed; the byte-level contract
is already covered by the golden fixtures in test_server.py.
"""
import subprocess
import sys

import numpy as np
import pytest

asgdiff = pytest.importorskip("asgdiff")


@pytest.fixture
def echo_bridge():
    proc = subprocess.Popen(
        [sys.executable, "-m", "sdbridge", "--echo", "--listen", "127.0.0.1:0"],
        stdout=subprocess.PIPE,
    )
    line = proc.stdout.readline().decode()
    port = int(line.strip().rsplit(":", 1)[1])
    yield port
    proc.kill()
    proc.wait(timeout=10)


def test_client_round_trip_bitwise(echo_bridge):
    from asgdiff.remote import RemotePredictor
    from asgdiff.tensor import RngState, randn

    with RemotePredictor.connect_tcp("127.0.0.1", echo_bridge, timeout=10) as client:
        x = randn((4, 8, 8), RngState(123))
        out = client.predict(x, 17, "token")
        assert np.array_equal(out.eps_hat, x)
        assert out.attention.shape == (1, 8, 8) and np.all(out.attention == 1.0)


def test_engine_runs_against_bridge(echo_bridge):
    from asgdiff.engine import PipelineConfig, run_pipeline

    cfg = PipelineConfig(
        base_hw=(8, 8),
        target_hw=(16, 16),
        steps=4,
        seed=3,
        executor="sync",
        workers=2,
        guidance=asgdiff.GuidanceConfig(w=1.0, mask_mode="attention"),
        predictor={"kind": f"remote:127.0.0.1:{echo_bridge}"},
    )
    final, report = run_pipeline(cfg)
    assert final.shape == (1, 16, 16)
    assert report.checksum
