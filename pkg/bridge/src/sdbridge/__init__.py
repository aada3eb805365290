"""Noise-prediction server speaking the asgdiff wire protocol.

Echo mode answers every predict with the request tensor (the conformance
target for clients); model mode adapts a pretrained latent-diffusion
pipeline, returning one CFG-combined prediction and an aggregated
cross-attention heatmap.
"""

from .attention import aggregate_attention, bilinear_resize
from .backends import DiffusersBackend, EchoBackend
from .protocol import PROTOCOL_VERSION, FrameError
from .server import BridgeConfig, main, serve, serve_connection

__version__ = "0.1.0"
