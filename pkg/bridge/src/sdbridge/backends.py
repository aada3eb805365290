"""Prediction backends: a model-free echo (conformance testing) and an
adapter over a pretrained latent-diffusion pipeline."""
from __future__ import annotations

import numpy as np

from .attention import aggregate_attention


class EchoBackend:
    """Returns the request latent as the prediction, bitwise.

    Gives clients a deterministic conformance target: the response payload
    must equal the request payload, and the attention (when asked for) is
    an all-ones map of the latent's spatial dims.
    """

    name = "echo"

    def predict(self, latent: np.ndarray, t: int, cond, want_attention: bool):
        attention = None
        if want_attention:
            attention = np.ones((1,) + latent.shape[1:], dtype=np.float32)
        return latent, attention


class DiffusersBackend:
    """eps-prediction from a pretrained Stable Diffusion U-Net.

    Applies classifier-free guidance internally (two U-Net calls, one
    post-CFG prediction returned) and captures cross-attention
    probabilities from the configured blocks; the heatmap is averaged over
    layers, heads, and prompt tokens, then resized to the latent dims.

    Requires the optional [model] dependencies (torch, diffusers,
    transformers) and model weights; constructing it without them raises
    with an instruction rather than at import time.
    """

    name = "diffusers"

    def __init__(self, model_id: str, device: str = "cuda",
                 attention_source: str = "up", guidance_scale: float = 7.5):
        try:
            import torch
            from diffusers import StableDiffusionPipeline
        except ImportError as e:
            raise RuntimeError(
                "model mode needs the optional dependencies: pip install 'sdbridge[model]'"
            ) from e
        if attention_source not in ("up", "all"):
            raise ValueError(f"attention_source must be 'up' or 'all', got {attention_source!r}")
        self._torch = torch
        self.device = device
        self.guidance_scale = float(guidance_scale)
        self.attention_source = attention_source
        self.pipe = StableDiffusionPipeline.from_pretrained(model_id)
        self.pipe.to(device)
        self.pipe.unet.eval()
        self._captured: list[np.ndarray] = []
        self._install_capture()
        self._embed_cache: dict[str, object] = {}

    def _install_capture(self):
        from diffusers.models.attention_processor import Attention, AttnProcessor

        backend = self

        class CaptureProcessor(AttnProcessor):
            def __init__(self, enabled: bool):
                super().__init__()
                self.enabled = enabled

            def __call__(self, attn: Attention, hidden_states, encoder_hidden_states=None,
                         attention_mask=None, **kwargs):
                is_cross = encoder_hidden_states is not None
                if is_cross and self.enabled and backend._capturing:
                    query = attn.to_q(hidden_states)
                    key = attn.to_k(encoder_hidden_states)
                    query = attn.head_to_batch_dim(query)
                    key = attn.head_to_batch_dim(key)
                    probs = attn.get_attention_scores(query, key, attention_mask)
                    # (batch*heads, pixels, tokens) -> mean over heads and tokens
                    pixels = probs.shape[1]
                    side = int(round(pixels**0.5))
                    if side * side == pixels:
                        m = probs.mean(dim=(0, 2)).reshape(side, side)
                        backend._captured.append(m.detach().float().cpu().numpy())
                return super().__call__(attn, hidden_states, encoder_hidden_states,
                                        attention_mask, **kwargs)

        procs = {}
        for name in self.pipe.unet.attn_processors:
            in_scope = self.attention_source == "all" or name.startswith("up_blocks")
            procs[name] = CaptureProcessor(in_scope)
        self.pipe.unet.set_attn_processor(procs)
        self._capturing = False

    def _embed(self, prompt: str):
        if prompt not in self._embed_cache:
            tok = self.pipe.tokenizer(
                prompt, padding="max_length",
                max_length=self.pipe.tokenizer.model_max_length,
                truncation=True, return_tensors="pt",
            )
            with self._torch.no_grad():
                emb = self.pipe.text_encoder(tok.input_ids.to(self.device))[0]
            self._embed_cache[prompt] = emb
        return self._embed_cache[prompt]

    def _unet_eps(self, latent_t, timestep, embeddings, capture: bool):
        self._capturing = capture
        self._captured = []
        with self._torch.no_grad():
            out = self.pipe.unet(latent_t, timestep, encoder_hidden_states=embeddings).sample
        self._capturing = False
        return out

    def predict(self, latent: np.ndarray, t: int, cond, want_attention: bool):
        torch = self._torch
        x = torch.from_numpy(np.ascontiguousarray(latent)).unsqueeze(0).to(self.device)
        # wire timesteps are 1-based over the training schedule
        timestep = torch.tensor([max(t - 1, 0)], device=self.device)
        uncond = self._embed("")
        conded = self._embed(cond or "")
        eps_u = self._unet_eps(x, timestep, uncond, capture=False)
        eps_c = self._unet_eps(x, timestep, conded, capture=want_attention)
        maps = list(self._captured)
        eps = eps_u + self.guidance_scale * (eps_c - eps_u)
        eps_np = eps.squeeze(0).float().cpu().numpy().astype(np.float32)
        attention = None
        if want_attention:
            if not maps:
                attention = np.ones((1,) + latent.shape[1:], dtype=np.float32)
            else:
                attention = aggregate_attention(maps, latent.shape[1:])
        return eps_np, attention
