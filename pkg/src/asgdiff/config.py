"""Run configuration: a flat JSON file with dotted keys for nesting.

Example::

    {
      "base_hw": [32, 32],
      "target_hw": [64, 64],
      "steps": 50,
      "guidance.w": 2.0,
      "guidance.mask": "attention",
      "predictor.kind": "gmm"
    }

parse -> nested mapping -> PipelineConfig; canonical() re-serializes to the
sorted dotted form, so serialize(parse(file)) is idempotent.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .engine import PipelineConfig
from .errors import ConfigError
from .guidance import GuidanceConfig

_TOP_LEVEL_KEYS = {
    "base_hw", "target_hw", "channels", "steps", "ratio", "seed", "executor",
    "workers", "eta", "delay_ms", "comm_ms", "pixel_interaction", "x0_clip",
    "train_steps", "beta_start", "beta_end",
    "out", "formats",
}
_GROUP_KEYS = {"guidance": {"w", "mask", "stage2"}, "stage2": {"overlap", "window"}, "predictor": None}


def flatten(nested: dict, prefix: str = "") -> dict:
    flat: dict = {}
    for key, value in nested.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{path}."))
        else:
            flat[path] = value
    return flat


def unflatten(flat: dict) -> dict:
    nested: dict = {}
    for path, value in flat.items():
        parts = path.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{path}: conflicts with a scalar at {part!r}")
        node[parts[-1]] = value
    return nested


def validate_keys(flat: dict) -> None:
    for path in flat:
        head = path.split(".", 1)[0]
        if "." not in path:
            if head not in _TOP_LEVEL_KEYS:
                raise ConfigError(f"{path}: unknown configuration key")
            continue
        if head not in _GROUP_KEYS:
            raise ConfigError(f"{path}: unknown configuration key")
        allowed = _GROUP_KEYS[head]
        if allowed is not None and path.split(".", 1)[1] not in allowed:
            raise ConfigError(f"{path}: unknown configuration key")


def canonical(flat: dict) -> str:
    """Sorted dotted-key JSON; the canonical on-disk form."""
    return json.dumps(dict(sorted(flat.items())), indent=2, sort_keys=True) + "\n"


def load_config_file(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    flat = flatten(raw)  # accept both dotted and pre-nested spellings
    validate_keys(flat)
    return flat


def _mask_fields(mask: str) -> tuple[str, str | None]:
    if mask.startswith("file:"):
        return "file", mask.split(":", 1)[1]
    if mask in ("off", "one", "attention"):
        return mask, None
    raise ConfigError(f"guidance.mask: unknown mask mode {mask!r}")


@dataclass(frozen=True)
class CliConfig:
    """PipelineConfig plus output destination and formats."""

    pipeline: PipelineConfig
    out_dir: str = "out"
    formats: tuple[str, ...] = ("asgt", "ppm")

    def __post_init__(self) -> None:
        for fmt in self.formats:
            if fmt not in ("asgt", "ppm"):
                raise ConfigError(f"formats: unknown output format {fmt!r}")


def build_config(flat: dict) -> CliConfig:
    """Construct the validated run configuration from a flat dotted mapping."""
    validate_keys(flat)
    nested = unflatten(flat)
    guidance_raw = nested.pop("guidance", {})
    stage2_raw = nested.pop("stage2", {})
    predictor = nested.pop("predictor", {"kind": "gaussian"})
    out_dir = nested.pop("out", "out")
    formats = tuple(nested.pop("formats", ["asgt", "ppm"]))

    mask_mode, mask_path = _mask_fields(str(guidance_raw.get("mask", "off")))
    try:
        guidance = GuidanceConfig(
            w=float(guidance_raw.get("w", 2.0)),
            mask_mode=mask_mode,
            mask_path=mask_path,
            stage2_guidance=bool(guidance_raw.get("stage2", False)),
        )
    except ValueError as e:
        raise ConfigError(f"guidance: {e}") from None

    kwargs = dict(nested)
    if "base_hw" in kwargs:
        kwargs["base_hw"] = tuple(kwargs["base_hw"])
    if "target_hw" in kwargs:
        kwargs["target_hw"] = tuple(kwargs["target_hw"])
    if "overlap" in stage2_raw:
        kwargs["stage2_overlap"] = int(stage2_raw["overlap"])
    if "window" in stage2_raw:
        kwargs["stage2_window"] = str(stage2_raw["window"])
    try:
        pipeline = PipelineConfig(guidance=guidance, predictor=dict(predictor), **kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return CliConfig(pipeline=pipeline, out_dir=out_dir, formats=formats)


def to_flat(cli: CliConfig) -> dict:
    """Inverse of build_config, producing the canonical dotted mapping."""
    p = cli.pipeline
    flat = {
        "base_hw": list(p.base_hw),
        "target_hw": list(p.target_hw),
        "channels": p.channels,
        "steps": p.steps,
        "ratio": p.ratio,
        "seed": p.seed,
        "executor": p.executor,
        "workers": p.workers,
        "eta": p.eta,
        "delay_ms": p.delay_ms,
        "comm_ms": p.comm_ms,
        "pixel_interaction": p.pixel_interaction,
        "x0_clip": p.x0_clip,
        "train_steps": p.train_steps,
        "beta_start": p.beta_start,
        "beta_end": p.beta_end,
        "stage2.overlap": p.stage2_overlap,
        "stage2.window": p.stage2_window,
        "guidance.w": p.guidance.w,
        "guidance.mask": (
            f"file:{p.guidance.mask_path}" if p.guidance.mask_mode == "file" else p.guidance.mask_mode
        ),
        "guidance.stage2": p.guidance.stage2_guidance,
        "out": cli.out_dir,
        "formats": list(cli.formats),
    }
    for key, value in p.predictor.items():
        flat[f"predictor.{key}"] = value
    return flat


def apply_overrides(flat: dict, overrides: dict) -> dict:
    """Merge CLI flag overrides (already in dotted form) over the file config."""
    merged = dict(flat)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def replace_pipeline(cli: CliConfig, **changes) -> CliConfig:
    return dataclasses.replace(cli, pipeline=dataclasses.replace(cli.pipeline, **changes))
