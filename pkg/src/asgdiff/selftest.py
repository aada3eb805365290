"""Embedded invariant suite: fast self-contained checks runnable from the CLI.

Each check is a named callable that raises on failure. The ASG_SELFTEST_FAULT
environment variable names a check to corrupt deliberately, which verifies
that the suite actually detects broken invariants.
"""
from __future__ import annotations

import numpy as np

from . import guidance, metrics, patching, predictors, schedule, tensor, wire


def _rng(seed: int = 7) -> tensor.RngState:
    return tensor.RngState(seed)


def check_randn_determinism(fault: bool) -> None:
    a = tensor.randn((2, 4, 4), _rng(11))
    b = tensor.randn((2, 4, 4), _rng(11 + int(fault)))
    assert np.array_equal(a, b), "identical seeds must give identical streams"


def check_randn_moments(fault: bool) -> None:
    x = tensor.randn((4, 100, 250), _rng(3))
    mean, var, _, _ = tensor.stats(x)
    if fault:
        mean += 1.0
    assert abs(mean) < 0.02 and abs(var - 1.0) < 0.03, f"moments off: {mean}, {var}"


def check_axpy_identities(fault: bool) -> None:
    x = tensor.randn((1, 3, 3), _rng(1))
    y = tensor.randn((1, 3, 3), _rng(2))
    a = 1.0 if not fault else 0.5
    assert tensor.axpy_like(a, x, 0.0, y) is x or np.array_equal(tensor.axpy_like(a, x, 0.0, y), x)
    assert np.array_equal(tensor.axpy_like(0.0, x, 1.0, y), y)


def check_stats_constant(fault: bool) -> None:
    c = np.full((2, 3, 3), 2.5 + 0.1 * int(fault), dtype=np.float32)
    mean, var, lo, hi = tensor.stats(c)
    assert mean == 2.5 and var == 0.0 and lo == hi == 2.5


def check_schedule_monotone(fault: bool) -> None:
    sched = schedule.make_schedule(100, 1e-4, 0.02)
    ab = np.array(sched.alpha_bar)
    if fault:
        ab[50], ab[51] = ab[51], ab[50]
    assert np.all(np.diff(ab) < 0), "alpha_bar must be strictly decreasing"
    assert np.all((ab > 0) & (ab < 1))


def check_ddim_inversion(fault: bool) -> None:
    sched = schedule.make_schedule(1000, 1e-4, 0.02)
    x0 = tensor.randn((1, 8, 8), _rng(5))
    eps = tensor.randn((1, 8, 8), _rng(6))
    t = 700 if not fault else 701
    x_t = schedule.forward_diffuse(x0, 700, eps, sched)
    x0p = schedule.predict_x0(x_t, eps, t, sched)
    rel = np.linalg.norm(x0p - x0) / np.linalg.norm(x0)
    assert rel < 1e-5, f"inversion error {rel}"


def check_ddim_terminal_exact(fault: bool) -> None:
    sched = schedule.make_schedule(1000, 1e-4, 0.02)
    x0 = tensor.randn((1, 4, 4), _rng(8))
    eps = tensor.randn((1, 4, 4), _rng(9))
    x1 = schedule.forward_diffuse(x0, 1, eps, sched)
    out = schedule.ddim_step(x1, eps, 1, 0, sched, eta=0.0)
    tol = 1e-5 if not fault else -1.0
    assert np.linalg.norm(out - x0) / np.linalg.norm(x0) < tol


def check_cfg_reduction(fault: bool) -> None:
    a = tensor.randn((2, 4, 4), _rng(12))
    b = tensor.randn((2, 4, 4), _rng(13))
    w1 = 1.0 if not fault else 1.5
    assert np.array_equal(predictors.cfg_combine(a, b, 0.0), a)
    assert np.array_equal(predictors.cfg_combine(a, b, w1), b)


def check_guidance_reduction(fault: bool) -> None:
    e = tensor.randn((2, 4, 4), _rng(14))
    e0 = tensor.randn((2, 4, 4), _rng(15))
    ones = np.ones((1, 4, 4), dtype=np.float32)
    zeros = np.zeros((1, 4, 4), dtype=np.float32)
    w = 1.7 if not fault else 1.7001
    assert np.array_equal(
        guidance.masked_structure_guidance(e, e0, 1.7, ones),
        guidance.structure_guidance(e, e0, w),
    )
    assert np.array_equal(guidance.masked_structure_guidance(e, e0, w, zeros), e)
    assert np.array_equal(guidance.structure_guidance(e, e0, 0.0), e)


def check_mask_normalize(fault: bool) -> None:
    raw = np.array([[[0.0, 1.0, 4.0]]], dtype=np.float32)
    m = guidance.normalize_attention(raw)
    expected = [0.0, 0.25, 1.0] if not fault else [0.0, 0.3, 1.0]
    assert np.allclose(m[0, 0], expected)
    flat = guidance.normalize_attention(np.full((1, 2, 2), 5.0, dtype=np.float32))
    assert np.array_equal(flat, np.ones((1, 2, 2), dtype=np.float32))


def check_async_zero_staleness(fault: bool) -> None:
    e = tensor.randn((1, 4, 4), _rng(16))
    e0 = tensor.randn((1, 4, 4), _rng(17))
    mask = guidance.normalize_attention(np.abs(tensor.randn((1, 4, 4), _rng(18))))
    msg = guidance.GuidanceMessage(iteration=3, eps0=e0, mask=mask)
    term = guidance.build_async_term(msg, e, 0.8)
    direct = guidance.masked_structure_guidance(e, e0, 0.8 if not fault else 0.81, mask)
    assert np.allclose(e + term, direct, atol=0.0), "fresh async message must reproduce sync guidance"


def check_interleave_roundtrip(fault: bool) -> None:
    hr = tensor.randn((2, 8, 8), _rng(19))
    for s in (1, 2, 4):
        ps = patching.interleave_split(hr, s)
        merged = patching.interleave_merge(ps)
        if fault:
            merged = np.flip(merged, axis=-1)
        assert np.array_equal(merged, hr)


def check_spatial_fuse_roundtrip(fault: bool) -> None:
    hr = tensor.randn((1, 8, 8), _rng(20))
    ps = patching.spatial_split(hr, 4, 4, overlap=2 if not fault else 1)
    fused = patching.spatial_fuse(ps)
    ref = hr if not fault else np.flip(hr, axis=-1)
    assert np.allclose(fused, ref, atol=1e-6)


def check_pixel_interaction_multiset(fault: bool) -> None:
    hr = tensor.randn((2, 8, 8), _rng(21))
    ps = patching.interleave_split(hr, 2)
    shuffled = patching.pixel_interaction(ps, _rng(22))
    before = np.sort(np.stack(ps.patches), axis=0)
    after = np.sort(np.stack(shuffled.patches), axis=0)
    if fault:
        after = after + 1.0
    assert np.array_equal(before, after), "per-location multisets must be preserved"
    assert tensor.stats(patching.interleave_merge(shuffled))[:2] == tensor.stats(hr)[:2]


def check_wire_roundtrip(fault: bool) -> None:
    x = tensor.randn((4, 8, 8), _rng(23))
    header, payload = wire.predict_request(x, 17, "token", True)
    back = wire.tensor_from_payload(payload, header["shape"])
    if fault:
        back = back * np.float32(1.0000001)
    assert np.array_equal(back, x), "serialization round-trip must be bitwise"


def check_disagreement_zero(fault: bool) -> None:
    p = tensor.randn((1, 4, 4), _rng(24))
    patches = [p, p if not fault else tensor.randn((1, 4, 4), _rng(25))]
    assert metrics.structure_disagreement(patches) == 0.0


CHECKS = [
    ("randn-determinism", check_randn_determinism),
    ("randn-moments", check_randn_moments),
    ("axpy-identities", check_axpy_identities),
    ("stats-constant", check_stats_constant),
    ("schedule-monotone", check_schedule_monotone),
    ("ddim-inversion", check_ddim_inversion),
    ("ddim-terminal-exact", check_ddim_terminal_exact),
    ("cfg-reduction", check_cfg_reduction),
    ("guidance-reduction", check_guidance_reduction),
    ("mask-normalize", check_mask_normalize),
    ("async-zero-staleness", check_async_zero_staleness),
    ("interleave-roundtrip", check_interleave_roundtrip),
    ("spatial-fuse-roundtrip", check_spatial_fuse_roundtrip),
    ("pixel-interaction-multiset", check_pixel_interaction_multiset),
    ("wire-roundtrip", check_wire_roundtrip),
    ("disagreement-zero", check_disagreement_zero),
]

_FAULT_ALIASES = {"schedule": "schedule-monotone"}


def run_selftest(fault: str | None = None) -> list[tuple[str, bool, str]]:
    """Run all checks; returns (name, passed, detail) triples."""
    fault = _FAULT_ALIASES.get(fault, fault)
    results = []
    for name, fn in CHECKS:
        try:
            fn(fault == name)
            results.append((name, True, ""))
        except Exception as e:
            results.append((name, False, str(e)))
    return results
