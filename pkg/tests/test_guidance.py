import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asgdiff.errors import ShapeError
from asgdiff.guidance import (
    GuidanceConfig,
    GuidanceMessage,
    apply_guidance,
    build_async_term,
    load_mask,
    masked_structure_guidance,
    normalize_attention,
    structure_guidance,
)
from asgdiff.tensor import RngState, randn, write_asgt


def scalar(v):
    x = np.full((1, 1, 1), v, dtype=np.float32)
    x.flags.writeable = False
    return x


def heat(vals):
    x = np.array(vals, dtype=np.float32)[np.newaxis]
    x.flags.writeable = False
    return x


class TestStructureGuidance:
    def test_w0_identity(self, latent_pair):
        e, e0 = latent_pair
        assert structure_guidance(e, e0, 0.0) is e

    def test_w1_full_replacement(self, latent_pair):
        e, e0 = latent_pair
        assert np.allclose(structure_guidance(e, e0, 1.0), e0, atol=1e-6)

    def test_scalar_hand_value(self):
        out = structure_guidance(scalar(0.2), scalar(0.6), 0.5)
        assert out[0, 0, 0] == pytest.approx(0.4, abs=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            structure_guidance(randn((1, 2, 2), rng), randn((1, 3, 3), rng), 1.0)


class TestMaskedGuidance:
    def test_zero_mask_identity(self, latent_pair):
        e, e0 = latent_pair
        zeros = np.zeros((1,) + e.shape[1:], dtype=np.float32)
        assert np.array_equal(masked_structure_guidance(e, e0, 5.0, zeros), e)

    def test_ones_mask_reduces_to_eq3(self, latent_pair):
        e, e0 = latent_pair
        ones = np.ones((1,) + e.shape[1:], dtype=np.float32)
        assert np.array_equal(
            masked_structure_guidance(e, e0, 1.7, ones), structure_guidance(e, e0, 1.7)
        )

    def test_scalar_hand_value(self):
        out = masked_structure_guidance(scalar(0.2), scalar(0.6), 2.0, heat([[0.25]]))
        assert out[0, 0, 0] == pytest.approx(0.4, abs=1e-6)

    def test_mask_broadcasts_over_channels(self, rng):
        e = randn((3, 4, 4), rng)
        e0 = randn((3, 4, 4), rng)
        mask = np.zeros((1, 4, 4), dtype=np.float32)
        mask[0, 1, 1] = 1.0
        out = masked_structure_guidance(e, e0, 1.0, mask)
        for ch in range(3):
            assert out[ch, 1, 1] == pytest.approx(e0[ch, 1, 1], abs=1e-6)
            assert out[ch, 0, 0] == e[ch, 0, 0]

    @given(w=st.floats(0, 1, allow_nan=False))
    @settings(max_examples=60, deadline=None)
    def test_convexity_for_unit_range(self, w):
        e = randn((1, 5, 5), RngState(61))
        e0 = randn((1, 5, 5), RngState(62))
        mask = normalize_attention(np.abs(randn((1, 5, 5), RngState(63))))
        out = masked_structure_guidance(e, e0, w, mask)
        lo = np.minimum(e, e0) - 1e-6
        hi = np.maximum(e, e0) + 1e-6
        assert np.all(out >= lo) and np.all(out <= hi)


class TestNormalizeAttention:
    def test_endpoints(self):
        m = normalize_attention(heat([[1.0, 3.0]]))
        assert m.tolist() == [[[0.0, 1.0]]]

    def test_constant_becomes_ones(self):
        m = normalize_attention(np.full((1, 2, 3), 5.0, dtype=np.float32))
        assert np.all(m == 1.0)

    def test_hand_min_max(self):
        m = normalize_attention(heat([[0.0, 1.0, 4.0]]))
        assert np.allclose(m[0, 0], [0.0, 0.25, 1.0])

    def test_negative_rejected(self):
        with pytest.raises(ShapeError):
            normalize_attention(heat([[-1.0, 2.0]]))

    def test_nonfinite_rejected(self):
        with pytest.raises(ShapeError):
            normalize_attention(heat([[np.inf, 1.0]]))


class TestAsyncTerm:
    def test_vanishes_at_agreement(self, rng):
        e = randn((1, 4, 4), rng)
        msg = GuidanceMessage(iteration=3, eps0=e)
        assert np.all(build_async_term(msg, e, 2.0) == 0.0)

    def test_w0_vanishes(self, latent_pair):
        e, e0 = latent_pair
        msg = GuidanceMessage(iteration=1, eps0=e0)
        assert np.all(build_async_term(msg, e, 0.0) == 0.0)

    def test_scalar_hand_values(self):
        msg = GuidanceMessage(iteration=2, eps0=scalar(0.6), mask=heat([[0.5]]))
        g = build_async_term(msg, scalar(0.2), 1.0)
        assert g[0, 0, 0] == pytest.approx(0.2, abs=1e-6)
        applied = scalar(0.2) + g
        assert applied[0, 0, 0] == pytest.approx(0.4, abs=1e-6)

    def test_fresh_message_reproduces_sync_guidance(self, latent_pair):
        # zero staleness: the async term applied collapses to masked guidance
        e, e0 = latent_pair
        mask = normalize_attention(np.abs(randn((1, 6, 6), RngState(64))))
        msg = GuidanceMessage(iteration=9, eps0=e0, mask=mask)
        via_term = (e + build_async_term(msg, e, 1.3)).astype(np.float32)
        direct = masked_structure_guidance(e, e0, 1.3, mask)
        assert np.allclose(via_term, direct, atol=1e-6)

    def test_apply_guidance_dispatch(self, latent_pair):
        e, e0 = latent_pair
        plain = GuidanceMessage(iteration=1, eps0=e0)
        assert np.array_equal(apply_guidance(plain, e, 0.8), structure_guidance(e, e0, 0.8))
        ones = np.ones((1,) + e.shape[1:], dtype=np.float32)
        masked = GuidanceMessage(iteration=1, eps0=e0, mask=ones)
        assert np.array_equal(
            apply_guidance(masked, e, 0.8), masked_structure_guidance(e, e0, 0.8, ones)
        )


class TestGuidanceConfig:
    def test_negative_w_rejected(self):
        with pytest.raises(ValueError):
            GuidanceConfig(w=-1.0)

    def test_file_mode_needs_path(self):
        with pytest.raises(ValueError):
            GuidanceConfig(mask_mode="file")

    def test_mask_file_loading(self, tmp_path, rng):
        mask = normalize_attention(np.abs(randn((1, 4, 4), rng)))
        path = tmp_path / "mask.asgt"
        write_asgt(path, mask)
        assert np.array_equal(load_mask(path), mask)

    def test_out_of_range_file_mask_rejected(self, tmp_path, rng):
        bad = (randn((1, 4, 4), rng) * 3).astype(np.float32)
        path = tmp_path / "bad.asgt"
        write_asgt(path, bad)
        with pytest.raises(ShapeError):
            load_mask(path)
