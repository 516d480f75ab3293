"""Segmentation head: normalisation, gating, decoding, loss, prediction."""

import numpy as np
import pytest

import camseg.tensor as T
from camseg.errors import ShapeError, ValidationError
from camseg.seg_head import (Decoder, gate_features, normalize_prior,
                             predict_mask, seg_loss)
from camseg.tensor import Tensor

from oracles import softmax_ce_ref


class TestNormalizePrior:
    def test_known_values(self):
        prior = Tensor(np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(1, 1, 2, 2))
        out = normalize_prior(prior).data.reshape(-1)
        np.testing.assert_allclose(out, [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-7)

    def test_constant_prior_maps_to_half(self):
        prior = Tensor(np.full((3, 1, 4, 4), -2.5, np.float32))
        np.testing.assert_array_equal(normalize_prior(prior).data,
                                      np.full((3, 1, 4, 4), 0.5, np.float32))

    def test_affine_invariance(self, rng):
        for _ in range(25):
            x = rng.standard_normal((1, 1, 5, 5)).astype(np.float32)
            a = float(rng.uniform(0.1, 10.0))
            b = float(rng.uniform(-5.0, 5.0))
            base = normalize_prior(Tensor(x)).data
            scaled = normalize_prior(Tensor((a * x + b).astype(np.float32))).data
            np.testing.assert_allclose(scaled, base, atol=1e-6)

    def test_range_and_exact_endpoints(self, rng):
        for _ in range(10):
            x = rng.standard_normal((2, 1, 6, 6)).astype(np.float32)
            out = normalize_prior(Tensor(x)).data
            assert out.min() >= 0.0 and out.max() <= 1.0
            for n in range(2):
                assert out[n].min() == 0.0 and out[n].max() == 1.0

    def test_nan_rejected(self):
        bad = np.zeros((1, 1, 2, 2), np.float32)
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValidationError, match="NaN"):
            normalize_prior(Tensor(bad))


class TestGateFeatures:
    def test_all_ones_prior_is_identity(self, rng):
        feat = Tensor(rng.standard_normal((1, 8, 4, 4)).astype(np.float32))
        out = gate_features(feat, Tensor(np.ones((1, 1, 4, 4), np.float32)))
        np.testing.assert_array_equal(out.data, feat.data)

    def test_zero_prior_blanks_features(self, rng):
        feat = Tensor(rng.standard_normal((1, 8, 4, 4)).astype(np.float32))
        out = gate_features(feat, Tensor(np.zeros((1, 1, 4, 4), np.float32)))
        np.testing.assert_array_equal(out.data, np.zeros_like(feat.data))

    def test_equals_concatenated_copies_formulation(self, rng):
        feat = Tensor(rng.standard_normal((1, 8, 4, 4)).astype(np.float32))
        prior = Tensor(rng.random((1, 1, 4, 4)).astype(np.float32))
        broadcast = gate_features(feat, prior).data
        stacked = T.mul(feat, T.concat_channels([prior] * 8)).data
        np.testing.assert_array_equal(broadcast, stacked)

    def test_normalized_prior_never_amplifies(self, rng):
        feat = Tensor(rng.standard_normal((1, 8, 4, 4)).astype(np.float32))
        prior = normalize_prior(Tensor(rng.standard_normal((1, 1, 4, 4)).astype(np.float32)))
        out = gate_features(feat, prior).data
        assert (np.abs(out) <= np.abs(feat.data) + 1e-7).all()

    def test_spatial_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            gate_features(Tensor(np.zeros((1, 8, 4, 4), np.float32)),
                          Tensor(np.zeros((1, 1, 5, 5), np.float32)))


class TestDecoder:
    def test_8x8_input_gives_64x64_two_channel_logits(self, rng):
        dec = Decoder(64, np.random.default_rng(0))
        out = dec(Tensor(rng.standard_normal((1, 64, 8, 8)).astype(np.float32)))
        assert out.shape == (1, 2, 64, 64)

    def test_zero_decoder_gives_uniform_class_probabilities(self, rng):
        dec = Decoder(16, np.random.default_rng(0))
        for layer in (dec.up1, dec.up2, dec.up3):
            layer.weight.data = np.zeros_like(layer.weight.data)
            layer.bias.data = np.zeros_like(layer.bias.data)
        logits = dec(Tensor(rng.standard_normal((1, 16, 4, 4)).astype(np.float32)))
        np.testing.assert_array_equal(logits.data, np.zeros_like(logits.data))
        mask = rng.integers(0, 2, (1, 1, 32, 32)).astype(np.float32)
        assert seg_loss(logits, mask).item() == pytest.approx(np.log(2), abs=1e-7)


class TestSegLoss:
    def test_equal_logits_give_log2(self, rng):
        logits = Tensor(np.zeros((1, 2, 4, 4), np.float32))
        mask = rng.integers(0, 2, (1, 1, 4, 4)).astype(np.float32)
        assert seg_loss(logits, mask).item() == pytest.approx(np.log(2), abs=1e-7)

    def test_saturated_aligned_logits_give_tiny_loss(self, rng):
        mask = rng.integers(0, 2, (1, 1, 4, 4)).astype(np.float32)
        logits = np.zeros((1, 2, 4, 4), np.float32)
        logits[:, 1:2] = np.where(mask == 1, 10.0, -10.0)
        logits[:, 0:1] = -logits[:, 1:2]
        assert seg_loss(Tensor(logits), mask).item() < 1e-4

    def test_random_case_matches_reference(self, rng):
        logits = rng.standard_normal((1, 2, 2, 2)).astype(np.float32)
        mask = rng.integers(0, 2, (1, 1, 2, 2)).astype(np.float32)
        got = seg_loss(Tensor(logits), mask).item64()
        assert got == pytest.approx(softmax_ce_ref(logits, mask), abs=1e-6)

    def test_non_binary_mask_rejected(self):
        with pytest.raises(ValidationError, match="binary"):
            seg_loss(Tensor(np.zeros((1, 2, 2, 2), np.float32)),
                     np.full((1, 1, 2, 2), 0.3, np.float32))


class TestPredictMask:
    def test_foreground_dominant_logits(self):
        logits = np.zeros((1, 2, 3, 3), np.float32)
        logits[:, 1] = 1.0
        np.testing.assert_array_equal(predict_mask(Tensor(logits)),
                                      np.ones((1, 1, 3, 3), np.float32))

    def test_ties_resolve_to_background(self):
        logits = np.ones((1, 2, 3, 3), np.float32)
        np.testing.assert_array_equal(predict_mask(Tensor(logits)),
                                      np.zeros((1, 1, 3, 3), np.float32))

    def test_monotone_in_foreground_logit(self, rng):
        for _ in range(20):
            logits = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
            base = predict_mask(Tensor(logits))
            bumped = logits.copy()
            bumped[:, 1] += float(rng.uniform(0.0, 2.0))
            grown = predict_mask(Tensor(bumped))
            assert (grown >= base).all()

    def test_invariant_to_common_logit_shift(self, rng):
        logits = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        shifted = logits + 3.25
        np.testing.assert_array_equal(predict_mask(Tensor(logits)),
                                      predict_mask(Tensor(shifted)))
