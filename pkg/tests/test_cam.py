"""CAM head: masking, projection, refinement, weights, prior synthesis."""

import numpy as np
import pytest

import camseg.tensor as T
from camseg.cam import (CamHead, aggregate_kshot, classification_loss,
                        mask_support, query_prior)
from camseg.errors import ShapeError, ValidationError
from camseg.tensor import Tensor


def make_head(n_classes=10, in_channels=64, seed=0):
    return CamHead(in_channels, n_classes, np.random.default_rng(seed))


class TestMaskSupport:
    def test_all_ones_mask_is_identity(self, rng):
        img = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
        out = mask_support(img, np.ones((1, 1, 8, 8), np.float32))
        np.testing.assert_array_equal(out.data, img.data)

    def test_all_zeros_mask_blanks_image(self, rng):
        img = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
        out = mask_support(img, np.zeros((1, 1, 8, 8), np.float32))
        np.testing.assert_array_equal(out.data, np.zeros_like(img.data))

    def test_checkerboard_zeroes_half_the_pixels(self):
        img = Tensor(np.ones((1, 3, 8, 8), np.float32))
        mask = np.indices((8, 8)).sum(axis=0) % 2
        out = mask_support(img, mask[None, None].astype(np.float32))
        assert int(np.count_nonzero(out.data)) == 3 * 32  # half of 64 pixels, 3 channels

    def test_non_binary_mask_rejected(self, rng):
        img = Tensor(rng.random((1, 3, 4, 4)).astype(np.float32))
        with pytest.raises(ValidationError, match="binary"):
            mask_support(img, np.full((1, 1, 4, 4), 0.5, np.float32))

    def test_idempotent(self, rng):
        img = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
        mask = rng.integers(0, 2, (1, 1, 8, 8)).astype(np.float32)
        once = mask_support(img, mask)
        twice = mask_support(once, mask)
        np.testing.assert_array_equal(once.data, twice.data)


class TestProjection:
    def test_channel_average_weight(self, rng):
        head = make_head(n_classes=1, in_channels=4)
        head.project.weight.data = np.full((1, 4, 1, 1), 0.25, np.float32)
        head.project.bias.data = np.zeros(1, np.float32)
        feat = rng.random((1, 4, 3, 3)).astype(np.float32)
        out = head.project_to_classes(Tensor(feat))
        np.testing.assert_allclose(out.data[0, 0], feat.mean(axis=1)[0], atol=1e-6)

    def test_zero_weights_give_zero_stack(self, rng):
        head = make_head()
        head.project.weight.data = np.zeros_like(head.project.weight.data)
        head.project.bias.data = np.zeros_like(head.project.bias.data)
        out = head.project_to_classes(Tensor(rng.random((1, 64, 8, 8)).astype(np.float32)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 10, 8, 8), np.float32))

    def test_output_shape(self, rng):
        head = make_head()
        out = head.project_to_classes(Tensor(rng.random((1, 64, 8, 8)).astype(np.float32)))
        assert out.shape == (1, 10, 8, 8)


class TestRefinement:
    def test_zero_branches_give_zero(self, rng):
        head = make_head(n_classes=3, in_channels=8)
        for layer in (head.refine3, head.refine1a, head.refine1b):
            layer.weight.data = np.zeros_like(layer.weight.data)
            layer.bias.data = np.zeros_like(layer.bias.data)
        out = head.refine_multiscale(Tensor(rng.random((1, 3, 5, 5)).astype(np.float32)))
        np.testing.assert_array_equal(out.data, np.zeros_like(out.data))

    def test_two_identity_branches_double_the_input(self, rng):
        head = make_head(n_classes=3, in_channels=8)
        eye = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
        head.refine3.weight.data = np.zeros_like(head.refine3.weight.data)
        head.refine1a.weight.data = eye.copy()
        head.refine1b.weight.data = eye.copy()
        for layer in (head.refine3, head.refine1a, head.refine1b):
            layer.bias.data = np.zeros_like(layer.bias.data)
        x = rng.random((1, 3, 4, 4)).astype(np.float32)
        out = head.refine_multiscale(Tensor(x))
        np.testing.assert_allclose(out.data, 2 * x, atol=1e-6)

    @pytest.mark.parametrize("h,w", [(1, 1), (2, 5), (8, 8)])
    def test_shape_preserved(self, rng, h, w):
        head = make_head(n_classes=4, in_channels=8)
        out = head.refine_multiscale(Tensor(rng.random((1, 4, h, w)).astype(np.float32)))
        assert out.shape == (1, 4, h, w)

    def test_channel_count_enforced(self, rng):
        head = make_head(n_classes=4, in_channels=8)
        with pytest.raises(ShapeError):
            head.refine_multiscale(Tensor(rng.random((1, 5, 3, 3)).astype(np.float32)))


class TestClassificationLoss:
    def test_zero_scores_give_log2(self):
        scores = Tensor(np.zeros((1, 10), np.float32))
        labels = np.where(np.arange(10) == 3, 1.0, -1.0)[None]
        assert classification_loss(scores, labels).item() == pytest.approx(np.log(2), abs=1e-7)

    def test_large_aligned_margins_drive_loss_to_zero(self):
        labels = np.array([[1.0, -1.0, 1.0]], np.float32)
        scores = Tensor(labels * 50.0)
        assert classification_loss(scores, labels).item() < 1e-6

    def test_hand_computed_case(self):
        # labels (+1,-1), scores (2,-2): both margins are +2,
        # mean softplus(-2) = log(1 + e^-2)
        loss = classification_loss(Tensor(np.array([[2.0, -2.0]], np.float32)),
                                   np.array([[1.0, -1.0]]))
        assert loss.item() == pytest.approx(np.log1p(np.exp(-2.0)), abs=1e-6)

    def test_convex_in_scores(self, rng):
        labels = rng.choice([-1.0, 1.0], (1, 8)).astype(np.float32)
        for _ in range(20):
            a = rng.standard_normal((1, 8)).astype(np.float32)
            b = rng.standard_normal((1, 8)).astype(np.float32)
            mid = classification_loss(Tensor((a + b) / 2), labels).item64()
            avg = 0.5 * (classification_loss(Tensor(a), labels).item64()
                         + classification_loss(Tensor(b), labels).item64())
            assert mid <= avg + 1e-7

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            classification_loss(Tensor(np.zeros((1, 3), np.float32)), np.ones((1, 4)))

    def test_invalid_labels_rejected(self):
        with pytest.raises(ValidationError):
            classification_loss(Tensor(np.zeros((1, 3), np.float32)), np.array([[1.0, 0.0, -1.0]]))


class TestQueryPrior:
    def test_one_hot_selects_single_channel(self, rng):
        stack = Tensor(rng.standard_normal((1, 5, 4, 4)).astype(np.float32))
        weights = np.zeros((1, 5), np.float32)
        weights[0, 2] = 1.0
        out = query_prior(stack, Tensor(weights))
        np.testing.assert_allclose(out.data[0, 0], stack.data[0, 2], atol=1e-7)

    def test_zero_weights_give_zero_prior(self, rng):
        stack = Tensor(rng.standard_normal((1, 5, 4, 4)).astype(np.float32))
        out = query_prior(stack, Tensor(np.zeros((1, 5), np.float32)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 1, 4, 4), np.float32))

    def test_matches_per_pixel_dot_product(self, rng):
        stack = rng.standard_normal((1, 3, 2, 2)).astype(np.float32)
        weights = rng.standard_normal((1, 3)).astype(np.float32)
        out = query_prior(Tensor(stack), Tensor(weights)).data
        for i in range(2):
            for j in range(2):
                expected = sum(float(stack[0, c, i, j]) * float(weights[0, c]) for c in range(3))
                assert abs(float(out[0, 0, i, j]) - expected) < 1e-6

    def test_linear_in_weights(self, rng):
        stack = Tensor(rng.standard_normal((1, 6, 3, 3)).astype(np.float32))
        a = rng.standard_normal((1, 6)).astype(np.float32)
        b = rng.standard_normal((1, 6)).astype(np.float32)
        combo = query_prior(stack, Tensor(2.0 * a + 3.0 * b)).data
        parts = 2.0 * query_prior(stack, Tensor(a)).data + 3.0 * query_prior(stack, Tensor(b)).data
        np.testing.assert_allclose(combo, parts, atol=1e-5)

    def test_channel_permutation_equivariance(self, rng):
        stack = rng.standard_normal((1, 6, 3, 3)).astype(np.float32)
        weights = rng.standard_normal((1, 6)).astype(np.float32)
        perm = rng.permutation(6)
        base = query_prior(Tensor(stack), Tensor(weights)).data
        permuted = query_prior(Tensor(stack[:, perm]), Tensor(weights[:, perm])).data
        np.testing.assert_array_equal(base, permuted)

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            query_prior(Tensor(np.zeros((1, 4, 2, 2), np.float32)),
                        Tensor(np.zeros((1, 5), np.float32)))


class TestAggregateKshot:
    def test_single_vector_identity(self, rng):
        v = Tensor(rng.standard_normal((1, 10)).astype(np.float32))
        np.testing.assert_array_equal(aggregate_kshot([v]).data, v.data)

    def test_equal_vectors_reproduce_exactly(self, rng):
        v = Tensor(rng.standard_normal((1, 10)).astype(np.float32))
        out = aggregate_kshot([v, Tensor(v.data.copy())])
        np.testing.assert_array_equal(out.data, v.data)

    def test_five_random_vectors_mean(self, rng):
        vs = [rng.standard_normal((1, 7)).astype(np.float32) for _ in range(5)]
        out = aggregate_kshot([Tensor(v) for v in vs]).data
        expected = np.mean(np.stack([v.astype(np.float64) for v in vs]), axis=0)
        np.testing.assert_allclose(out, expected.astype(np.float32), atol=1e-7)

    def test_empty_list_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_kshot([])


class TestWeightSharing:
    def test_support_and_query_paths_use_identical_parameters(self, rng):
        from camseg.backbone import BackboneConfig
        from camseg.model import FewShotSegModel, ModelConfig

        model = FewShotSegModel(ModelConfig(backbone=BackboneConfig(), n_classes=10))
        img = rng.random((1, 3, 16, 16)).astype(np.float32)
        # one head object serves both branches
        support_scores = model.class_scores(Tensor(img), np.ones((1, 1, 16, 16), np.float32))
        query_refined = model.cam(model.backbone(Tensor(img)))
        query_scores = model.cam.class_weights(query_refined)
        np.testing.assert_array_equal(support_scores.data, query_scores.data)

    def test_zero_support_image_with_zero_biases_gives_zero_weights(self):
        from camseg.backbone import BackboneConfig
        from camseg.model import FewShotSegModel, ModelConfig

        model = FewShotSegModel(ModelConfig(backbone=BackboneConfig(), n_classes=10))
        scores = model.class_scores(Tensor(np.zeros((1, 3, 16, 16), np.float32)))
        assert scores.shape == (1, 10)
        np.testing.assert_array_equal(scores.data, np.zeros((1, 10), np.float32))
