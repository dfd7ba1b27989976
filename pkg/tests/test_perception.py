import itertools

import numpy as np
import pytest

from tribrain.numerics import ShapeError, Tensor, grad_check, ops
from tribrain.perception import Backbone, ImageBatch, Perception, encode, positional_embed, project_kv


@pytest.fixture
def backbone():
    return Backbone(3, (4, 6, 8), np.random.default_rng(0))


class TestEncode:
    def test_zero_image_gives_positional_embedding(self, backbone):
        fmap = encode(ImageBatch(np.zeros((2, 16, 16, 3))), backbone)
        np.testing.assert_array_equal(fmap.features.data, np.broadcast_to(positional_embed(2, 2, 8), (2, 2, 2, 8)))

    def test_stride_arithmetic(self, backbone):
        fmap = encode(ImageBatch(np.random.default_rng(1).random((3, 16, 16, 3))), backbone)
        assert fmap.grid == (2, 2)
        assert fmap.flat.shape == (3, 4, 8)

    def test_identical_images_identical_rows(self, backbone):
        img = np.random.default_rng(2).random((1, 16, 16, 3))
        fmap = encode(ImageBatch(np.concatenate([img, img])), backbone)
        np.testing.assert_array_equal(fmap.features.data[0], fmap.features.data[1])

    def test_flat_and_pooled_consistency(self, backbone):
        fmap = encode(np.random.default_rng(3).random((2, 32, 16, 3)), backbone)
        B, h, w, d = fmap.features.shape
        np.testing.assert_array_equal(fmap.flat.data, fmap.features.data.reshape(B, h * w, d))
        np.testing.assert_allclose(fmap.pooled.data, fmap.features.data.mean(axis=(1, 2)), atol=1e-10)

    def test_deterministic(self, backbone):
        x = np.random.default_rng(4).random((2, 16, 16, 3))
        np.testing.assert_array_equal(encode(x, backbone).features.data, encode(x, backbone).features.data)

    @pytest.mark.parametrize("shape", [(1, 4, 4, 3), (1, 12, 16, 3)])
    def test_too_small_or_misaligned_rejected(self, backbone, shape):
        with pytest.raises(ShapeError):
            encode(np.zeros(shape), backbone)

    def test_non_finite_pixels_rejected(self):
        bad = np.zeros((1, 8, 8, 3))
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            ImageBatch(bad)

    def test_gradient_reaches_backbone(self):
        rng = np.random.default_rng(5)
        bb = Backbone(3, (4, 4, 16), rng)
        x = rng.random((2, 16, 16, 3))
        R = rng.normal(size=(2, 2, 2, 16))
        kernel = bb.blocks[0].kernel
        err = grad_check(lambda _: (encode(x, bb).features * Tensor(R)).sum(), kernel, max_components=30)
        assert err < 1e-4


class TestPositionalEmbedding:
    def test_injective_on_small_grids(self):
        for h, w in [(2, 3), (4, 4), (8, 8)]:
            emb = positional_embed(h, w, 16).reshape(h * w, 16)
            for a, b in itertools.combinations(range(h * w), 2):
                assert not np.allclose(emb[a], emb[b])

    def test_channel_zero_row_zero(self):
        emb = positional_embed(4, 4, 8)
        np.testing.assert_array_equal(emb[0, :, 0], 0.0)

    def test_halves_encode_row_and_column(self):
        emb = positional_embed(3, 5, 8)
        np.testing.assert_array_equal(emb[:, 0, :4], emb[:, 4, :4])
        np.testing.assert_array_equal(emb[0, :, 4:], emb[2, :, 4:])

    def test_repeatable(self):
        np.testing.assert_array_equal(positional_embed(4, 4, 6), positional_embed(4, 4, 6))

    def test_odd_channels_rejected(self):
        with pytest.raises(ValueError):
            positional_embed(4, 4, 7)


class TestProjectKV:
    @pytest.fixture
    def fmap(self, backbone):
        return encode(np.random.default_rng(6).random((2, 16, 16, 3)), backbone)

    def test_identity_keys(self, fmap):
        kv = project_kv(fmap, Tensor(np.eye(8)), Tensor(np.zeros((8, 5))))
        np.testing.assert_array_equal(kv.keys.data, fmap.flat.data)
        np.testing.assert_array_equal(kv.values.data, 0.0)

    def test_matches_loop_oracle(self, fmap):
        rng = np.random.default_rng(7)
        Wk, Wv = rng.normal(size=(8, 3)), rng.normal(size=(8, 4))
        kv = project_kv(fmap, Tensor(Wk), Tensor(Wv))
        F = fmap.flat.data
        ref = np.zeros((2, 4, 3))
        for b in range(2):
            for n in range(4):
                for k in range(3):
                    ref[b, n, k] = sum(F[b, n, i] * Wk[i, k] for i in range(8))
        np.testing.assert_allclose(kv.keys.data, ref, atol=1e-12)
        assert kv.values.shape == (2, 4, 4)

    def test_dim_mismatch_rejected(self, fmap):
        with pytest.raises(ShapeError):
            project_kv(fmap, Tensor(np.eye(7)), Tensor(np.eye(8)))

    def test_perception_module(self):
        p = Perception(3, (4, 4, 8), 6, 5, np.random.default_rng(8))
        fmap, kv = p(np.random.default_rng(9).random((2, 16, 16, 3)))
        assert kv.keys.shape == (2, 4, 6) and kv.values.shape == (2, 4, 5)
        assert kv.keys.shape[:2] == fmap.flat.shape[:2]
