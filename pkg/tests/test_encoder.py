import numpy as np
import pytest

from capvit.encoder import (
    EncoderConfig,
    encode,
    init_encoder,
    interpolate_pos,
    mean_pool,
    patchify,
    unpatchify,
)
from capvit.errors import ConfigError, ShapeError
from capvit.tensor import Tensor


def small_config(**kw):
    base = dict(image_size=16, patch_size=4, width=24, depth=2, heads=3)
    base.update(kw)
    return EncoderConfig(**base)


class TestConfig:
    def test_divisibility_checks(self):
        with pytest.raises(ConfigError):
            EncoderConfig(image_size=30, patch_size=4, width=24, depth=1, heads=3)
        with pytest.raises(ConfigError):
            EncoderConfig(image_size=16, patch_size=4, width=25, depth=1, heads=3)

    def test_token_count(self):
        assert small_config().num_tokens == 16
        assert small_config(image_size=32).num_tokens == 64


class TestPatchify:
    def test_2x2_image_patch_1(self):
        img = np.arange(12.0).reshape(2, 2, 3)
        tokens = patchify(img, 1)
        assert tokens.shape == (4, 3)
        assert np.array_equal(tokens[0], img[0, 0])
        assert np.array_equal(tokens[3], img[1, 1])

    def test_full_image_patch(self):
        img = np.arange(48.0).reshape(4, 4, 3)
        tokens = patchify(img, 4)
        assert tokens.shape == (1, 48)
        assert np.array_equal(tokens[0], img.reshape(-1))

    def test_reassembly_bit_exact(self):
        rng = np.random.default_rng(0)
        img = rng.normal(size=(8, 8, 3))
        assert np.array_equal(unpatchify(patchify(img, 2), 2), img)

    def test_size_mismatch(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((8, 6, 3)), 2)


class TestEncode:
    def test_depth_zero_is_projection_plus_positional(self):
        cfg = small_config(depth=0)
        rng = np.random.default_rng(1)
        weights = init_encoder(cfg, rng, np.float64)
        images = np.random.default_rng(2).random((2, 16, 16, 3))
        out = encode(images, weights, cfg)
        from capvit.tensor import layernorm, linear

        patches = np.stack([patchify(images[i], 4) for i in range(2)])
        expected = layernorm(
            linear(Tensor(patches), weights.patch_proj) + weights.pos,
            weights.final_g,
            weights.final_b,
        )
        assert np.array_equal(out.data, expected.data)

    def test_output_shape(self):
        cfg = small_config()
        weights = init_encoder(cfg, np.random.default_rng(3), np.float64)
        out = encode(np.zeros((5, 16, 16, 3)), weights, cfg)
        assert out.shape == (5, 16, 24)

    def test_no_cross_example_mixing(self):
        cfg = small_config()
        weights = init_encoder(cfg, np.random.default_rng(4), np.float64)
        images = np.random.default_rng(5).random((3, 16, 16, 3))
        out = encode(images, weights, cfg).data
        perm = encode(images[::-1].copy(), weights, cfg).data
        assert np.allclose(out[::-1], perm)

    def test_identical_images_identical_outputs(self):
        cfg = small_config()
        weights = init_encoder(cfg, np.random.default_rng(6), np.float64)
        img = np.random.default_rng(7).random((16, 16, 3))
        out = encode(np.stack([img, img]), weights, cfg).data
        assert np.array_equal(out[0], out[1])

    def test_bidirectional_information_flow(self):
        # perturbing the last patch changes token 0 (no causal mask in the encoder)
        cfg = small_config()
        weights = init_encoder(cfg, np.random.default_rng(8), np.float64)
        images = np.random.default_rng(9).random((1, 16, 16, 3))
        base = encode(images, weights, cfg).data[0, 0].copy()
        bumped = images.copy()
        bumped[0, 12:, 12:, :] += 1e-3  # last patch
        moved = encode(bumped, weights, cfg).data[0, 0]
        assert np.abs(moved - base).max() > 0

    def test_mean_pool(self):
        x = Tensor(np.arange(24.0).reshape(2, 3, 4))
        assert np.allclose(mean_pool(x).data, x.data.mean(axis=1))


class TestInterpolatePos:
    def test_identity_grid_bit_identical(self):
        table = np.random.default_rng(10).normal(size=(16, 8))
        out = interpolate_pos(table, 4, 4)
        assert np.array_equal(out, table)
        assert out is not table

    def test_1x1_to_2x2_constant(self):
        table = np.array([[3.0, -1.0]])
        out = interpolate_pos(table, 1, 2)
        assert out.shape == (4, 2)
        assert np.allclose(out, table[0])

    def test_hand_bilinear_2x2_to_3x3(self):
        table = np.array([[0.0], [1.0], [2.0], [3.0]])
        out = interpolate_pos(table, 2, 3).reshape(3, 3)
        expected = np.array([[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]])
        assert np.allclose(out, expected)

    def test_linear_in_table(self):
        rng = np.random.default_rng(11)
        table = rng.normal(size=(9, 5))
        a = 3.7
        lhs = interpolate_pos(a * table, 3, 5)
        rhs = a * interpolate_pos(table, 3, 5)
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_non_square_token_count_rejected(self):
        with pytest.raises(ShapeError):
            interpolate_pos(np.zeros((15, 4)), 4, 2)

    def test_same_grid_encode_unchanged(self):
        cfg = small_config()
        weights = init_encoder(cfg, np.random.default_rng(12), np.float64)
        images = np.random.default_rng(13).random((2, 16, 16, 3))
        before = encode(images, weights, cfg).data.copy()
        weights.pos = Tensor(interpolate_pos(weights.pos.data, cfg.grid, cfg.grid),
                             requires_grad=True)
        after = encode(images, weights, cfg).data
        assert np.array_equal(before, after)
