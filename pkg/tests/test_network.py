"""Network tests: shape contracts, attention algebra, plain-skip
equivalence, and end-to-end gradient spot checks."""

import numpy as np
import pytest

from handseg import tensor as T
from handseg.network import DenseAttentionNet, ModelConfig, normalize_depth, predict
from handseg.verify import check_losses, toy_end_to_end_check


def tiny_net(dtype=np.float64, seed=1):
    return DenseAttentionNet(
        ModelConfig(n_levels=3, squeeze_channels=2, channels=(4, 8, 8)),
        seed=seed, dtype=dtype)


def force_constant_squeeze(net, source, consumer, value):
    """Zero a squeeze block's convolutions and set its final bias so the
    block emits a constant map."""
    name = f"squeeze{source}to{consumer}"
    for key in (f"{name}.conv1.w", f"{name}.conv1.b", f"{name}.conv2.w"):
        net.params[key].data[...] = 0.0
    net.params[f"{name}.conv2.b"].data[...] = value


def random_depth(rng, n, size):
    return rng.uniform(300.0, 600.0, size=(n, 1, size, size))


class TestModelConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(n_levels=1, channels=(8,))
        with pytest.raises(ValueError):
            ModelConfig(n_levels=3, channels=(8, 8))

    def test_text_round_trip(self):
        cfg = ModelConfig(n_levels=3, squeeze_channels=4, channels=(8, 16, 16),
                          input_size=32)
        back = ModelConfig.from_text(cfg.to_text())
        assert back == cfg


class TestNormalizeDepth:
    def test_invalid_pixels_get_sentinel(self):
        depth = np.full((1, 1, 4, 4), 500.0)
        depth[0, 0, 1, 1] = 0.0
        out = normalize_depth(depth)
        assert out[0, 0, 1, 1] == -1.0

    def test_valid_pixels_zero_mean_unit_scale(self):
        rng = np.random.default_rng(70)
        depth = rng.uniform(300, 700, size=(2, 1, 8, 8))
        out = normalize_depth(depth, dtype=np.float64)
        for i in range(2):
            assert abs(out[i, 0].mean()) < 1e-9
            assert abs(out[i, 0].std() - 1.0) < 1e-9

    def test_uniform_depth_does_not_divide_by_zero(self):
        out = normalize_depth(np.full((1, 1, 4, 4), 400.0))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, 0.0, atol=1e-6)


class TestShapes:
    def test_toy_config_output_shape(self):
        net = DenseAttentionNet(ModelConfig(), seed=2, dtype=np.float32)
        rng = np.random.default_rng(71)
        logits = net.forward(random_depth(rng, 1, 64))
        assert logits.shape == (1, 3, 64, 64)

    def test_indivisible_input_rejected(self):
        net = tiny_net()
        with pytest.raises(T.ShapeError, match="divisible by 4"):
            net.forward(np.full((1, 1, 18, 18), 500.0))

    def test_attention_map_shapes_per_level(self):
        net = tiny_net()
        rng = np.random.default_rng(72)
        x = T.Tensor(normalize_depth(random_depth(rng, 1, 16), np.float64))
        levels = net._encode(x, training=False, update_stats=False)
        k = net.cfg.squeeze_channels
        for i in range(1, 4):
            h = 16 >> (i - 1)
            assert net.fine_attention(levels, i).shape == (1, k, h, h)
            assert net.coarse_attention(levels, i).shape == (1, k, h, h)
            assert net.attend_skip(levels, i).shape == (1, k, h, h)

    def test_deterministic_forward(self):
        net = tiny_net(dtype=np.float32)
        rng = np.random.default_rng(73)
        depth = random_depth(rng, 2, 16)
        a = net.forward(depth).data
        b = net.forward(depth).data
        np.testing.assert_array_equal(a, b)


class TestSqueezeBlock:
    def test_output_channels_always_k(self):
        net = tiny_net()
        for src, c in ((1, 4), (2, 8), (3, 8)):
            x = T.tensor(np.random.default_rng(74).normal(size=(1, c, 8, 8)))
            out = net.squeeze_block(x, src, 1)
            assert out.shape == (1, 2, 8, 8)

    def test_zero_parameters_zero_output(self):
        net = tiny_net()
        force_constant_squeeze(net, 2, 1, 0.0)
        x = T.tensor(np.random.default_rng(75).normal(size=(1, 8, 8, 8)))
        assert not net.squeeze_block(x, 2, 1).data.any()

    def test_gradient_reaches_both_kernels(self):
        net = tiny_net()
        rng = np.random.default_rng(76)
        x = T.tensor(rng.normal(size=(1, 4, 8, 8)))
        T.backward(T.mean_all(net.squeeze_block(x, 1, 2)))
        g1 = net.params["squeeze1to2.conv1.w"].grad
        g2 = net.params["squeeze1to2.conv2.w"].grad
        assert g1 is not None and np.abs(g1).max() > 0
        assert g2 is not None and np.abs(g2).max() > 0


class TestAttention:
    def _levels(self, net, seed=77, size=16):
        rng = np.random.default_rng(seed)
        x = T.Tensor(normalize_depth(random_depth(rng, 1, size), np.float64))
        return net._encode(x, training=False, update_stats=False)

    def test_fine_level1_is_ones(self):
        net = tiny_net()
        out = net.fine_attention(self._levels(net), 1)
        np.testing.assert_array_equal(out.data, np.ones_like(out.data))

    def test_coarse_top_level_is_ones(self):
        net = tiny_net()
        out = net.coarse_attention(self._levels(net), 3)
        np.testing.assert_array_equal(out.data, np.ones_like(out.data))

    def test_fine_level2_is_downsampled_level1_squeeze(self):
        net = tiny_net()
        levels = self._levels(net)
        got = net.fine_attention(levels, 2)
        want = T.bilinear_resample(net.squeeze_block(levels[0], 1, 2), 8, 8)
        np.testing.assert_array_equal(got.data, want.data)

    def test_coarse_second_from_top_is_upsampled_top_squeeze(self):
        net = tiny_net()
        levels = self._levels(net)
        got = net.coarse_attention(levels, 2)
        want = T.bilinear_resample(net.squeeze_block(levels[2], 3, 2), 8, 8)
        np.testing.assert_array_equal(got.data, want.data)

    def test_fine_level3_constant_propagation(self):
        net = tiny_net()
        force_constant_squeeze(net, 1, 3, 0.75)
        force_constant_squeeze(net, 2, 3, 2.0)
        out = net.fine_attention(self._levels(net), 3)
        np.testing.assert_allclose(out.data, 0.75 * 2.0, rtol=1e-12)

    def test_skip_gating_commutative_and_zero_absorbing(self):
        rng = np.random.default_rng(78)
        skip = T.tensor(rng.normal(size=(1, 2, 8, 8)))
        fine = T.tensor(rng.normal(size=(1, 2, 8, 8)))
        coarse = T.tensor(rng.normal(size=(1, 2, 8, 8)))
        a = T.elementwise_mul(T.elementwise_mul(skip, fine), coarse)
        b = T.elementwise_mul(T.elementwise_mul(skip, coarse), fine)
        np.testing.assert_allclose(a.data, b.data, atol=1e-15)
        z = T.elementwise_mul(T.elementwise_mul(skip, fine), T.zeros(skip.shape))
        assert not z.data.any()


class TestPlainSkipEquivalence:
    def test_all_ones_squeezes_reduce_to_plain_skips(self):
        net = tiny_net()
        for i in range(1, 4):
            for j in range(1, 4):
                if i != j:
                    force_constant_squeeze(net, j, i, 1.0)
        rng = np.random.default_rng(79)
        depth = random_depth(rng, 1, 16)
        gated = net.forward(depth, attention=True).data
        plain = net.forward(depth, attention=False).data
        np.testing.assert_array_equal(gated, plain)


class TestPredict:
    def test_peaked_and_tie(self):
        logits = np.zeros((1, 3, 1, 2))
        logits[0, :, 0, 0] = (5.0, 1.0, 1.0)
        logits[0, :, 0, 1] = (1.0, 1.0, 0.0)  # tie between 0 and 1
        out = predict(logits)
        assert out[0, 0, 0] == 0
        assert out[0, 0, 1] == 0

    def test_matches_bruteforce_scan(self):
        rng = np.random.default_rng(80)
        logits = rng.normal(size=(2, 3, 5, 5))
        out = predict(logits)
        for n in range(2):
            for r in range(5):
                for c in range(5):
                    best, arg = -np.inf, 0
                    for ch in range(3):
                        if logits[n, ch, r, c] > best:
                            best, arg = logits[n, ch, r, c], ch
                    assert out[n, r, c] == arg


class TestGradients:
    def test_input_pixel_reaches_output(self):
        net = tiny_net()
        rng = np.random.default_rng(81)
        depth = random_depth(rng, 1, 16)
        eps = 0.5

        def total(d):
            return float(net.forward(d).data.sum())

        d = depth.copy()
        d[0, 0, 7, 9] += eps
        up = total(d)
        d[0, 0, 7, 9] -= 2 * eps
        down = total(d)
        assert abs(up - down) / (2 * eps) > 1e-8

    def test_loss_gradchecks(self):
        for name, err in check_losses(seed=3).items():
            assert err <= 1e-5, name

    def test_end_to_end_parameter_spot_check(self):
        assert toy_end_to_end_check(seed=4, n_samples=20) <= 1e-4


class TestCheckpointRoundTrip:
    def test_save_load_preserves_forward(self, tmp_path):
        net = tiny_net(dtype=np.float32)
        rng = np.random.default_rng(82)
        depth = random_depth(rng, 1, 16)
        # move stats off init values so they round-trip too
        net.forward(depth, training=True)
        want = net.forward(depth).data
        path = tmp_path / "net.ckpt"
        net.save(path)
        back = DenseAttentionNet.load(path)
        assert back.cfg == net.cfg
        np.testing.assert_allclose(back.forward(depth).data, want, atol=1e-6)
