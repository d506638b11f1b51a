"""Encoder topology: shapes, lengths, locality, parameter accounting."""

import numpy as np
import pytest

from scriptid import encoder, nn


CFG = encoder.EncoderConfig()


def _rand_params(seed=0, dtype=np.float32):
    return encoder.init_params(CFG, np.random.default_rng(seed), dtype=dtype)


def _image(rng, w):
    return rng.uniform(0.0, 1.0, size=(40, w, 1)).astype(np.float32)


class TestInceptionModule:
    def test_channel_arithmetic(self):
        # reduce=16 twice plus expand=32 twice
        assert CFG.inception_channels(0) == 96

    def test_spatial_dims_preserved(self):
        rng = np.random.default_rng(1)
        params = _rand_params()
        x = nn.Tensor(rng.uniform(0, 1, size=(1, 10, 23, 16)).astype(np.float32))
        out = encoder.inception_module(x, params, "incep0")
        assert out.shape == (1, 10, 23, 96)

    def test_zero_weights_zero_output(self):
        params = _rand_params()
        zeroed = {k: nn.Tensor(np.zeros_like(v.data)) for k, v in params.items()}
        x = nn.Tensor(np.random.default_rng(2).uniform(0, 1, (1, 4, 6, 16)).astype(np.float32))
        out = encoder.inception_module(x, zeroed, "incep0")
        assert out.shape == (1, 4, 6, 96)
        assert np.all(out.data == 0.0)


class TestEncode:
    def test_default_config_shapes(self):
        params = _rand_params()
        rng = np.random.default_rng(3)
        out = encoder.encode(_image(rng, 40), CFG, params)
        assert out.values.shape == (10, 64)
        assert out.length == 10
        out = encoder.encode(_image(rng, 41), CFG, params)
        assert out.values.shape == (11, 64)

    def test_deterministic(self):
        params = _rand_params()
        img = _image(np.random.default_rng(4), 64)
        a = encoder.encode(img, CFG, params).values.data
        b = encoder.encode(img, CFG, params).values.data
        assert np.array_equal(a, b)

    def test_wrong_height_rejected(self):
        params = _rand_params()
        with pytest.raises(nn.ShapeError):
            encoder.encode(np.zeros((39, 50, 1), dtype=np.float32), CFG, params)

    def test_wrong_channels_rejected(self):
        params = _rand_params()
        with pytest.raises(nn.ShapeError):
            encoder.encode(np.zeros((40, 50, 2), dtype=np.float32), CFG, params)

    def test_out_of_range_pixels_rejected(self):
        params = _rand_params()
        img = np.full((40, 50, 1), 1.5, dtype=np.float32)
        with pytest.raises(ValueError):
            encoder.encode(img, CFG, params)


class TestOutputLength:
    def test_anchors(self):
        assert encoder.output_length(1, CFG) == 1
        assert encoder.output_length(100, CFG) == 25
        assert encoder.output_length(7, CFG) == 2  # ceil(ceil(7/2)/2)

    def test_matches_encode_for_all_widths(self):
        params = _rand_params()
        rng = np.random.default_rng(5)
        for w in range(1, 513):
            expect = encoder.output_length(w, CFG)
            assert expect == -(-w // 4)
        # Spot-check actual encodes on a sparse grid (full encode is slow).
        for w in [1, 2, 3, 4, 5, 7, 8, 31, 64, 101, 257, 512]:
            out = encoder.encode(_image(rng, w), CFG, params)
            assert out.length == encoder.output_length(w, CFG), w


class TestLocality:
    def test_rightmost_band_only_touches_trailing_frames(self):
        params = _rand_params()
        rng = np.random.default_rng(6)
        img = _image(rng, 400)
        base = encoder.encode(img, CFG, params).values.data
        tweaked = img.copy()
        tweaked[:, -4:, :] = 1.0 - tweaked[:, -4:, :]
        changed = encoder.encode(tweaked, CFG, params).values.data
        rf, stride = encoder.receptive_field(CFG)
        w_prime = encoder.output_length(400, CFG)
        frame_reach = -(-rf // stride)
        diff = np.abs(base - changed).max(axis=1)
        assert np.all(diff[: w_prime - frame_reach] == 0.0)
        assert diff[-1] > 0.0  # the change is visible somewhere

    def test_receptive_field_value(self):
        rf, stride = encoder.receptive_field(CFG)
        assert stride == 4
        assert rf == 39  # 5 + 1*2 + 4*4 + 4*4 with the default stages


class TestParameterCount:
    def test_hand_computed_default(self):
        # stem 416, inceptions 18560 + 23680, projection 30784
        assert encoder.parameter_count(CFG) == 73440

    def test_matches_initialized_params(self):
        params = _rand_params()
        total = sum(int(np.prod(p.shape)) for p in params.values())
        assert total == encoder.parameter_count(CFG)

    def test_scales_with_config(self):
        small = encoder.EncoderConfig(inception=(encoder.InceptionSpec(8, 16),))
        params = encoder.init_params(small, np.random.default_rng(0))
        total = sum(int(np.prod(p.shape)) for p in params.values())
        assert total == encoder.parameter_count(small)


class TestBatching:
    def test_batch_of_one_equals_unbatched_bit_for_bit(self):
        params = _rand_params()
        img = _image(np.random.default_rng(7), 56)
        single = encoder.encode(img, CFG, params).values.data
        batch = nn.Tensor(img[None])
        feats, mask = encoder.encode_batch(batch, [56], CFG, params)
        assert np.array_equal(feats.data[0], single)
        assert mask.shape == (1, 14)
        assert mask.all()

    def test_padded_batch_matches_each_single(self):
        params = _rand_params()
        rng = np.random.default_rng(8)
        widths = [40, 56, 48]
        imgs = [_image(rng, w) for w in widths]
        wmax = max(widths)
        padded = np.zeros((3, 40, wmax, 1), dtype=np.float32)
        for i, (img, w) in enumerate(zip(imgs, widths)):
            padded[i, :, :w, :] = img
        feats, mask = encoder.encode_batch(nn.Tensor(padded), widths, CFG, params)
        for i, (img, w) in enumerate(zip(imgs, widths)):
            single = encoder.encode(img, CFG, params).values.data
            n = encoder.output_length(w, CFG)
            assert mask[i, :n].all() and not mask[i, n:].any()
            assert np.allclose(feats.data[i, :n], single, atol=1e-6)
            assert np.all(feats.data[i, n:] == 0.0)

    def test_config_json_round_trip(self):
        d = CFG.to_dict()
        again = encoder.EncoderConfig.from_dict(d)
        assert again == CFG
