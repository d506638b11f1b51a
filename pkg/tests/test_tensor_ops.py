"""Forward semantics of the tensor op set."""

import math

import numpy as np
import pytest

from scriptid import nn


class TestConv2d:
    def test_identity_kernel(self):
        x = nn.Tensor(np.full((1, 1, 1), 5.0))
        w = nn.Tensor(np.ones((1, 1, 1, 1)))
        out = nn.conv2d(x, w, (1, 1))
        assert out.shape == (1, 1, 1)
        assert out.item() == 5.0

    def test_same_ceil_rule(self):
        x = nn.Tensor(np.zeros((40, 100, 1), dtype=np.float32))
        w = nn.Tensor(np.zeros((5, 5, 1, 16), dtype=np.float32))
        out = nn.conv2d(x, w, (2, 2))
        assert out.shape == (20, 50, 16)

    def test_hand_convolution_with_bottom_right_padding(self):
        # 3x3 of ones, 2x2 ones kernel, stride 1: the odd padding column/row
        # lands at the bottom/right, so the corner window sees one element.
        x = nn.Tensor(np.ones((3, 3, 1)))
        w = nn.Tensor(np.ones((2, 2, 1, 1)))
        out = nn.conv2d(x, w, (1, 1)).data[:, :, 0]
        assert out.shape == (3, 3)
        assert out[1, 1] == 4.0
        assert out[2, 2] == 1.0
        assert out[0, 0] == 4.0
        assert out[2, 0] == 2.0

    def test_channel_mismatch_rejected(self):
        x = nn.Tensor(np.zeros((4, 4, 2)))
        w = nn.Tensor(np.zeros((3, 3, 3, 5)))
        with pytest.raises(nn.ShapeError) as err:
            nn.conv2d(x, w, (1, 1))
        assert "(4, 4, 2)" in str(err.value) and "(3, 3, 3, 5)" in str(err.value)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(7)
        imgs = rng.normal(size=(3, 8, 10, 2)).astype(np.float32)
        w = nn.Tensor(rng.normal(size=(3, 3, 2, 4)).astype(np.float32))
        batched = nn.conv2d(nn.Tensor(imgs), w, (2, 2)).data
        for i in range(3):
            single = nn.conv2d(nn.Tensor(imgs[i]), w, (2, 2)).data
            assert np.array_equal(batched[i], single)


class TestPool:
    def test_max_window(self):
        x = nn.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None])
        out = nn.pool(x, "max", (2, 2), (2, 2))
        assert out.shape == (1, 1, 1)
        assert out.item() == 4.0

    def test_avg_window(self):
        x = nn.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None])
        assert nn.pool(x, "avg", (2, 2), (2, 2)).item() == 2.5

    def test_avg_edge_counts_in_bounds_only(self):
        x = nn.Tensor(np.array([[3.0, 6.0, 9.0]])[:, :, None])
        out = nn.pool(x, "avg", (1, 2), (1, 1)).data[0, :, 0]
        assert np.allclose(out, [4.5, 7.5, 9.0])

    def test_max_ignores_padding(self):
        x = nn.Tensor(np.full((1, 3, 1), -5.0))
        out = nn.pool(x, "max", (1, 2), (1, 1)).data
        assert np.all(out == -5.0)


class TestActivations:
    def test_relu6_clips_at_six(self):
        out = nn.activate(nn.Tensor(np.array([7.0, -1.0, 3.0])), "relu6")
        assert np.allclose(out.data, [6.0, 0.0, 3.0])

    def test_tanh_and_sigmoid_at_zero(self):
        z = nn.Tensor(np.array([0.0]))
        assert nn.tanh(z).data[0] == 0.0
        assert nn.sigmoid(z).data[0] == 0.5

    def test_linear_is_identity(self):
        out = nn.activate(nn.Tensor(np.array([-3.25])), "linear")
        assert out.data[0] == np.float32(-3.25)

    def test_sigmoid_stable_at_extremes(self):
        out = nn.sigmoid(nn.Tensor(np.array([-800.0, 800.0], dtype=np.float64)))
        assert np.allclose(out.data, [0.0, 1.0])

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            nn.activate(nn.Tensor(np.zeros(1)), "gelu")


class TestFullyConnected:
    def test_zero_params_give_zeros(self):
        x = nn.Tensor(np.array([1.0, -2.0, 3.0]))
        w = nn.Tensor(np.zeros((3, 4)))
        b = nn.Tensor(np.zeros(4))
        assert np.all(nn.fully_connected(x, w, b).data == 0.0)

    def test_identity_weights(self):
        x = nn.Tensor(np.array([1.5, -0.5]))
        w = nn.Tensor(np.eye(2))
        b = nn.Tensor(np.zeros(2))
        assert np.allclose(nn.fully_connected(x, w, b).data, x.data)

    def test_hand_matrix_multiply(self):
        x = nn.Tensor(np.array([1.0, 2.0]))
        w = nn.Tensor(np.eye(2))
        b = nn.Tensor(np.ones(2))
        assert np.allclose(nn.fully_connected(x, w, b).data, [2.0, 3.0])

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.fully_connected(nn.Tensor(np.zeros(3)), nn.Tensor(np.zeros((4, 2))), nn.Tensor(np.zeros(2)))


class TestSoftmax:
    def test_symmetry(self):
        out = nn.softmax(nn.Tensor(np.array([0.0, 0.0])))
        assert np.allclose(out.data, [0.5, 0.5])

    def test_no_overflow(self):
        out = nn.softmax(nn.Tensor(np.array([1000.0, 0.0])))
        assert np.isfinite(out.data).all()
        assert out.data[0] > 0.999

    def test_closed_form(self):
        out = nn.softmax(nn.Tensor(np.array([math.log(1.0), math.log(3.0)])))
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-6)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = rng.normal(scale=3.0, size=rng.integers(1, 9)).astype(np.float64)
            p = nn.softmax(nn.Tensor(x)).data
            assert abs(p.sum() - 1.0) <= 1e-6
            q = nn.softmax(nn.Tensor(x + 17.5)).data
            assert np.all(np.abs(p - q) <= 1e-6)


class TestCrossEntropy:
    def test_two_way_uniform(self):
        loss = nn.cross_entropy(nn.Tensor(np.array([0.0, 0.0])), 0)
        assert abs(loss.item() - math.log(2.0)) < 1e-6

    def test_confident_correct(self):
        loss = nn.cross_entropy(nn.Tensor(np.array([10.0, -10.0])), 0)
        assert loss.item() < 1e-6

    def test_from_softmax_example(self):
        loss = nn.cross_entropy(nn.Tensor(np.array([math.log(1.0), math.log(3.0)])), 1)
        assert abs(loss.item() - (-math.log(0.75))) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            nn.cross_entropy(nn.Tensor(np.zeros(3)), 3)


class TestShapeLaw:
    def test_output_shapes_are_functions_of_input_shapes(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            h = int(rng.integers(1, 12))
            w = int(rng.integers(1, 12))
            cin = int(rng.integers(1, 4))
            cout = int(rng.integers(1, 5))
            kh = int(rng.integers(1, 4))
            kw = int(rng.integers(1, 4))
            sh = int(rng.integers(1, 3))
            sw = int(rng.integers(1, 3))
            x = nn.Tensor(rng.normal(size=(h, w, cin)))
            f = nn.Tensor(rng.normal(size=(kh, kw, cin, cout)))
            out = nn.conv2d(x, f, (sh, sw))
            expect = (-(-h // sh), -(-w // sw), cout)
            assert out.shape == expect
            pooled = nn.pool(x, "max", (kh, kw), (sh, sw))
            assert pooled.shape == (-(-h // sh), -(-w // sw), cin)
            pooled = nn.pool(x, "avg", (kh, kw), (sh, sw))
            assert pooled.shape == (-(-h // sh), -(-w // sw), cin)

    def test_determinism(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(9, 13, 3)).astype(np.float32)
        f = rng.normal(size=(3, 3, 3, 5)).astype(np.float32)
        a = nn.conv2d(nn.Tensor(x), nn.Tensor(f), (2, 2)).data
        b = nn.conv2d(nn.Tensor(x), nn.Tensor(f), (2, 2)).data
        assert np.array_equal(a, b)


class TestFiniteGuards:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_forward_raises(self):
        with pytest.raises(nn.NonFiniteError) as err:
            nn.div(nn.Tensor(np.array([1.0])), nn.Tensor(np.array([0.0])))
        assert "div" in str(err.value)

    def test_masked_reductions_need_valid_frames(self):
        x = nn.Tensor(np.zeros((1, 3, 2)))
        with pytest.raises(nn.ShapeError):
            nn.masked_mean_seq(x, np.zeros((1, 3), dtype=bool))
