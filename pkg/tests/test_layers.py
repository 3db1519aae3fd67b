import math
import zlib

import numpy as np
import pytest

from ecgmi.errors import OddDimensions, ShapeMismatch
from ecgmi.nn import layers as L

from gradcheck import CHECKS, TOL, numeric_grad, rel_error


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = max(max(CHECKS[name](rng)) for _ in range(20))
    assert worst < TOL


def test_relu_examples():
    np.testing.assert_array_equal(L.relu(np.array([-1.0, 0.0, 2.5])), [0, 0, 2.5])
    np.testing.assert_array_equal(L.relu_backward(np.array([3.0, 4.0]), np.array([-1.0, 2.0])), [0, 4])
    assert L.relu_backward(np.array([1.0]), np.array([0.0]))[0] == 0


class TestConv:
    def test_identity_kernel(self):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1
        y, _ = L.conv3x3_forward(np.array([[[5.0]]]), w, np.zeros(1))
        np.testing.assert_array_equal(y, [[[5.0]]])

    def test_padded_overlap_counts(self):
        y, _ = L.conv3x3_forward(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
        np.testing.assert_array_equal(y[0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_matches_direct_correlation(self, rng):
        x = rng.normal(size=(2, 3, 5, 4))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        y, _ = L.conv3x3_forward(x, w, b)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(y)
        for n in range(2):
            for o in range(4):
                for i in range(5):
                    for j in range(4):
                        ref[n, o, i, j] = np.sum(xp[n, :, i : i + 3, j : j + 3] * w[o]) + b[o]
        np.testing.assert_allclose(y, ref, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            L.conv3x3_forward(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))

    def test_first_layer_shape(self):
        y, _ = L.conv3x3_forward(np.zeros((1, 128, 128)), np.zeros((64, 1, 3, 3)), np.zeros(64))
        assert y.shape == (64, 128, 128)


class TestPool:
    def test_block_max(self):
        y, _ = L.maxpool2x2_forward(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        np.testing.assert_array_equal(y, [[[4.0]]])

    def test_halves_spatial_dims(self):
        y, _ = L.maxpool2x2_forward(np.zeros((64, 128, 128)))
        assert y.shape == (64, 64, 64)

    def test_tie_routes_to_first(self):
        y, cache = L.maxpool2x2_forward(np.full((1, 1, 2, 2), 7.0))
        g = L.maxpool2x2_backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])

    def test_odd(self):
        with pytest.raises(OddDimensions):
            L.maxpool2x2_forward(np.zeros((1, 3, 4)))


class TestFc:
    def test_hand_arithmetic(self):
        y, _ = L.fc_forward(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(y, [3, 8])

    def test_identity(self, rng):
        x = rng.normal(size=6)
        np.testing.assert_array_equal(L.fc_forward(x, np.eye(6), np.zeros(6))[0], x)

    def test_flatten_order_is_channel_row_col(self):
        x = np.arange(8.0).reshape(1, 2, 2, 2)
        w = np.zeros((1, 8))
        w[0, 5] = 1  # channel 1, row 0, col 1
        assert L.fc_forward(x, w, np.zeros(1))[0][0, 0] == x[0, 1, 0, 1]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            L.fc_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


class TestDropout:
    def test_inference_and_rate_zero_are_identity(self, rng):
        x = rng.normal(size=10)
        assert L.dropout(x, 0.5, False)[0] is x
        np.testing.assert_array_equal(L.dropout(x, 0.0, True, rng)[0], x)

    def test_law_of_large_numbers(self):
        y, _ = L.dropout(np.ones(10**6), 0.5, True, np.random.default_rng(7))
        assert y.mean() == pytest.approx(1.0, abs=0.01)
        assert np.mean(y == 0) == pytest.approx(0.5, abs=0.01)

    def test_deterministic_given_rng(self):
        a, _ = L.dropout(np.ones(50), 0.5, True, np.random.default_rng(1))
        b, _ = L.dropout(np.ones(50), 0.5, True, np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)

    def test_rate_validated(self):
        with pytest.raises(ValueError):
            L.dropout(np.ones(3), 1.0, True, np.random.default_rng(0))


class TestSoftmax:
    def test_symmetric_logits(self):
        loss, p, g = L.softmax_xent(np.zeros(2), 0)
        assert loss == pytest.approx(math.log(2))
        np.testing.assert_allclose(p, [0.5, 0.5])
        np.testing.assert_allclose(g, [-0.5, 0.5])

    def test_no_overflow(self):
        loss, p, _ = L.softmax_xent(np.array([1000.0, 0.0]), 0)
        np.testing.assert_allclose(p, [1, 0])
        assert np.isfinite(loss) and loss < 1e-300 + 1e-12

    def test_single_vector_gradient_tight(self, rng):
        for _ in range(20):
            z = rng.normal(size=2) * 2
            t = int(rng.integers(2))
            _, _, g = L.softmax_xent(z, t)
            assert rel_error(g, numeric_grad(lambda: L.softmax_xent(z, t)[0], z)) < 1e-6

    def test_bad_target(self):
        with pytest.raises(ShapeMismatch):
            L.softmax_xent(np.zeros(2), 2)
