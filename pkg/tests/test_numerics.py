"""Numeric kernel tests against hand values and naive reference oracles."""

import numpy as np
import pytest

from streamconf.errors import ConfigError, InvalidMaskError, ShapeError
from streamconf.numerics import (
    LstmWeights,
    Rng,
    depthwise_conv1d,
    finite_diff_grad,
    glu,
    glu_backward,
    layer_norm,
    layer_norm_backward,
    lstm_step,
    masked_softmax,
    matmul,
    rel_error,
    sigmoid,
    swish,
    swish_backward,
)


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_hand_1x1(self):
        assert matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))[0, 0] == 11.0

    def test_matches_triple_loop(self):
        rng = Rng(1)
        a = rng.uniform((5, 4), -1, 1)
        b = rng.uniform((4, 3), -1, 1)
        assert np.allclose(matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-14)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_linearity(self):
        rng = Rng(2)
        a = rng.uniform((4, 4), -1, 1)
        b = rng.uniform((4, 4), -1, 1)
        c = rng.uniform((4, 4), -1, 1)
        assert np.allclose(matmul(a, b + c), matmul(a, b) + matmul(a, c), atol=1e-12)


class TestMaskedSoftmax:
    def test_uniform(self):
        out = masked_softmax(np.zeros((4, 4)), np.ones((4, 4), dtype=np.uint8))
        assert np.allclose(out, 0.25)

    def test_diagonal_band(self):
        mask = np.eye(4, dtype=np.uint8)
        out = masked_softmax(np.zeros((4, 4)), mask)
        assert np.array_equal(out, np.eye(4))

    def test_hand_softmax(self):
        scores = np.array([[0.0, np.log(2.0)], [0.0, 0.0]])
        out = masked_softmax(scores, np.ones((2, 2), dtype=np.uint8))
        assert np.allclose(out, [[1 / 3, 2 / 3], [0.5, 0.5]], atol=1e-12)

    def test_fully_masked_row_rejected(self):
        mask = np.ones((3, 3), dtype=np.uint8)
        mask[1] = 0
        with pytest.raises(InvalidMaskError):
            masked_softmax(np.zeros((3, 3)), mask)

    def test_masked_entries_exactly_zero_rows_sum_to_one(self):
        rng = Rng(3)
        mask = (rng.uniform((6, 6), 0, 1) > 0.4).astype(np.uint8)
        np.fill_diagonal(mask, 1)
        scores = rng.uniform((6, 6), -5, 5)
        out = masked_softmax(scores, mask)
        assert np.all(out[mask == 0] == 0.0)
        assert np.abs(out.sum(axis=-1) - 1).max() < 1e-12


class TestLayerNorm:
    def test_constant_collapses_to_beta(self):
        out = layer_norm(np.ones(3), np.ones(3), np.zeros(3))
        assert np.allclose(out, 0.0)

    def test_unit_variance_pair(self):
        out = layer_norm(np.array([-1.0, 1.0]), np.ones(2), np.zeros(2))
        assert np.allclose(out, [-1.0, 1.0], atol=1e-4)

    def test_direct_formula(self):
        x = np.array([0.0, 2.0])
        out = layer_norm(x, np.full(2, 2.0), np.ones(2))
        delta = 1.0 - 1.0 / np.sqrt(1.0 + 1e-5)
        expected = np.array([1 - 2 * (1 - delta), 1 + 2 * (1 - delta)])
        assert np.allclose(out, expected, atol=1e-12)

    def test_backward_matches_finite_diff(self):
        rng = Rng(4)
        x = rng.uniform((3, 5), -2, 2)
        gamma = rng.uniform((5,), 0.5, 1.5)
        beta = rng.uniform((5,), -1, 1)
        up = rng.uniform((3, 5), -1, 1)
        gx, gg, gb = layer_norm_backward(x, gamma, up)
        fd = finite_diff_grad(lambda xv: float((layer_norm(xv, gamma, beta) * up).sum()), x)
        assert rel_error(gx, fd) < 1e-7
        fdg = finite_diff_grad(lambda gv: float((layer_norm(x, gv, beta) * up).sum()), gamma)
        assert rel_error(gg, fdg) < 1e-7
        fdb = finite_diff_grad(lambda bv: float((layer_norm(x, gamma, bv) * up).sum()), beta)
        assert rel_error(gb, fdb) < 1e-7


class TestSwishGlu:
    def test_swish_values(self):
        assert swish(np.zeros(1))[0] == 0.0
        assert abs(swish(np.array([30.0]))[0] - 30.0) < 1e-6
        assert abs(swish(np.array([1.0]))[0] - 0.7310585786300049) < 1e-6

    def test_swish_backward(self):
        rng = Rng(5)
        x = rng.uniform((7,), -3, 3)
        up = rng.uniform((7,), -1, 1)
        fd = finite_diff_grad(lambda xv: float((swish(xv) * up).sum()), x)
        assert rel_error(swish_backward(x, up), fd) < 1e-7

    def test_glu_values(self):
        assert np.allclose(glu(np.array([3.0, 0.0])), 1.5)
        assert glu(np.array([0.0, 5.0]))[0] == 0.0
        assert abs(glu(np.array([2.0, 1.0]))[0] - 2 * sigmoid(np.array([1.0]))[0]) < 1e-6
        assert abs(glu(np.array([2.0, 1.0]))[0] - 1.4621171572600098) < 1e-6

    def test_glu_odd_dimension_rejected(self):
        with pytest.raises(ShapeError):
            glu(np.zeros(3))

    def test_glu_backward(self):
        rng = Rng(6)
        x = rng.uniform((2, 6), -2, 2)
        up = rng.uniform((2, 3), -1, 1)
        fd = finite_diff_grad(lambda xv: float((glu(xv) * up).sum()), x)
        assert rel_error(glu_backward(x, up), fd) < 1e-7


def naive_depthwise(x, kernel):
    t, c = x.shape
    k = kernel.shape[1]
    half = (k - 1) // 2
    out = np.zeros_like(x)
    for i in range(t):
        for j in range(c):
            for q in range(k):
                src = i + q - half
                if 0 <= src < t:
                    out[i, j] += x[src, j] * kernel[j, q]
    return out


class TestDepthwiseConv:
    def test_identity_kernel(self):
        rng = Rng(7)
        x = rng.uniform((6, 3), -1, 1)
        kernel = np.zeros((3, 5))
        kernel[:, 2] = 1.0
        assert np.allclose(depthwise_conv1d(x, kernel), x)

    def test_boundary_zero_pad(self):
        out = depthwise_conv1d(np.ones((5, 1)), np.ones((1, 3)))
        assert np.allclose(out[:, 0], [2, 3, 3, 3, 2])

    def test_matches_double_loop(self):
        rng = Rng(8)
        x = rng.uniform((7, 2), -1, 1)
        kernel = rng.uniform((2, 3), -1, 1)
        assert np.allclose(depthwise_conv1d(x, kernel), naive_depthwise(x, kernel),
                           rtol=0, atol=1e-15)

    @pytest.mark.parametrize("t", [1, 2, 5, 16])
    @pytest.mark.parametrize("c", [1, 3, 4])
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_brute_force_grid(self, t, c, k):
        rng = Rng(t * 100 + c * 10 + k)
        x = rng.uniform((t, c), -1, 1)
        kernel = rng.uniform((c, k), -1, 1)
        assert np.allclose(depthwise_conv1d(x, kernel), naive_depthwise(x, kernel),
                           rtol=0, atol=1e-15)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            depthwise_conv1d(np.zeros((4, 2)), np.zeros((2, 4)))


def scalar_lstm(x, h, c, w):
    hid = len(h)
    h2 = np.zeros(hid)
    c2 = np.zeros(hid)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    for j in range(hid):
        gates = []
        for g in range(4):
            acc = w.bias[g * hid + j]
            for p in range(len(x)):
                acc += w.w_ih[g * hid + j, p] * x[p]
            for p in range(hid):
                acc += w.w_hh[g * hid + j, p] * h[p]
            gates.append(acc)
        i, f, g_, o = gates
        c2[j] = sig(f) * c[j] + sig(i) * np.tanh(g_)
        h2[j] = sig(o) * np.tanh(c2[j])
    return h2, c2


class TestLstm:
    def test_zero_weights(self):
        w = LstmWeights(np.zeros((8, 2)), np.zeros((8, 2)), np.zeros(8))
        h, c = lstm_step(np.ones(2), np.zeros(2), np.zeros(2), w)
        assert np.all(h == 0) and np.all(c == 0)

    def test_saturated_forget_gate_preserves_cell(self):
        hid = 2
        w = LstmWeights(np.zeros((8, 2)), np.zeros((8, 2)), np.zeros(8))
        w.bias[hid:2 * hid] = 100.0    # forget gate wide open
        w.bias[:hid] = -100.0          # input gate shut
        c0 = np.array([0.3, -0.7])
        _, c1 = lstm_step(np.ones(2), np.zeros(2), c0, w)
        assert np.allclose(c1, c0, atol=1e-12)

    def test_matches_scalar_reference(self):
        rng = Rng(9)
        hid, din = 3, 3
        w = LstmWeights(rng.uniform((4 * hid, din), -1, 1),
                        rng.uniform((4 * hid, hid), -1, 1),
                        rng.uniform((4 * hid,), -1, 1))
        x = rng.uniform((din,), -1, 1)
        h = rng.uniform((hid,), -1, 1)
        c = rng.uniform((hid,), -1, 1)
        h1, c1 = lstm_step(x, h, c, w)
        h2, c2 = scalar_lstm(x, h, c, w)
        assert np.abs(h1 - h2).max() < 1e-12
        assert np.abs(c1 - c2).max() < 1e-12

    def test_shape_mismatch(self):
        w = LstmWeights(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
        with pytest.raises(ShapeError):
            lstm_step(np.ones(2), np.zeros(2), np.zeros(2), w)


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda x: float((x ** 2).sum()), np.array([1.0, 2.0]))
        assert np.allclose(g, [2.0, 4.0], atol=1e-8)

    def test_bilinear(self):
        g = finite_diff_grad(lambda x: float(x[0] * x[1]), np.array([3.0, 5.0]))
        assert np.allclose(g, [5.0, 3.0], atol=1e-8)

    def test_softmax_jacobian(self):
        rng = Rng(10)
        scores = rng.uniform((3, 3), -1, 1)
        mask = np.ones((3, 3), dtype=np.uint8)

        def entry(sv):
            return float(masked_softmax(sv, mask)[0, 1])

        fd = finite_diff_grad(entry, scores)
        p = masked_softmax(scores, mask)
        analytic = np.zeros_like(scores)
        for j in range(3):
            analytic[0, j] = p[0, 1] * ((j == 1) - p[0, j])
        assert rel_error(fd, analytic) < 1e-7

    def test_non_finite_propagates(self):
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            finite_diff_grad(lambda x: float(np.log(x[0])), np.array([1e-9]))


class TestRng:
    def test_same_seed_bit_identical(self):
        a = Rng(123).uniform((100,), -1, 1)
        b = Rng(123).uniform((100,), -1, 1)
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        assert not np.array_equal(Rng(1).raw(10), Rng(2).raw(10))

    def test_stream_continuation(self):
        # drawing twice continues the stream rather than restarting it
        r = Rng(0)
        first = r.raw(3)
        second = r.raw(3)
        whole = Rng(0).raw(6)
        assert np.array_equal(whole, np.concatenate([first, second]))
        assert not np.array_equal(first, second)

    def test_normal_moments(self):
        z = Rng(11).normal((20000,))
        assert abs(z.mean()) < 0.03
        assert abs(z.std() - 1.0) < 0.03
