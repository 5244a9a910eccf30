"""Tensor-op tests: forward values against hand oracles and every backward
against central finite differences."""

import numpy as np
import pytest

from memtopo import ops
from memtopo.errors import ArgumentError, DimensionError

RNG = np.random.default_rng(2024)
FD_H = 1e-5
FD_TOL = 1e-4


def fd_grad(f, x, h=FD_H):
    """Central finite differences of scalar f at array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / denom


class TestConv2d:
    def test_scalar_kernel_scales(self):
        x = RNG.random((2, 1, 4, 4))
        k = np.full((1, 1, 1, 1), 2.0)
        np.testing.assert_allclose(ops.conv2d_forward(x, k), 2.0 * x)

    def test_hand_dot_product(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        k = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
        assert ops.conv2d_forward(x, k)[0, 0, 0, 0] == 5.0

    def test_14_to_12_shape(self):
        x = np.zeros((1, 1, 14, 14))
        k = np.zeros((64, 1, 3, 3))
        assert ops.conv2d_forward(x, k).shape == (1, 64, 12, 12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ops.conv2d_forward(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)))

    def test_zero_upstream_gradient(self):
        x = RNG.random((1, 2, 5, 5))
        k = RNG.random((3, 2, 3, 3))
        dy = np.zeros((1, 3, 3, 3))
        dx, dk = ops.conv2d_backward(x, k, dy)
        assert not dx.any() and not dk.any()

    def test_one_by_one_kernel_closed_form(self):
        x = RNG.random((2, 1, 3, 3))
        k = RNG.random((1, 1, 1, 1))
        dy = RNG.random((2, 1, 3, 3))
        _, dk = ops.conv2d_backward(x, k, dy)
        np.testing.assert_allclose(dk[0, 0, 0, 0], np.sum(x * dy), rtol=1e-12)

    @pytest.mark.parametrize("trial", range(20))
    def test_fd_gradients(self, trial):
        rng = np.random.default_rng(trial)
        x = rng.random((2, 2, 5, 4))
        k = rng.normal(size=(3, 2, 3, 3))
        dy = rng.normal(size=(2, 3, 3, 2))

        def loss():
            return float(np.sum(ops.conv2d_forward(x, k) * dy))

        dx, dk = ops.conv2d_backward(x, k, dy)
        assert rel_err(dx, fd_grad(loss, x)) <= FD_TOL
        assert rel_err(dk, fd_grad(loss, k)) <= FD_TOL


class TestMaxPool:
    def test_single_block(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        y, _ = ops.maxpool2x2_forward(x)
        assert y[0, 0, 0, 0] == 4.0

    def test_tie_routes_to_first_index(self):
        x = np.ones((1, 1, 2, 2))
        y, argmax = ops.maxpool2x2_forward(x)
        assert argmax[0, 0, 0, 0] == 0
        dx = ops.maxpool2x2_backward(np.ones((1, 1, 1, 1)), argmax, x.shape)
        assert dx[0, 0, 0, 0] == 1.0 and dx.sum() == 1.0

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError):
            ops.maxpool2x2_forward(np.zeros((1, 1, 3, 4)))

    @pytest.mark.parametrize("trial", range(20))
    def test_fd_gradients_away_from_ties(self, trial):
        rng = np.random.default_rng(100 + trial)
        # well-separated values keep FD away from the tie points
        x = rng.permutation(np.arange(64.0)).reshape(1, 1, 8, 8) / 8.0
        dy = rng.normal(size=(1, 1, 4, 4))

        def loss():
            y, _ = ops.maxpool2x2_forward(x)
            return float(np.sum(y * dy))

        _, argmax = ops.maxpool2x2_forward(x)
        dx = ops.maxpool2x2_backward(dy, argmax, x.shape)
        assert rel_err(dx, fd_grad(loss, x)) <= FD_TOL


class TestFullyConnected:
    def test_identity(self):
        x = RNG.random((3, 4))
        np.testing.assert_allclose(ops.fc_forward(x, np.eye(4)), x)

    def test_zero_weights(self):
        assert not ops.fc_forward(RNG.random((2, 5)), np.zeros((3, 5))).any()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.fc_forward(np.zeros((2, 5)), np.zeros((3, 4)))

    @pytest.mark.parametrize("trial", range(20))
    def test_fd_gradients(self, trial):
        rng = np.random.default_rng(200 + trial)
        x = rng.normal(size=(3, 6))
        W = rng.normal(size=(4, 6))
        dy = rng.normal(size=(3, 4))

        def loss():
            return float(np.sum(ops.fc_forward(x, W) * dy))

        dx, dW = ops.fc_backward(x, W, dy)
        assert rel_err(dx, fd_grad(loss, x)) <= FD_TOL
        assert rel_err(dW, fd_grad(loss, W)) <= FD_TOL


class TestRecurrentStep:
    def test_zero_weights_zero_state(self):
        x = RNG.random((2, 3))
        h = RNG.random((2, 4))
        out = ops.rnn_step(x, h, np.zeros((4, 3)), np.zeros((4, 4)))
        assert not out.any()

    def test_base_case_zero_hidden(self):
        x = RNG.random((2, 3))
        W_ih = RNG.normal(size=(4, 3))
        W_hh = RNG.normal(size=(4, 4))
        h0 = np.zeros((2, 4))
        np.testing.assert_allclose(ops.rnn_step(x, h0, W_ih, W_hh),
                                   np.tanh(x @ W_ih.T))

    @pytest.mark.parametrize("trial", range(20))
    def test_fd_through_four_steps(self, trial):
        rng = np.random.default_rng(300 + trial)
        xs = rng.normal(size=(4, 2, 3)) * 0.5
        W_ih = rng.normal(size=(3, 3)) * 0.5
        W_hh = rng.normal(size=(3, 3)) * 0.5
        dy = rng.normal(size=(2, 3))

        def loss():
            h = np.zeros((2, 3))
            hs = []
            for t in range(4):
                h = ops.rnn_step(xs[t], h, W_ih, W_hh)
                hs.append(h)
            return float(np.sum(ops.rnn_average(hs) * dy))

        # manual BPTT
        h = np.zeros((2, 3))
        hs = []
        for t in range(4):
            h = ops.rnn_step(xs[t], h, W_ih, W_hh)
            hs.append(h)
        dW_ih = np.zeros_like(W_ih)
        dW_hh = np.zeros_like(W_hh)
        carry = np.zeros((2, 3))
        for t in range(3, -1, -1):
            dh = dy / 4 + carry
            da = dh * (1 - hs[t] ** 2)
            h_prev = hs[t - 1] if t > 0 else np.zeros((2, 3))
            dW_ih += da.T @ xs[t]
            dW_hh += da.T @ h_prev
            carry = da @ W_hh
        assert rel_err(dW_ih, fd_grad(loss, W_ih)) <= FD_TOL
        assert rel_err(dW_hh, fd_grad(loss, W_hh)) <= FD_TOL


class TestRnnAverage:
    def test_mean_of_equal_states(self):
        h = RNG.random((2, 3))
        np.testing.assert_allclose(ops.rnn_average([h, h, h]), h)

    def test_antisymmetric_states_cancel(self):
        h1 = RNG.random((2, 3))
        h3 = RNG.random((2, 3))
        out = ops.rnn_average([h1, -h1, h3, -h3])
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_matches_direct_sum(self):
        hs = [RNG.random((3, 4)) for _ in range(4)]
        np.testing.assert_array_equal(ops.rnn_average(hs),
                                      (hs[0] + hs[1] + hs[2] + hs[3]) / 4)

    def test_empty_rejected(self):
        with pytest.raises(ArgumentError):
            ops.rnn_average([])


class TestSoftmaxXent:
    def test_uniform_logits_log_c(self):
        for c in (2, 5, 10):
            losses, _ = ops.softmax_xent_forward(np.zeros((3, c)),
                                                 np.zeros(3, dtype=int))
            np.testing.assert_allclose(losses, np.log(c), rtol=1e-12)

    def test_gradient_sums_to_zero_per_sample(self):
        logits = RNG.normal(size=(6, 10))
        labels = RNG.integers(0, 10, size=6)
        _, probs = ops.softmax_xent_forward(logits, labels)
        d = ops.softmax_xent_backward(probs, labels)
        np.testing.assert_allclose(d.sum(axis=1), 0.0, atol=1e-12)

    def test_invalid_label(self):
        with pytest.raises(ArgumentError):
            ops.softmax_xent_forward(np.zeros((2, 3)), np.array([0, 3]))

    def test_numerical_stability(self):
        logits = np.array([[1e4, -1e4, 0.0]])
        losses, probs = ops.softmax_xent_forward(logits, np.array([0]))
        assert np.isfinite(losses).all() and np.isfinite(probs).all()

    @pytest.mark.parametrize("trial", range(20))
    def test_fd_gradient(self, trial):
        rng = np.random.default_rng(400 + trial)
        logits = rng.normal(size=(3, 5))
        labels = rng.integers(0, 5, size=3)

        def loss():
            losses, _ = ops.softmax_xent_forward(logits, labels)
            return float(losses.sum())

        _, probs = ops.softmax_xent_forward(logits, labels)
        d = ops.softmax_xent_backward(probs, labels)
        assert rel_err(d, fd_grad(loss, logits, h=1e-6)) <= 1e-6


class TestEltwise:
    def test_relu_fd(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 4)) + 0.05  # away from the kink
        dy = rng.normal(size=(4, 4))

        def loss():
            return float(np.sum(ops.relu_forward(x) * dy))

        assert rel_err(ops.relu_backward(x, dy), fd_grad(loss, x)) <= FD_TOL

    def test_tanh_fd(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 4))
        dy = rng.normal(size=(4, 4))

        def loss():
            return float(np.sum(ops.tanh_forward(x) * dy))

        y = ops.tanh_forward(x)
        assert rel_err(ops.tanh_backward(y, dy), fd_grad(loss, x)) <= FD_TOL

    def test_crop_roundtrip(self):
        x = RNG.random((2, 3, 5, 7))
        y = ops.crop_to_even_forward(x)
        assert y.shape == (2, 3, 4, 6)
        dx = ops.crop_to_even_backward(np.ones_like(y), x.shape)
        assert dx.shape == x.shape
        assert dx[:, :, :4, :6].all() and not dx[:, :, 4:, :].any()


class TestDeterminism:
    def test_forward_backward_bit_reproducible(self):
        rng = np.random.default_rng(5)
        x = rng.random((2, 2, 6, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        dy = rng.normal(size=(2, 3, 4, 4))
        y1 = ops.conv2d_forward(x, k)
        y2 = ops.conv2d_forward(x.copy(), k.copy())
        assert np.array_equal(y1, y2)
        g1 = ops.conv2d_backward(x, k, dy)
        g2 = ops.conv2d_backward(x.copy(), k.copy(), dy.copy())
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])
